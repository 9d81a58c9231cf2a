#include "ftb/barrier.hpp"

#include "ftb/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace ftb {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMat>;
using RowMap = Eigen::Map<RowMat>;

// Per hidden layer quantities of the second-order forward sweep.
struct HiddenTape {
    Vec a, s1, s2;
    Mat Jz, J;  // h x n
    Mat Hz, H;  // h x n*n, each row a column-major n x n block
};

constexpr char kMagic[8] = {'F', 'T', 'B', 'N', 'E', 'T', '\0', '\0'};

}  // namespace

BarrierNetwork::BarrierNetwork(std::vector<int> layer_sizes, Activation act) : sizes_(std::move(layer_sizes)), act_(act) {
    if (sizes_.size() < 2) throw ConfigError("barrier network needs at least an input and an output layer");
    if (sizes_.back() != 1) throw ConfigError("barrier network output dimension must be 1");
    for (int s : sizes_)
        if (s < 1) throw ConfigError("layer sizes must be positive");
    build_offsets();
    theta_ = Vec::Zero(offsets_.back());
}

void BarrierNetwork::build_offsets() {
    offsets_.assign(1, 0);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l)
        offsets_.push_back(offsets_.back() + sizes_[l + 1] * sizes_[l] + sizes_[l + 1]);
}

BarrierNetwork BarrierNetwork::random(std::vector<int> layer_sizes, std::uint64_t seed) {
    BarrierNetwork net(std::move(layer_sizes));
    CounterRng rng(seed, Stream::NetworkInit);
    for (int l = 0; l < net.layer_count(); ++l) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(net.sizes_[l]));
        const int count = net.sizes_[l + 1] * net.sizes_[l];
        for (int k = 0; k < count; ++k) net.theta_[net.weight_offset(l) + k] = scale * rng.normal();
    }
    return net;
}

double BarrierNetwork::forward(const Vec& x) const {
    Vec a = x;
    const int L = layer_count();
    for (int l = 0; l < L; ++l) {
        ConstRowMap W(theta_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
        Eigen::Map<const Vec> b(theta_.data() + bias_offset(l), sizes_[l + 1]);
        Vec z = W * a + b;
        a = (l + 1 < L) ? Vec(z.array().tanh()) : z;
    }
    return a[0];
}

Vec BarrierNetwork::forward_batch(const Mat& X) const {
    Mat A = X;
    const int L = layer_count();
    for (int l = 0; l < L; ++l) {
        ConstRowMap W(theta_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
        Eigen::Map<const Vec> b(theta_.data() + bias_offset(l), sizes_[l + 1]);
        Mat Z = W * A;
        Z.colwise() += b;
        if (l + 1 < L)
            A = Z.array().tanh();
        else
            A = std::move(Z);
    }
    return A.row(0).transpose();
}

namespace {

// Runs the second-order forward sweep and returns the tapes of hidden layers.
std::vector<HiddenTape> forward_taylor(const BarrierNetwork& net, const Vec& x, BarrierDerivatives* out) {
    const auto& sizes = net.layer_sizes();
    const int n = sizes.front();
    const int nn = n * n;
    const int L = net.layer_count();
    const Vec& theta = net.params();
    std::vector<HiddenTape> tape(static_cast<std::size_t>(L - 1));

    Vec a_prev = x;
    for (int l = 0; l + 1 < L; ++l) {
        const int h = sizes[l + 1];
        ConstRowMap W(theta.data() + net.weight_offset(l), h, sizes[l]);
        Eigen::Map<const Vec> b(theta.data() + net.bias_offset(l), h);
        HiddenTape& t = tape[static_cast<std::size_t>(l)];
        const Vec z = W * a_prev + b;
        t.a = z.array().tanh();
        t.s1 = 1.0 - t.a.array().square();
        t.s2 = -2.0 * t.a.array() * t.s1.array();
        if (l == 0) {
            t.Jz = W;
            t.Hz = Mat::Zero(h, nn);
        } else {
            const HiddenTape& p = tape[static_cast<std::size_t>(l - 1)];
            t.Jz.noalias() = W * p.J;
            t.Hz.noalias() = W * p.H;
        }
        t.J = t.s1.asDiagonal() * t.Jz;
        t.H = t.s1.asDiagonal() * t.Hz;
        for (int k = 0; k < h; ++k) {
            const double c = t.s2[k];
            for (int col = 0; col < n; ++col)
                for (int row = 0; row < n; ++row) t.H(k, col * n + row) += c * (t.Jz(k, col) * t.Jz(k, row));
        }
        a_prev = t.a;
    }

    if (out) {
        const int last = L - 1;
        ConstRowMap W(theta.data() + net.weight_offset(last), 1, sizes[last]);
        const double b = theta[net.bias_offset(last)];
        if (L == 1) {
            out->value = (W * x)(0) + b;
            out->grad = W.row(0).transpose();
            out->hess = Mat::Zero(n, n);
        } else {
            const HiddenTape& t = tape.back();
            out->value = (W * t.a)(0) + b;
            out->grad = (W * t.J).transpose();
            const Vec hv = (W * t.H).transpose();
            const Eigen::Map<const Mat> hm(hv.data(), n, n);
            out->hess = 0.5 * (hm + hm.transpose());
        }
    }
    return tape;
}

}  // namespace

BarrierDerivatives BarrierNetwork::derivatives(const Vec& x) const {
    BarrierDerivatives d;
    forward_taylor(*this, x, &d);
    return d;
}

Vec BarrierNetwork::input_gradient(const Vec& x) const { return derivatives(x).grad; }

Mat BarrierNetwork::input_hessian(const Vec& x) const { return derivatives(x).hess; }

void BarrierNetwork::accumulate_param_gradient(const Vec& x, double sv, const Vec& sg, const Mat& sh, Vec& out) const {
    const int n = input_dim();
    const int nn = n * n;
    const int L = layer_count();
    const bool use_hess = sh.size() == nn;
    const bool use_grad = sg.size() == n;
    const auto tape = forward_taylor(*this, x, nullptr);

    const int last = L - 1;
    ConstRowMap Wout(theta_.data() + weight_offset(last), 1, sizes_[last]);
    RowMap gWout(out.data() + weight_offset(last), 1, sizes_[last]);
    out[bias_offset(last)] += sv;

    Vec sh_vec;
    if (use_hess) sh_vec = Eigen::Map<const Vec>(sh.data(), nn);

    if (L == 1) {
        gWout.row(0) += sv * x.transpose();
        if (use_grad) gWout.row(0) += sg.transpose();
        return;
    }

    const HiddenTape& top = tape.back();
    gWout.row(0) += sv * top.a.transpose();
    if (use_grad) gWout.row(0) += (top.J * sg).transpose();
    if (use_hess) gWout.row(0) += (top.H * sh_vec).transpose();

    // adjoints of the top hidden layer outputs
    Vec abar = sv * Wout.row(0).transpose();
    Mat Jbar = use_grad ? Mat(Wout.row(0).transpose() * sg.transpose()) : Mat::Zero(sizes_[last], n);
    Mat Hbar = use_hess ? Mat(Wout.row(0).transpose() * sh_vec.transpose()) : Mat::Zero(sizes_[last], nn);

    for (int l = L - 2; l >= 0; --l) {
        const HiddenTape& t = tape[static_cast<std::size_t>(l)];
        const int h = sizes_[l + 1];
        Vec zbar(h);
        Mat Jzbar(h, n);
        Mat Hzbar = t.s1.asDiagonal() * Hbar;
        for (int k = 0; k < h; ++k) {
            const double a = t.a[k], s1 = t.s1[k], s2 = t.s2[k];
            const double s3 = -2.0 * s1 * s1 + 4.0 * a * a * s1;
            const auto jz = t.Jz.row(k).transpose();
            const double s1bar = Jbar.row(k).dot(t.Jz.row(k)) + Hbar.row(k).dot(t.Hz.row(k));
            Mat hbk(n, n);
            for (int c = 0; c < n; ++c)
                for (int r = 0; r < n; ++r) hbk(r, c) = Hbar(k, c * n + r);
            const double s2bar = jz.dot(hbk * jz);
            Jzbar.row(k) = s1 * Jbar.row(k) + s2 * ((hbk + hbk.transpose()) * jz).transpose();
            zbar[k] = s1 * abar[k] + s2 * s1bar + s3 * s2bar;
        }

        RowMap gW(out.data() + weight_offset(l), h, sizes_[l]);
        Eigen::Map<Vec> gb(out.data() + bias_offset(l), h);
        gb += zbar;
        if (l == 0) {
            gW.noalias() += zbar * x.transpose();
            gW += Jzbar;  // J_prev is the identity
        } else {
            const HiddenTape& p = tape[static_cast<std::size_t>(l - 1)];
            gW.noalias() += zbar * p.a.transpose();
            gW.noalias() += Jzbar * p.J.transpose();
            gW.noalias() += Hzbar * p.H.transpose();
            ConstRowMap W(theta_.data() + weight_offset(l), h, sizes_[l]);
            abar = W.transpose() * zbar;
            Jbar = W.transpose() * Jzbar;
            Hbar = W.transpose() * Hzbar;
        }
    }
}

Vec BarrierNetwork::param_gradient(const Vec& x, double sv, const Vec& sg, const Mat& sh) const {
    Vec out = Vec::Zero(param_count());
    accumulate_param_gradient(x, sv, sg, sh, out);
    return out;
}

void BarrierNetwork::accumulate_value_param_gradient_batch(const Mat& X, const Vec& seeds, Vec& out) const {
    const int L = layer_count();
    std::vector<Mat> acts;
    acts.reserve(static_cast<std::size_t>(L));
    acts.push_back(X);
    for (int l = 0; l + 1 < L; ++l) {
        ConstRowMap W(theta_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
        Eigen::Map<const Vec> b(theta_.data() + bias_offset(l), sizes_[l + 1]);
        Mat Z = W * acts.back();
        Z.colwise() += b;
        acts.push_back(Z.array().tanh());
    }
    // delta = dLoss/dz for the current layer, one column per sample
    Mat delta = seeds.transpose();
    for (int l = L - 1; l >= 0; --l) {
        RowMap gW(out.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
        Eigen::Map<Vec> gb(out.data() + bias_offset(l), sizes_[l + 1]);
        gW.noalias() += delta * acts[static_cast<std::size_t>(l)].transpose();
        gb += delta.rowwise().sum();
        if (l > 0) {
            ConstRowMap W(theta_.data() + weight_offset(l), sizes_[l + 1], sizes_[l]);
            const Mat& a = acts[static_cast<std::size_t>(l)];
            Mat back = W.transpose() * delta;
            delta = back.array() * (1.0 - a.array().square());
        }
    }
}

void BarrierNetwork::save_binary(const std::filesystem::path& path) const {
    static_assert(std::endian::native == std::endian::little, "model format is little-endian");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open model file for writing: " + path.string());
    auto put_u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    os.write(kMagic, sizeof kMagic);
    put_u32(kFormatVersion);
    put_u32(static_cast<std::uint32_t>(act_));
    put_u32(static_cast<std::uint32_t>(sizes_.size()));
    for (int s : sizes_) put_u32(static_cast<std::uint32_t>(s));
    const std::uint64_t count = static_cast<std::uint64_t>(theta_.size());
    os.write(reinterpret_cast<const char*>(&count), sizeof count);
    os.write(reinterpret_cast<const char*>(theta_.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!os) throw Error("failed writing model file: " + path.string());
}

BarrierNetwork BarrierNetwork::load_binary(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open model file: " + path.string());
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw Error("not a barrier model file: " + path.string());
    auto get_u32 = [&]() {
        std::uint32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof v);
        return v;
    };
    const std::uint32_t version = get_u32();
    if (version != kFormatVersion) throw Error("unsupported model format version " + std::to_string(version));
    const auto act = static_cast<Activation>(get_u32());
    if (act != Activation::Tanh) throw Error("unknown activation tag in model file");
    const std::uint32_t count_layers = get_u32();
    if (count_layers < 2 || count_layers > 64) throw Error("corrupt model header");
    std::vector<int> sizes;
    for (std::uint32_t k = 0; k < count_layers; ++k) sizes.push_back(static_cast<int>(get_u32()));
    BarrierNetwork net(sizes, act);
    std::uint64_t count = 0;
    is.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!is || count != static_cast<std::uint64_t>(net.param_count())) throw Error("model parameter count mismatch");
    is.read(reinterpret_cast<char*>(net.theta_.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!is) throw Error("truncated model file: " + path.string());
    return net;
}

std::string BarrierNetwork::to_json() const {
    nlohmann::json j;
    j["format_version"] = kFormatVersion;
    j["activation"] = "tanh";
    j["layer_sizes"] = sizes_;
    nlohmann::json layers = nlohmann::json::array();
    for (int l = 0; l < layer_count(); ++l) {
        nlohmann::json layer;
        std::vector<std::vector<double>> w(static_cast<std::size_t>(sizes_[l + 1]));
        for (int r = 0; r < sizes_[l + 1]; ++r)
            for (int c = 0; c < sizes_[l]; ++c) w[static_cast<std::size_t>(r)].push_back(theta_[weight_offset(l) + r * sizes_[l] + c]);
        std::vector<double> b(theta_.data() + bias_offset(l), theta_.data() + bias_offset(l) + sizes_[l + 1]);
        layer["weights"] = w;
        layer["biases"] = b;
        layers.push_back(layer);
    }
    j["layers"] = layers;
    return j.dump(2);
}

double BarrierMargins::max_bbar() const {
    double m = 0.0;
    for (double b : bbar) m = std::max(m, b);
    return m;
}

// ---------------------------------------------------------------------------
// b_bar estimation

namespace {

struct ZeroSet {
    std::vector<Vec> points;
};

ZeroSet locate_zero_level(const BarrierNetwork& net, const StateBox& box, int res) {
    const int n = box.dim();
    long total = 1;
    for (int d = 0; d < n; ++d) total *= res;
    Mat nodes(n, total);
    std::vector<int> idx(static_cast<std::size_t>(n), 0);
    const Vec step = (box.hi - box.lo) / static_cast<double>(res - 1);
    for (long k = 0; k < total; ++k) {
        long rem = k;
        for (int d = 0; d < n; ++d) {
            idx[static_cast<std::size_t>(d)] = static_cast<int>(rem % res);
            rem /= res;
        }
        for (int d = 0; d < n; ++d) nodes(d, k) = box.lo[d] + step[d] * idx[static_cast<std::size_t>(d)];
    }
    const Vec values = net.forward_batch(nodes);

    ZeroSet zs;
    long stride = 1;
    for (int d = 0; d < n; ++d) {
        for (long k = 0; k < total; ++k) {
            if ((k / stride) % res == res - 1) continue;
            const long k2 = k + stride;
            double fa = values[k], fb = values[k2];
            if (fa == 0.0) {
                // node exactly on the level set; counted once along axis 0
                if (d == 0) zs.points.push_back(nodes.col(k));
                continue;
            }
            if ((fa > 0.0) == (fb > 0.0) || fb == 0.0) continue;
            // Illinois regula falsi on the edge
            double ta = 0.0, tb = 1.0;
            Vec xa = nodes.col(k), xb = nodes.col(k2);
            Vec x = xa;
            int side = 0;
            for (int it = 0; it < 100; ++it) {
                const double t = (ta * fb - tb * fa) / (fb - fa);
                x = xa + t * (xb - xa);
                const double fx = net.forward(x);
                if (std::abs(fx) <= 1e-8) break;
                if ((fx > 0.0) == (fb > 0.0)) {
                    tb = t;
                    fb = fx;
                    if (side == -1) fa *= 0.5;
                    side = -1;
                } else {
                    ta = t;
                    fa = fx;
                    if (side == 1) fb *= 0.5;
                    side = 1;
                }
            }
            zs.points.push_back(x);
        }
        stride *= res;
    }
    return zs;
}

}  // namespace

std::vector<BbarEstimate> estimate_bbar_multi(const BarrierNetwork& net, const std::vector<double>& gammas,
                                              const StateBox& box, const BbarOptions& opt) {
    for (double g : gammas)
        if (!(g >= 0.0)) throw ConfigError("gamma must be non-negative");
    if (opt.resolution < 8) throw ConfigError("b_bar grid resolution must be at least 8 per axis");
    std::vector<BbarEstimate> out(gammas.size());
    const ZeroSet zs = locate_zero_level(net, box, opt.resolution);
    if (zs.points.empty()) return out;

    double grad_max = 0.0;
    for (const Vec& p : zs.points) grad_max = std::max(grad_max, net.input_gradient(p).norm());

    // Deterministic strided subset of boundary points for the ball sampling.
    std::vector<const Vec*> chosen;
    const std::size_t cap = static_cast<std::size_t>(std::max(1, opt.max_sampled_points));
    const std::size_t stride = std::max<std::size_t>(1, (zs.points.size() + cap - 1) / cap);
    for (std::size_t k = 0; k < zs.points.size(); k += stride) chosen.push_back(&zs.points[k]);

    const int n = box.dim();
    CounterRng rng(opt.seed, Stream::Bbar);
    Mat dirs(n, opt.directions);
    for (int d = 0; d < opt.directions; ++d) {
        Vec v = rng.normals(n);
        dirs.col(d) = v / v.norm();
    }
    std::vector<double> radii;
    for (double g : gammas)
        for (int r = 1; r <= opt.radii; ++r) radii.push_back(g * r / opt.radii);
    std::sort(radii.begin(), radii.end());
    radii.erase(std::unique(radii.begin(), radii.end()), radii.end());

    // best_at[r] = largest b sampled at radius radii[r]
    std::vector<double> best_at(radii.size(), 0.0);
    Mat batch(n, static_cast<Eigen::Index>(opt.directions) * static_cast<Eigen::Index>(radii.size()));
    for (const Vec* p : chosen) {
        Eigen::Index col = 0;
        for (double r : radii)
            for (int d = 0; d < opt.directions; ++d) batch.col(col++) = *p + r * dirs.col(d);
        const Vec vals = net.forward_batch(batch);
        for (std::size_t r = 0; r < radii.size(); ++r)
            best_at[r] = std::max(best_at[r], vals.segment(static_cast<Eigen::Index>(r) * opt.directions, opt.directions).maxCoeff());
    }

    for (std::size_t g = 0; g < gammas.size(); ++g) {
        BbarEstimate& e = out[g];
        e.boundary_found = true;
        e.zero_points = static_cast<int>(zs.points.size());
        if (gammas[g] == 0.0) continue;
        double sampled = 0.0;
        for (std::size_t r = 0; r < radii.size(); ++r)
            if (radii[r] <= gammas[g]) sampled = std::max(sampled, best_at[r]);
        e.sampled_max = sampled;
        e.lipschitz_floor = gammas[g] * grad_max;
        e.value = std::max({0.0, sampled, e.lipschitz_floor});
    }
    return out;
}

BbarEstimate estimate_bbar(const BarrierNetwork& net, double gamma, const StateBox& box, const BbarOptions& opt) {
    return estimate_bbar_multi(net, {gamma}, box, opt).front();
}

}  // namespace ftb
