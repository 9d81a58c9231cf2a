#include "ftb/barrier.hpp"
#include "ftb/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ftb;

namespace {

// Plain re-implementation of the forward pass from the documented parameter layout.
double reference_forward(const BarrierNetwork& net, const Vec& x) {
    const auto& sizes = net.layer_sizes();
    const Vec& th = net.params();
    Vec a = x;
    for (int l = 0; l < net.layer_count(); ++l) {
        const int in = sizes[l], out = sizes[l + 1];
        Vec z(out);
        for (int r = 0; r < out; ++r) {
            double s = th[net.bias_offset(l) + r];
            for (int c = 0; c < in; ++c) s += th[net.weight_offset(l) + r * in + c] * a[c];
            z[r] = s;
        }
        a = (l + 1 < net.layer_count()) ? Vec(z.array().tanh()) : z;
    }
    return a[0];
}

Vec random_point(CounterRng& rng, int n, double scale = 1.5) {
    Vec x(n);
    for (int i = 0; i < n; ++i) x[i] = rng.uniform(-scale, scale);
    return x;
}

BarrierNetwork random_net(int n, std::uint64_t seed) {
    auto net = BarrierNetwork::random({n, 16, 16, 1}, seed);
    CounterRng rng(seed, Stream::NetworkInit);
    for (int k = 0; k < net.param_count(); ++k) net.params()[k] += 0.1 * rng.normal();  // nonzero biases too
    return net;
}

}  // namespace

TEST(Barrier, ParamCountAndLayout) {
    BarrierNetwork net({3, 32, 32, 1});
    EXPECT_EQ(net.param_count(), 3 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
    EXPECT_EQ(net.weight_offset(0), 0);
    EXPECT_EQ(net.bias_offset(0), 96);
    EXPECT_EQ(net.forward(Vec::Zero(3)), 0.0);
}

TEST(Barrier, ForwardMatchesReference) {
    CounterRng rng(1, Stream::Falsifier);
    for (int n : {3, 6}) {
        const auto net = random_net(n, 10 + n);
        Mat X(n, 20);
        for (int k = 0; k < 20; ++k) X.col(k) = random_point(rng, n);
        const Vec batch = net.forward_batch(X);
        for (int k = 0; k < 20; ++k) {
            const double ref = reference_forward(net, X.col(k));
            EXPECT_NEAR(net.forward(X.col(k)), ref, 1e-13);
            EXPECT_NEAR(batch[k], ref, 1e-13);
        }
    }
}

TEST(Barrier, InputDerivativesMatchFiniteDifferences) {
    CounterRng rng(2, Stream::Falsifier);
    for (int n : {3, 6}) {
        for (int trial = 0; trial < 100; ++trial) {
            const auto net = random_net(n, 1000 * n + trial);
            const Vec x = random_point(rng, n);
            const auto d = net.derivatives(x);
            EXPECT_DOUBLE_EQ(d.value, net.forward(x));
            const double h = 1e-5;
            for (int i = 0; i < n; ++i) {
                Vec e = Vec::Zero(n);
                e[i] = h;
                const double g = (net.forward(x + e) - net.forward(x - e)) / (2 * h);
                ASSERT_NEAR(d.grad[i], g, 1e-6);
                const Vec hc = (net.input_gradient(x + e) - net.input_gradient(x - e)) / (2 * h);
                for (int j = 0; j < n; ++j) ASSERT_NEAR(d.hess(j, i), hc[j], 1e-5);
            }
            EXPECT_LE((d.hess - d.hess.transpose()).cwiseAbs().maxCoeff(), 1e-14);
        }
    }
}

TEST(Barrier, ParamGradientOfMixedFunctional) {
    CounterRng rng(3, Stream::Falsifier);
    for (int n : {3, 6}) {
        auto net = random_net(n, 77 + n);
        const Vec x = random_point(rng, n);
        const double sv = rng.normal();
        const Vec sg = rng.normals(n);
        Mat Sh(n, n);
        for (int i = 0; i < n; ++i) Sh.col(i) = rng.normals(n);
        auto functional = [&](const BarrierNetwork& b) {
            const auto d = b.derivatives(x);
            return sv * d.value + sg.dot(d.grad) + (Sh.array() * d.hess.array()).sum();
        };
        const Vec g = net.param_gradient(x, sv, sg, Sh);
        const double h = 1e-6;
        for (int k = 0; k < net.param_count(); ++k) {
            auto plus = net, minus = net;
            plus.params()[k] += h;
            minus.params()[k] -= h;
            const double fd = (functional(plus) - functional(minus)) / (2 * h);
            ASSERT_NEAR(g[k], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "parameter " << k;
        }
    }
}

TEST(Barrier, BatchValueGradientMatchesPerSample) {
    CounterRng rng(4, Stream::Falsifier);
    const auto net = random_net(3, 5);
    Mat X(3, 8);
    Vec seeds(8);
    Vec expect = Vec::Zero(net.param_count());
    for (int k = 0; k < 8; ++k) {
        X.col(k) = random_point(rng, 3);
        seeds[k] = rng.normal();
        net.accumulate_param_gradient(X.col(k), seeds[k], Vec::Zero(3), Mat(), expect);
    }
    Vec got = Vec::Zero(net.param_count());
    net.accumulate_value_param_gradient_batch(X, seeds, got);
    EXPECT_LE((got - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Barrier, BinaryRoundTripIsExact) {
    const auto net = random_net(6, 9);
    const auto path = std::filesystem::temp_directory_path() / "ftb_test_model.bin";
    net.save_binary(path);
    const auto back = BarrierNetwork::load_binary(path);
    EXPECT_EQ(back.layer_sizes(), net.layer_sizes());
    EXPECT_TRUE((back.params().array() == net.params().array()).all());

    // flipping the magic must be rejected
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.put('X');
    }
    EXPECT_THROW(BarrierNetwork::load_binary(path), Error);
    std::filesystem::resize_file(path, 20);
    EXPECT_THROW(BarrierNetwork::load_binary(path), Error);
    std::filesystem::remove(path);
}

TEST(Barrier, RandomInitIsSeeded) {
    const auto a = BarrierNetwork::random({3, 8, 1}, 1);
    const auto b = BarrierNetwork::random({3, 8, 1}, 1);
    const auto c = BarrierNetwork::random({3, 8, 1}, 2);
    EXPECT_EQ(a.params(), b.params());
    EXPECT_NE(a.params(), c.params());
}

namespace {

// b(x) ~ x_0 through one very flat tanh unit: zero set is the plane x_0 = 0
// and |grad b| = 1, so the level shift for radius gamma is gamma.
BarrierNetwork planar_net() {
    BarrierNetwork net({2, 1, 1});
    const double eps = 1e-3;
    net.params()[net.weight_offset(0)] = eps;
    net.params()[net.weight_offset(1)] = 1.0 / eps;
    return net;
}

}  // namespace

TEST(Barrier, BbarOfPlanarBarrierEqualsRadius) {
    const auto net = planar_net();
    StateBox box{Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)};
    const auto est = estimate_bbar(net, 0.1, box);
    EXPECT_TRUE(est.boundary_found);
    EXPECT_NEAR(est.value, 0.1, 0.005);
    EXPECT_GE(est.value, est.sampled_max);
}

TEST(Barrier, BbarIsMonotoneInGamma) {
    const auto net = random_net(3, 21);
    StateBox box{Vec::Constant(3, -2.0), Vec::Constant(3, 2.0)};
    const auto ests = estimate_bbar_multi(net, {0.0, 0.01, 0.05, 0.2}, box);
    ASSERT_EQ(ests.size(), 4u);
    EXPECT_EQ(ests[0].value, 0.0);
    for (std::size_t k = 1; k < ests.size(); ++k) EXPECT_GE(ests[k].value, ests[k - 1].value);
}

TEST(Barrier, BbarWithoutZeroSet) {
    BarrierNetwork net({2, 1, 1});
    net.params()[net.bias_offset(1)] = -1.0;  // b = -1 everywhere
    StateBox box{Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)};
    const auto est = estimate_bbar(net, 0.1, box);
    EXPECT_FALSE(est.boundary_found);
    EXPECT_EQ(est.value, 0.0);
}

TEST(Barrier, BbarIsDeterministic) {
    const auto net = random_net(3, 22);
    StateBox box{Vec::Constant(3, -2.0), Vec::Constant(3, 2.0)};
    const auto a = estimate_bbar(net, 0.05, box);
    const auto b = estimate_bbar(net, 0.05, box);
    EXPECT_EQ(a.value, b.value);
}

TEST(Barrier, MarginsShift) {
    BarrierMargins m{{0.1, 0.2}, {0.3, 0.5}};
    EXPECT_DOUBLE_EQ(m.shifted(1.0, 1), 0.5);
    EXPECT_DOUBLE_EQ(m.max_bbar(), 0.5);
}
