#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mcan/grad_ops.hpp"
#include "mcan/tensor.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace mcan;

namespace {

std::mt19937_64 rng(7771);

TensorD random_tensor(Shape s, double lo = -1.0, double hi = 1.0) {
    TensorD t(s);
    for (auto& v : t.data)
        v = lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    return t;
}

double dot(const TensorD& a, const TensorD& b) {
    double s = 0;
    for (int64_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

// max |analytic - fd| over all elements of `x`, h = 1e-6 in double
double fd_check(TensorD& x, const std::function<double()>& objective, const TensorD& analytic) {
    const double h = 1e-6;
    double worst = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double saved = x.data[i];
        x.data[i] = saved + h;
        const double lp = objective();
        x.data[i] = saved - h;
        const double lm = objective();
        x.data[i] = saved;
        const double fd = (lp - lm) / (2 * h);
        worst = std::max(worst, std::abs(fd - analytic.data[i]));
    }
    return worst;
}

}  // namespace

TEST_CASE("conv2d adjoints match finite differences") {
    ConvSpec spec{3, 3, 4, 6, 2, 1, true};
    TensorD x = random_tensor({2, 4, 5, 5});
    TensorD w = random_tensor(spec.weight_shape());
    TensorD b = random_tensor({6, 1, 1, 1});
    TensorD g = random_tensor(spec.out_shape(x.shape));
    auto objective = [&] { return dot(conv2d(x, spec, w, &b), g); };

    CHECK(fd_check(x, objective, conv2d_grad_input(g, spec, w, x.shape)) < 1e-7);
    CHECK(fd_check(w, objective, conv2d_grad_weight(g, spec, x)) < 1e-7);
    CHECK(fd_check(b, objective, conv2d_grad_bias(g)) < 1e-7);
}

TEST_CASE("conv2d adjoints, no padding, asymmetric kernel") {
    ConvSpec spec{2, 3, 3, 2, 1, 0, false};
    TensorD x = random_tensor({1, 3, 6, 7});
    TensorD w = random_tensor(spec.weight_shape());
    TensorD g = random_tensor(spec.out_shape(x.shape));
    auto objective = [&] { return dot(conv2d(x, spec, w), g); };
    CHECK(fd_check(x, objective, conv2d_grad_input(g, spec, w, x.shape)) < 1e-7);
    CHECK(fd_check(w, objective, conv2d_grad_weight(g, spec, x)) < 1e-7);
}

TEST_CASE("relu adjoint") {
    TensorD x = random_tensor({1, 3, 4, 4}, -1.0, 1.0);
    for (auto& v : x.data)
        if (std::abs(v) < 1e-3) v = 0.5;  // stay off the kink
    TensorD g = random_tensor(x.shape);
    auto objective = [&] { return dot(relu(x), g); };
    CHECK(fd_check(x, objective, relu_grad(x, g)) < 1e-7);
}

TEST_CASE("sigmoid adjoint") {
    TensorD x = random_tensor({1, 2, 3, 3}, -3.0, 3.0);
    TensorD g = random_tensor(x.shape);
    auto objective = [&] { return dot(sigmoid(x), g); };
    CHECK(fd_check(x, objective, sigmoid_grad(sigmoid(x), g)) < 1e-7);
}

TEST_CASE("fast_sigmoid adjoint") {
    TensorD x = random_tensor({1, 2, 3, 3}, -3.0, 3.0);
    for (auto& v : x.data)
        if (std::abs(v) < 1e-3) v = 0.5;  // |x| kink at zero
    TensorD g = random_tensor(x.shape);
    auto objective = [&] { return dot(fast_sigmoid(x), g); };
    CHECK(fd_check(x, objective, fast_sigmoid_grad(x, g)) < 1e-7);
}

TEST_CASE("global_avg_pool adjoint") {
    TensorD x = random_tensor({2, 3, 4, 5});
    TensorD g = random_tensor({2, 3, 1, 1});
    auto objective = [&] { return dot(global_avg_pool(x), g); };
    CHECK(fd_check(x, objective, global_avg_pool_grad(x.shape, g)) < 1e-7);
}

TEST_CASE("scale_channels adjoints") {
    TensorD x = random_tensor({2, 3, 4, 4});
    TensorD s = random_tensor({2, 3, 1, 1});
    TensorD g = random_tensor(x.shape);
    auto objective = [&] { return dot(scale_channels(x, s), g); };
    auto [gx, gs] = scale_channels_grads(x, s, g);
    CHECK(fd_check(x, objective, gx) < 1e-7);
    CHECK(fd_check(s, objective, gs) < 1e-7);
}

TEST_CASE("pixel_shuffle adjoint is the inverse permutation") {
    TensorD x = random_tensor({1, 8, 3, 4});
    TensorD g = random_tensor({1, 2, 6, 8});
    auto objective = [&] { return dot(pixel_shuffle(x, 2), g); };
    CHECK(fd_check(x, objective, pixel_shuffle_grad(g, 2)) < 1e-7);

    // round trip: unshuffle(shuffle(x)) == x exactly
    TensorD back = pixel_shuffle_grad(pixel_shuffle(x, 2), 2);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(back.data[i] == x.data[i]);
}

TEST_CASE("slice_channels recovers concat parts") {
    TensorD a = random_tensor({1, 2, 3, 3});
    TensorD b = random_tensor({1, 5, 3, 3});
    TensorD ab = concat_channels(std::vector<TensorD>{a, b});
    TensorD sa = slice_channels(ab, 0, 2);
    TensorD sb = slice_channels(ab, 2, 5);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(sa.data[i] == a.data[i]);
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(sb.data[i] == b.data[i]);
    CHECK_THROWS_AS(slice_channels(ab, 5, 3), ShapeError);
}
