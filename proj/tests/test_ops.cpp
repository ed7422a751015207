#include <catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "umixer/gradcheck.hpp"
#include "umixer/ops.hpp"
#include "umixer/rng.hpp"

using namespace umixer;
using Catch::Approx;

namespace {

// erf by its Maclaurin series; converges fast for |x| <= 3.
double erf_series(double x) {
    double term = x, total = x;
    for (int n = 1; n < 200; ++n) {
        term *= -x * x / n;
        total += term / (2 * n + 1);
    }
    return 2.0 / std::sqrt(std::acos(-1.0)) * total;
}

Tensor random_tensor(Shape shape, std::uint64_t seed, bool grad = true) {
    RngStream r(seed);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = r.normal();
    return Tensor(std::move(shape), std::move(v), grad);
}

// Smooth scalar probe: sum of squares of a fixed random reweighting.
Tensor probe(const Tensor& t) {
    RngStream r(99);
    std::vector<double> w(t.numel());
    for (auto& x : w) x = r.uniform(-1.0, 1.0);
    return sum_squares(affine_constant(t, w, std::vector<double>(t.numel(), 0.0)));
}

GradReport check(const std::function<Tensor()>& f, NamedTensors params, double tol) {
    return grad_check([&] { return probe(f()); }, params, tol);
}

const std::vector<Shape> kShapes{{2, 3}, {3, 2, 4}, {1, 5}};

}  // namespace

TEST_CASE("linear on hand fixtures", "[ops][linear]") {
    const Tensor x({1, 2}, {1.0, 2.0});
    const Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const auto a = linear(x, eye, Tensor::zeros({2}));
    CHECK(a.data()[0] == 1.0);
    CHECK(a.data()[1] == 2.0);
    const auto b = linear(x, Tensor({2, 1}, {1.0, 3.0}), Tensor({1}, {0.5}));
    CHECK(b.item() == 7.5);
}

TEST_CASE("linear shape arithmetic and errors", "[ops][linear]") {
    const auto y = linear(Tensor::zeros({84, 16}), Tensor::zeros({16, 128}), Tensor::zeros({128}));
    CHECK(y.shape() == Shape{84, 128});
    try {
        linear(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
        FAIL("expected a dimension error");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,5)") != std::string::npos);
    }
}

TEST_CASE("linear gradients", "[ops][linear][grad]") {
    for (std::size_t i = 0; i < kShapes.size(); ++i) {
        auto shape = kShapes[i];
        const auto x = random_tensor(shape, 1 + i);
        const auto w = random_tensor({shape.back(), 3}, 10 + i);
        const auto b = random_tensor({3}, 20 + i);
        const auto rep = check([&] { return linear(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}}, 1e-6);
        CHECK(rep.passed);
    }
}

TEST_CASE("grouped linear matches a per-group loop", "[ops][grouped_linear]") {
    const std::size_t B = 2, G = 3, R = 4, I = 5, O = 2;
    const auto x = random_tensor({B, G, R, I}, 1, false);
    const auto w = random_tensor({G, I, O}, 2, false);
    const auto b = random_tensor({G, O}, 3, false);
    const auto y = grouped_linear(x, w, b);
    REQUIRE(y.shape() == Shape{B, G, R, O});
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t g = 0; g < G; ++g)
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t o = 0; o < O; ++o) {
                    double ref = b.data()[g * O + o];
                    for (std::size_t i = 0; i < I; ++i) {
                        ref += x.data()[((bb * G + g) * R + r) * I + i] * w.data()[(g * I + i) * O + o];
                    }
                    CHECK(y.data()[((bb * G + g) * R + r) * O + o] == Approx(ref).epsilon(1e-14));
                }
}

TEST_CASE("grouped linear with one shared group", "[ops][grouped_linear]") {
    const auto x = random_tensor({1, 3, 2, 4}, 4, false);
    const auto w = random_tensor({1, 4, 2}, 5, false);
    const auto b = random_tensor({1, 2}, 6, false);
    const auto shared = grouped_linear(x, w, b);
    const auto plain = linear(x, reshape(w, {4, 2}), reshape(b, {2}));
    for (std::size_t i = 0; i < shared.numel(); ++i) CHECK(shared.data()[i] == Approx(plain.data()[i]));
}

TEST_CASE("grouped linear gradients", "[ops][grouped_linear][grad]") {
    for (std::size_t G : {std::size_t{1}, std::size_t{3}}) {
        const auto x = random_tensor({2, 3, 2, 4}, 7);
        const auto w = random_tensor({G, 4, 3}, 8);
        const auto b = random_tensor({G, 3}, 9);
        CHECK(check([&] { return grouped_linear(x, w, b); }, {{"x", x}, {"w", w}, {"b", b}}, 1e-6).passed);
    }
}

TEST_CASE("gelu against an erf series oracle", "[ops][gelu]") {
    const Tensor x({4}, {0.0, 1.0, -0.7, 2.3});
    const auto y = gelu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == Approx(0.841345).margin(1e-6));
    for (std::size_t i = 0; i < 4; ++i) {
        const double v = x.data()[i];
        CHECK(y.data()[i] == Approx(v * 0.5 * (1.0 + erf_series(v / std::sqrt(2.0)))).epsilon(1e-12));
    }
    CHECK(gelu(Tensor({1}, {50.0})).item() == Approx(50.0).margin(1e-9));
}

TEST_CASE("gelu gradients", "[ops][gelu][grad]") {
    for (std::size_t i = 0; i < kShapes.size(); ++i) {
        const auto x = random_tensor(kShapes[i], 30 + i);
        CHECK(check([&] { return gelu(x); }, {{"x", x}}, 1e-6).passed);
    }
}

TEST_CASE("layer norm fixtures", "[ops][layer_norm]") {
    const auto ones = Tensor::full({3}, 1.0);
    const auto zeros = Tensor::zeros({3});
    const auto c = layer_norm(Tensor::full({2, 3}, 4.0), ones, zeros);
    for (double v : c.data()) CHECK(v == 0.0);

    const auto y = layer_norm(Tensor({1, 2}, {1.0, 3.0}), Tensor::full({2}, 1.0), Tensor::zeros({2}));
    CHECK(y.data()[0] == Approx(-1.0 / std::sqrt(1.0 + 1e-5)));
    CHECK(y.data()[1] == Approx(1.0 / std::sqrt(1.0 + 1e-5)));

    const auto collapsed = layer_norm(random_tensor({4, 3}, 1, false), zeros, Tensor::full({3}, 5.0));
    for (double v : collapsed.data()) CHECK(v == 5.0);
}

TEST_CASE("layer norm gradients", "[ops][layer_norm][grad]") {
    for (std::size_t i = 0; i < kShapes.size(); ++i) {
        const std::size_t d = kShapes[i].back();
        const auto x = random_tensor(kShapes[i], 40 + i);
        const auto g = random_tensor({d}, 50 + i);
        const auto b = random_tensor({d}, 60 + i);
        CHECK(check([&] { return layer_norm(x, g, b); }, {{"x", x}, {"g", g}, {"b", b}}, 1e-6).passed);
    }
}

TEST_CASE("dropout identities and scaling", "[ops][dropout]") {
    RngStream rng(5);
    const auto x = random_tensor({3, 4}, 2, false);
    const auto a = dropout(x, 0.0, true, rng);
    const auto b = dropout(x, 0.5, false, rng);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(a.data()[i] == x.data()[i]);
        CHECK(b.data()[i] == x.data()[i]);
    }
    const auto ones = Tensor::full({100000}, 1.0);
    const auto d = dropout(ones, 0.5, true, rng);
    double mean = 0.0;
    for (double v : d.data()) {
        CHECK((v == 0.0 || v == 2.0));
        mean += v;
    }
    mean /= 100000.0;
    CHECK(std::abs(mean - 1.0) < 0.01);
    CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ParameterError);
}

TEST_CASE("dropout gradient flows through the fixed mask", "[ops][dropout][grad]") {
    const auto x = random_tensor({4, 5}, 3);
    RngStream rng(8);
    const auto y = dropout(x, 0.3, true, rng);
    backward(sum(y));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double expected = y.data()[i] == 0.0 ? 0.0 : 1.0 / 0.7;
        CHECK(x.grad()[i] == Approx(expected));
    }
}

TEST_CASE("structural ops and their gradients", "[ops][grad]") {
    const auto x = random_tensor({2, 3, 4}, 70);
    const auto y = random_tensor({2, 3, 2}, 71);
    const auto t = transpose_last2(x);
    CHECK(t.shape() == Shape{2, 4, 3});
    CHECK(t.data()[(1 * 4 + 2) * 3 + 1] == x.data()[(1 * 3 + 1) * 4 + 2]);
    const auto cat = concat_last(x, y);
    CHECK(cat.shape() == Shape{2, 3, 6});
    CHECK(cat.data()[5] == y.data()[1]);
    const auto sl = slice_last(x, 1, 3);
    CHECK(sl.shape() == Shape{2, 3, 2});
    CHECK(sl.data()[0] == x.data()[1]);
    CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);

    CHECK(check([&] { return transpose_last2(x); }, {{"x", x}}, 1e-6).passed);
    CHECK(check([&] { return concat_last(x, y); }, {{"x", x}, {"y", y}}, 1e-6).passed);
    CHECK(check([&] { return slice_last(x, 1, 3); }, {{"x", x}}, 1e-6).passed);
    CHECK(check([&] { return reshape(x, {6, 4}); }, {{"x", x}}, 1e-6).passed);
    const auto w = random_tensor({3, 4}, 72);
    CHECK(check([&] { return add_trailing(x, w); }, {{"x", x}, {"w", w}}, 1e-6).passed);
    CHECK(check([&] { return add(x, x); }, {{"x", x}}, 1e-6).passed);
    CHECK(check([&] { return scale(x, -2.5); }, {{"x", x}}, 1e-6).passed);
}

TEST_CASE("mean absolute error value and subgradient", "[ops][loss]") {
    const Tensor p({1, 2}, {0.0, 4.0}, true);
    const std::vector<double> y{1.0, 2.0};
    const auto loss = mean_abs_error(p, y);
    CHECK(loss.item() == 1.5);
    backward(loss);
    CHECK(p.grad()[0] == -0.5);
    CHECK(p.grad()[1] == 0.5);

    const Tensor q({2}, {3.0, 3.0}, true);
    const std::vector<double> same{3.0, 3.0};
    backward(mean_abs_error(q, same));
    CHECK(q.grad()[0] == 0.0);
}

TEST_CASE("forward ops keep finite inputs finite", "[ops][property]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        RngStream r(seed);
        const std::size_t rows = 1 + r.below(5), cols = 1 + r.below(6);
        std::vector<double> v(rows * cols);
        for (auto& x : v) x = 100.0 * r.normal();
        const Tensor x({rows, cols}, v);
        const auto y = layer_norm(gelu(x), Tensor::full({cols}, 1.0), Tensor::zeros({cols}));
        for (double e : y.data()) REQUIRE(std::isfinite(e));
    }
}
