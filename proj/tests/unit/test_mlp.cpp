#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "sforge/errors.hpp"
#include "sforge/mlp.hpp"
#include "sforge/rng.hpp"

using namespace sforge;
namespace fs = std::filesystem;

namespace {

std::uint64_t tally(const MlpSpec& spec) {
    BasicMlp<float> m(spec);
    std::uint64_t n = 0;
    for (std::size_t l = 0; l < m.layers.size(); ++l) n += m.weights(l).size() + m.bias(l).size();
    CHECK(n == m.params.size());
    return n;
}

template <typename T>
std::vector<T> random_vec(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(scale * normal01(rng));
    return v;
}

}  // namespace

TEST_SUITE("mlp") {

TEST_CASE("parameter count") {
    CHECK(param_count({20000, 3, 4}) == 80049);
    CHECK(param_count({20000, 3, 16}) == 320577);
    CHECK(param_count({20000, 3, 512}) == 10766337);
    for (std::size_t nl = 1; nl <= 5; ++nl) {
        for (std::size_t nn : {4, 8, 16, 32, 64, 128}) {
            const MlpSpec s{200, nl, nn};
            CHECK(param_count(s) == tally(s));
        }
    }
    CHECK_THROWS_AS(param_count({10, 0, 4}), InvalidArgument);
}

TEST_CASE("gelu") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(gelu(1.0) == doctest::Approx(0.841345).epsilon(1e-6));
    CHECK(gelu(1.0) == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-15));
    for (double x = -4.0; x <= 4.0; x += 0.25) {
        const double h = 1e-6;
        CHECK(gelu_derivative(x) == doctest::Approx((gelu(x + h) - gelu(x - h)) / (2 * h)).epsilon(1e-7));
    }
}

TEST_CASE("forward") {
    const MlpSpec spec{30, 2, 5};
    MlpModel zero(spec);
    const auto x = random_vec<float>(30, 1);
    CHECK(forward<float>(zero, x) == 0.0f);

    MlpModel m(spec);
    init_uniform_fan_in(m, 4);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const float bound = 1.0f / std::sqrt(static_cast<float>(m.layers[l].in));
        for (float w : m.weights(l)) CHECK(std::abs(w) <= bound);
    }
    const auto batch = random_vec<float>(30 * 7, 2);
    std::vector<float> out(7);
    MlpWorkspace<float> ws;
    forward_batch<float>(m, batch, out, ws);
    for (std::size_t b = 0; b < 7; ++b) {
        const float single = forward<float>(m, std::span<const float>(batch).subspan(b * 30, 30));
        CHECK(std::abs(single - out[b]) < 1e-6f);
    }
    auto bad = x;
    bad[3] = std::nanf("");
    CHECK_THROWS_AS(forward<float>(m, bad), InvalidArgument);
    CHECK_THROWS_AS(forward<float>(m, std::span<const float>(x).first(10)), DimensionError);
}

TEST_CASE("backprop matches central differences") {
    const MlpSpec spec{50, 2, 8};
    BasicMlp<double> m(spec);
    init_uniform_fan_in(m, 12);
    const std::size_t batch = 6;
    const auto x = random_vec<double>(50 * batch, 3);
    const auto y = random_vec<double>(batch, 4);
    std::vector<double> grad(m.params.size());
    MlpWorkspace<double> ws;
    loss_and_grad<double>(m, x, y, grad, ws);
    std::vector<double> scratch(m.params.size());
    const double h = 1e-6;
    double worst = 0.0;
    for (std::size_t p = 0; p < m.params.size(); ++p) {
        const double orig = m.params[p];
        m.params[p] = orig + h;
        const double lp = loss_and_grad<double>(m, x, y, scratch, ws);
        m.params[p] = orig - h;
        const double lm = loss_and_grad<double>(m, x, y, scratch, ws);
        m.params[p] = orig;
        const double fd = (lp - lm) / (2 * h);
        const double denom = std::max(std::abs(fd) + std::abs(grad[p]), 1e-8);
        worst = std::max(worst, std::abs(fd - grad[p]) / denom);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("loss identities") {
    const MlpSpec spec{20, 1, 4};
    BasicMlp<double> m(spec);
    init_uniform_fan_in(m, 5);
    const auto x = random_vec<double>(20 * 4, 6);
    std::vector<double> pred(4);
    MlpWorkspace<double> ws;
    forward_batch<double>(m, x, pred, ws);
    std::vector<double> grad(m.params.size());
    CHECK(loss_and_grad<double>(m, x, pred, grad, ws) == doctest::Approx(0.0).epsilon(1e-30));
    const auto& out = m.layers.back();
    for (std::size_t k = 0; k < out.in + 1; ++k) CHECK(grad[out.weight_offset + k] == doctest::Approx(0.0));

    std::vector<double> y1(4), y2(4);
    for (std::size_t b = 0; b < 4; ++b) {
        y1[b] = pred[b] - 0.3 * static_cast<double>(b + 1);
        y2[b] = pred[b] - 0.6 * static_cast<double>(b + 1);
    }
    const double l1 = loss_and_grad<double>(m, x, y1, grad, ws);
    const double l2 = loss_and_grad<double>(m, x, y2, grad, ws);
    CHECK(l2 == doctest::Approx(4.0 * l1).epsilon(1e-12));
    CHECK(l1 == doctest::Approx((0.09 + 0.36 + 0.81 + 1.44) / 4.0).epsilon(1e-12));
    CHECK_THROWS_AS(loss_and_grad<double>(m, x, std::span<const double>(y1).first(3), grad, ws), DimensionError);
    CHECK_THROWS(loss_and_grad<double>(m, std::span<const double>(), std::span<const double>(), grad, ws));
}

TEST_CASE("adam") {
    std::vector<double> w{1.0, -2.0, 0.5};
    const std::vector<double> g{0.3, -7.0, 2.0};
    AdamState<double> st(3);
    adam_step<double>(w, g, st, 1e-3);
    CHECK(w[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-7));
    CHECK(w[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-7));
    CHECK(w[2] == doctest::Approx(0.5 - 1e-3).epsilon(1e-7));

    std::vector<double> z{0.25};
    AdamState<double> sz(1);
    for (int k = 0; k < 50; ++k) adam_step<double>(z, std::vector<double>{0.0}, sz, 0.1);
    CHECK(z[0] == 0.25);

    // three steps by hand on one weight with gradients 1, -2, 0.5
    std::vector<double> v{0.0};
    AdamState<double> sv(1);
    const double grads[3] = {1.0, -2.0, 0.5};
    double m1 = 0, m2 = 0, ref = 0;
    for (int t = 1; t <= 3; ++t) {
        const double gt = grads[t - 1];
        m1 = 0.9 * m1 + 0.1 * gt;
        m2 = 0.999 * m2 + 0.001 * gt * gt;
        const double mh = m1 / (1 - std::pow(0.9, t));
        const double vh = m2 / (1 - std::pow(0.999, t));
        ref -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
        adam_step<double>(v, std::vector<double>{gt}, sv, 0.01);
        CHECK(std::abs(v[0] - ref) < 1e-10);
    }
}

TEST_CASE("learning-rate schedule") {
    TrainConfig c;
    CHECK(c.learning_rate(0) == 1e-3);
    CHECK(c.learning_rate(10) == doctest::Approx(8.1707e-4).epsilon(1e-4));
    CHECK(c.learning_rate(10) == 1e-3 * std::pow(0.98, 10));
}

TEST_CASE("evaluate identities") {
    const MlpSpec spec{4, 1, 2};
    MlpModel m(spec);  // zero weights
    m.bias(1)[0] = 0.5f;
    const std::vector<float> x(12, 1.0f);
    const std::vector<float> y{0.0f, 1.0f, 0.5f};
    // predictions are all 0.5: (0.25 + 0.25 + 0) / 3
    CHECK(evaluate<float>(m, x, y) == doctest::Approx(1.0 / 6.0).epsilon(1e-7));
    // constant predictor at the target mean gives the population variance
    const std::vector<float> y2{0.2f, 0.8f, 0.5f};
    CHECK(evaluate<float>(m, x, y2) == doctest::Approx((0.09 + 0.09) / 3.0).epsilon(1e-6));
    const std::vector<float> one{0.5f};
    CHECK(evaluate<float>(m, std::span<const float>(x).first(4), one) == 0.0);
}

TEST_CASE("training learns the mean of the inputs") {
    const std::size_t n_i = 32;
    auto make = [&](std::size_t n, std::uint64_t seed, std::vector<float>& x, std::vector<float>& y) {
        Rng rng(seed);
        x.resize(n * n_i);
        y.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
            double s = 0.0;
            for (std::size_t i = 0; i < n_i; ++i) {
                x[k * n_i + i] = static_cast<float>(uniform(rng, -1.0, 1.0));
                s += x[k * n_i + i];
            }
            y[k] = static_cast<float>(s / n_i);
        }
    };
    std::vector<float> tx, ty, vx, vy, sx, sy;
    make(512, 1, tx, ty);
    make(64, 2, vx, vy);
    make(256, 3, sx, sy);
    const MlpSpec spec{n_i, 2, 16};
    TrainConfig cfg;
    cfg.seed = 7;
    const auto r = train(spec, {tx, ty}, {vx, vy}, cfg);
    const double test = evaluate<float>(r.model, sx, sy);
    CHECK(test < 1e-3);

    MlpModel untrained(spec);
    const double var = evaluate<float>(untrained, sx, sy);  // zero predictor
    double mean_sq = 0.0;
    for (const float v : sy) mean_sq += static_cast<double>(v) * v;
    CHECK(var == doctest::Approx(mean_sq / static_cast<double>(sy.size())).epsilon(1e-6));
    CHECK(test < 0.05 * var);

    const auto& h = r.report.val_history;
    CHECK(r.report.best_val_loss == *std::min_element(h.begin(), h.end()));
    CHECK(r.report.best_val_loss == doctest::Approx(evaluate(r.model, RegressionData{vx, vy})).epsilon(1e-12));

    const auto again = train(spec, {tx, ty}, {vx, vy}, cfg);
    CHECK(again.report.train_history == r.report.train_history);
    CHECK(again.report.val_history == r.report.val_history);
    CHECK(again.model.params == r.model.params);
}

TEST_CASE("early stopping restores the best epoch") {
    const std::size_t n_i = 16;
    std::vector<float> tx = random_vec<float>(64 * n_i, 1), ty = random_vec<float>(64, 2);
    std::vector<float> vx = random_vec<float>(16 * n_i, 3), vy = random_vec<float>(16, 4);
    TrainConfig cfg;
    cfg.max_epochs = 60;
    cfg.patience = 5;
    cfg.lr0 = 1e-2;
    const auto r = train({n_i, 2, 32}, {tx, ty}, {vx, vy}, cfg);
    CHECK(r.report.epochs_run < 60);
    CHECK(r.report.epochs_run == r.report.best_epoch + cfg.patience + 1);
    CHECK(evaluate(r.model, RegressionData{vx, vy}) == doctest::Approx(r.report.best_val_loss).epsilon(1e-12));
}

TEST_CASE("divergence is reported") {
    const std::size_t n_i = 8;
    std::vector<float> tx = random_vec<float>(32 * n_i, 1, 1e18), ty = random_vec<float>(32, 2, 1e18);
    std::vector<float> vx = random_vec<float>(8 * n_i, 3), vy = random_vec<float>(8, 4);
    TrainConfig cfg;
    cfg.lr0 = 1e6;
    CHECK_THROWS_AS(train({n_i, 2, 8}, {tx, ty}, {vx, vy}, cfg), DivergenceError);
}

TEST_CASE("checkpoint round trip") {
    const fs::path dir = fs::path(SFORGE_TEST_TMP) / "mlp";
    fs::create_directories(dir);
    MlpModel m({40, 3, 6});
    init_uniform_fan_in(m, 99);
    save_checkpoint(m, dir / "m.sfmc");
    CHECK(fs::file_size(dir / "m.sfmc") == 4 + 4 + 8 * 4 + 4 * param_count(m.spec));
    const MlpModel back = load_checkpoint(dir / "m.sfmc");
    CHECK(back.spec == m.spec);
    CHECK(back.params == m.params);
    fs::resize_file(dir / "m.sfmc", 60);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.sfmc"), FormatError);
}

}
