#include <algorithm>
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "sforge/errors.hpp"
#include "sforge/rng.hpp"
#include "sforge/scalestats.hpp"

using namespace sforge;

TEST_SUITE("scalestats") {

TEST_CASE("summaries") {
    const std::vector<double> a{4.0, 16.0};
    const auto r = summarize(a);
    CHECK(r.geo_mean == doctest::Approx(8.0).epsilon(1e-15));
    CHECK(r.arith_mean == 10.0);
    CHECK(r.median == 10.0);
    CHECK(r.n == 2);

    const std::vector<double> b{1, 2, 3, 4, 100};
    const auto rb = summarize(b);
    CHECK(rb.median == 3.0);
    CHECK(rb.mad == 1.0);

    std::vector<double> c(19, 1.0);
    c.push_back(100.0);
    const auto rc = summarize(c);
    CHECK(std::abs(rc.geo_mean - std::pow(100.0, 1.0 / 20.0)) < 1e-9);
    CHECK(std::abs(rc.arith_mean - 5.95) < 1e-9);

    // SEs against direct formulas
    const std::vector<double> d{0.5, 0.25, 2.0, 1.0};
    const auto rd = summarize(d);
    double ml = 0.0;
    for (double v : d) ml += std::log(v);
    ml /= 4.0;
    double sl = 0.0;
    for (double v : d) sl += (std::log(v) - ml) * (std::log(v) - ml);
    CHECK(rd.geo_se == doctest::Approx(std::exp(ml) * std::sqrt(sl / 3.0) / 2.0).epsilon(1e-14));
    const double am = 3.75 / 4.0;
    double sa = 0.0;
    for (double v : d) sa += (v - am) * (v - am);
    CHECK(rd.arith_se == doctest::Approx(std::sqrt(sa / 3.0) / 2.0).epsilon(1e-14));

    CHECK_THROWS_AS(summarize(std::vector<double>{1.0, 0.0}), DomainError);
    CHECK_THROWS_AS(summarize(std::vector<double>{1.0, -3.0}), DomainError);
    CHECK_THROWS_AS(summarize(std::vector<double>{}), DomainError);
}

TEST_CASE("AM-GM holds on random ensembles") {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> v(1 + uniform_index(rng, 30));
        for (auto& x : v) x = std::exp(2.0 * normal01(rng));
        const auto r = summarize(v);
        CHECK(r.geo_mean <= r.arith_mean * (1 + 1e-12));
    }
    const std::vector<double> same(7, 0.3);
    const auto r = summarize(same);
    CHECK(r.geo_mean == doctest::Approx(r.arith_mean).epsilon(1e-15));
}

TEST_CASE("bootstrap geometric mean") {
    const std::vector<double> same(30, 2.5);
    const auto a = bootstrap_geomean(same, 50, 10, 1);
    CHECK(a.mean == doctest::Approx(2.5).epsilon(1e-14));
    CHECK(a.std == doctest::Approx(0.0).epsilon(1e-14));

    Rng rng(8);
    std::vector<double> v(100);
    for (auto& x : v) x = std::exp(normal01(rng));
    const auto full = bootstrap_geomean(v, 50, 100, 2);
    CHECK(full.std == doctest::Approx(0.0).epsilon(1e-12));

    const auto half = bootstrap_geomean(v, 50, 50, 3);
    double ml = 0.0;
    for (double x : v) ml += std::log(x);
    const double gm = std::exp(ml / 100.0);
    CHECK(std::abs(half.mean - gm) <= 3.0 * half.std);
    const auto again = bootstrap_geomean(v, 50, 50, 3);
    CHECK(again.mean == half.mean);
    CHECK(again.std == half.std);
    CHECK_THROWS(bootstrap_geomean(v, 50, 101, 3));
}

TEST_CASE("power-law fits") {
    std::vector<FitPoint> pts;
    for (double n = 256; n <= 28672; n *= 2) pts.push_back({n, 10.0 * std::pow(n, -1.5)});
    pts.push_back({28672, 10.0 * std::pow(28672.0, -1.5)});
    const auto f = fit_power_law(pts);
    CHECK(std::abs(f.alpha - 1.5) < 1e-12);
    CHECK(std::abs(f.log_prefactor - std::log(10.0)) < 1e-10);
    CHECK(f.r2 == doctest::Approx(1.0).epsilon(1e-14));

    const std::vector<FitPoint> two{{100, 1}, {10000, 0.01}};
    const auto t = fit_power_law(two);
    CHECK(t.alpha == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::isnan(t.alpha_err));
    CHECK(t.n_points == 2);

    // order invariance, exact
    auto shuffled = pts;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[1], shuffled[4]);
    const auto g = fit_power_law(shuffled);
    CHECK(g.alpha == f.alpha);
    CHECK(g.log_prefactor == f.log_prefactor);

    // scaling of losses and sizes
    Rng rng(4);
    std::vector<FitPoint> noisy;
    for (double n = 100; n < 1e5; n *= 1.9) noisy.push_back({n, 3.0 * std::pow(n, -0.8) * std::exp(0.2 * normal01(rng))});
    const auto base = fit_power_law(noisy);
    auto scaled_y = noisy, scaled_x = noisy;
    for (auto& p : scaled_y) p.y *= 7.0;
    for (auto& p : scaled_x) p.x *= 13.0;
    const auto sy = fit_power_law(scaled_y);
    const auto sx = fit_power_law(scaled_x);
    CHECK(std::abs(sy.alpha - base.alpha) < 1e-12);
    CHECK(std::abs(std::exp(sy.log_prefactor) / std::exp(base.log_prefactor) - 7.0) < 1e-12 * 7.0);
    CHECK(std::abs(sx.alpha - base.alpha) < 1e-12);

    // mask
    const auto masked = fit_power_law(noisy, {150.0, 20000.0, 0.0});
    std::size_t inside = 0;
    for (const auto& p : noisy) inside += p.x >= 150.0 && p.x <= 20000.0;
    CHECK(masked.n_points == inside);
    CHECK(masked.x_min >= 150.0);
    CHECK(masked.x_max <= 20000.0);

    CHECK_THROWS_AS(fit_power_law(std::vector<FitPoint>{{1, 1}, {2, 0}}), DomainError);
    CHECK_THROWS_AS(fit_power_law(std::vector<FitPoint>{{1, 1}}), DegenerateDataError);
    CHECK_THROWS(fit_power_law(two, {0.0, 50.0, 0.0}));
}

TEST_CASE("log-linear fits") {
    std::vector<FitPoint> pts;
    for (double n = 224; n <= 28672; n *= 2) pts.push_back({n, 0.151 * std::log(n) - 0.59});
    const auto f = fit_log_linear(pts);
    CHECK(std::abs(f.a - 0.151) < 1e-12);
    CHECK(std::abs(f.b + 0.59) < 1e-12);
    CHECK(f.uncertainties_defined());
    CHECK(f.a_err < 1e-12);

    std::vector<FitPoint> flat;
    for (double n : {10.0, 100.0, 1000.0}) flat.push_back({n, 1.3});
    const auto c = fit_log_linear(flat);
    CHECK(std::abs(c.a) < 1e-15);
    CHECK(c.b == doctest::Approx(1.3).epsilon(1e-15));

    const auto two = fit_log_linear(std::vector<FitPoint>{{10, 1}, {100, 2}});
    CHECK(two.a == doctest::Approx(1.0 / std::log(10.0)).epsilon(1e-14));
    CHECK_FALSE(two.uncertainties_defined());
    CHECK(std::isnan(two.a_err));
    CHECK_THROWS_AS(fit_log_linear(std::vector<FitPoint>{{0, 1}, {1, 1}}), DomainError);
}

TEST_CASE("histogram") {
    const std::vector<double> edges{0, 1, 2, 3, 4};
    const std::vector<double> centers{0.5, 1.5, 2.5, 3.5};
    const auto h = histogram(centers, edges);
    CHECK(h.counts == std::vector<std::size_t>{1, 1, 1, 1});
    const auto e = histogram(std::vector<double>{2.0}, edges);
    CHECK(e.counts == std::vector<std::size_t>{0, 0, 1, 0});
    const auto o = histogram(std::vector<double>{-1.0, 4.0, 9.0}, edges);
    CHECK(o.underflow == 1);
    CHECK(o.overflow == 2);

    Rng rng(12);
    std::vector<double> v(1000);
    for (auto& x : v) x = uniform(rng, 0.0, 4.0);
    std::vector<double> log_edges{0.0, 0.3, 0.7, 1.6, 2.2, 3.9, 4.0};
    const auto hr = histogram(v, log_edges);
    std::size_t total = 0;
    for (std::size_t b = 0; b + 1 < log_edges.size(); ++b) {
        std::size_t brute = 0;
        for (double x : v) brute += x >= log_edges[b] && x < log_edges[b + 1];
        CHECK(hr.counts[b] == brute);
        total += hr.counts[b];
    }
    CHECK(total + hr.underflow + hr.overflow == 1000);
    CHECK_THROWS(histogram(v, std::vector<double>{1.0, 0.5}));
}

TEST_CASE("results CSV round trip") {
    const std::vector<ResultRow> rows{{"J", "fcn-3x16", 320577, 256, 0, 0.012345678901234567},
                                      {"J", "resnet18", 11000000, 512, 3, 1.5e-7}};
    std::stringstream ss;
    write_results_csv(ss, rows);
    const auto back = read_results_csv(ss);
    CHECK(back == rows);

    std::stringstream bad("target,arch_id,N_M,N_D,seed,test_mse\nJ,a,1,2,3,0.1\nJ,a,1,2,3,-0.1\n");
    try {
        read_results_csv(bad);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    }
    std::stringstream nohead("J,a,1,2,3,0.1\n");
    CHECK_THROWS_AS(read_results_csv(nohead), FormatError);
}

}
