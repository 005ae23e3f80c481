#include <cmath>

#include "doctest.h"
#include "sforge/errors.hpp"
#include "sforge/rng.hpp"
#include "sforge/spinsim.hpp"

using namespace sforge;

namespace {

// Direct evaluation of the Hamiltonian from the bond and pair lists.
double energy_oracle(const LatticeGraph& g, const HamiltonianParams& p, const SpinConfig& s) {
    double e = 0.0;
    for (const auto& b : g.intra_bonds) e -= p.J * dot(s.spins[b.i], s.spins[b.j]);
    for (const auto& v : s.spins) e -= p.D * v.z * v.z;
    for (const auto& w : g.inter_pairs) e += w.weight * dot(s.spins[w.i], s.spins[w.j]);
    return e;
}

SpinConfig random_unit(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    SpinConfig s;
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 v{normal01(rng), normal01(rng), normal01(rng)};
        s.spins.push_back((1.0 / norm(v)) * v);
    }
    return s;
}

}  // namespace

TEST_SUITE("spinsim") {

TEST_CASE("energy closed forms") {
    const auto mono = build_monolayer(MoireIndex{8});
    const HamiltonianParams p{2.0, 0.2};
    const auto up = SpinConfig::uniform(mono.size(), {0, 0, 1});
    CHECK(energy(mono, p, up) == doctest::Approx(-1388.8).epsilon(1e-12));
    CHECK(energy(mono, p, up) == doctest::Approx(-2.0 * 651 - 0.2 * 434).epsilon(1e-12));
    const auto x = SpinConfig::uniform(mono.size(), {1, 0, 0});
    CHECK(energy(mono, p, x) == doctest::Approx(-2.0 * 651).epsilon(1e-12));

    const auto bi = build_superlattice(MoireIndex{8}, {});
    const auto s = random_unit(bi.size(), 5);
    CHECK(energy(bi, p, s) == doctest::Approx(energy_oracle(bi, p, s)).epsilon(1e-12));
    CHECK_THROWS_AS(energy(bi, p, SpinConfig::uniform(3, {0, 0, 1})), DimensionError);
}

TEST_CASE("single flip costs the broken bonds") {
    const auto g = build_monolayer(MoireIndex{4});
    const HamiltonianParams p{3.0, 0.1};
    auto s = SpinConfig::uniform(g.size(), {0, 0, 1});
    const double e0 = energy(g, p, s);
    s.spins[7] = {0, 0, -1};
    const double e1 = energy(g, p, s);
    CHECK(e1 - e0 == doctest::Approx(2.0 * p.J * 3.0));
}

TEST_CASE("effective field is minus the energy gradient") {
    const auto g = build_superlattice(MoireIndex{4}, {});
    const HamiltonianParams p{2.5, 0.15};
    auto s = random_unit(g.size(), 11);
    const double h = 1e-4;
    for (std::size_t i : {0UL, 17UL, g.size() / 2 + 3, g.size() - 1}) {
        const Vec3 field = effective_field(g, p, s, i);
        const Vec3 orig = s.spins[i];
        double grad[3];
        for (int a = 0; a < 3; ++a) {
            Vec3 plus = orig, minus = orig;
            (a == 0 ? plus.x : a == 1 ? plus.y : plus.z) += h;
            (a == 0 ? minus.x : a == 1 ? minus.y : minus.z) -= h;
            s.spins[i] = plus;
            const double ep = energy(g, p, s);
            s.spins[i] = minus;
            const double em = energy(g, p, s);
            s.spins[i] = orig;
            grad[a] = (ep - em) / (2.0 * h);
        }
        const Vec3 fd{-grad[0], -grad[1], -grad[2]};
        CHECK(norm(fd - field) / norm(field) < 1e-5);
    }
    CHECK_THROWS(effective_field(g, p, s, g.size()));
}

TEST_CASE("effective field closed forms") {
    const auto g = build_monolayer(MoireIndex{3});
    const HamiltonianParams p{2.0, 0.2};
    const auto up = SpinConfig::uniform(g.size(), {0, 0, 1});
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Vec3 f = effective_field(g, p, up, i);
        CHECK(f.x == 0.0);
        CHECK(f.y == 0.0);
        CHECK(f.z == doctest::Approx(3.0 * 2.0 + 2.0 * 0.2));
    }
    // isolated site: no exchange partners and D = 0
    LatticeGraph lone;
    lone.layers = 1;
    lone.sites.push_back({});
    lone.intra.offsets = {0, 0};
    lone.inter.offsets = {0, 0};
    const Vec3 f = effective_field(lone, {2.0, 0.0}, SpinConfig::uniform(1, {0, 0, 1}), 0);
    CHECK(norm(f) == 0.0);
}

TEST_CASE("monolayer ferromagnet ground state") {
    const auto g = build_monolayer(MoireIndex{8});
    const HamiltonianParams p{2.0, 0.2};
    const double fm = -2.0 * 651 - 0.2 * 434;
    SolverConfig cfg;
    cfg.seed = 3;
    cfg.record_trace = true;
    const auto r = ground_state(g, p, cfg);
    CHECK(std::abs(layer_mean_sz(g, r.state, Layer::top)) > 0.999);
    CHECK(std::abs(r.energy - fm) < 1e-3 * std::abs(fm));
    CHECK(r.energy <= r.post_anneal_energy);
    for (std::size_t k = 1; k < r.energy_trace.size(); ++k) {
        CHECK(r.energy_trace[k] <= r.energy_trace[k - 1] + 1e-9);
    }
    for (const auto& v : r.state.spins) CHECK(std::abs(norm(v) - 1.0) < 1e-6);
}

TEST_CASE("ground state is reproducible and monotone on the bilayer") {
    const auto g = build_superlattice(MoireIndex{8}, {});
    const HamiltonianParams p{4.0, 0.1};
    SolverConfig cfg;
    cfg.seed = 99;
    cfg.record_trace = true;
    const auto a = ground_state(g, p, cfg);
    const auto b = ground_state(g, p, cfg);
    REQUIRE(a.state.size() == b.state.size());
    bool identical = true;
    for (std::size_t i = 0; i < a.state.size(); ++i) {
        identical = identical && a.state.spins[i].x == b.state.spins[i].x && a.state.spins[i].y == b.state.spins[i].y &&
                    a.state.spins[i].z == b.state.spins[i].z;
    }
    CHECK(identical);
    CHECK(a.energy == b.energy);
    CHECK(a.converged);
    CHECK(a.max_torque < cfg.torque_tol);
    CHECK(a.energy <= a.post_anneal_energy);
    CHECK(a.energy == doctest::Approx(energy_oracle(g, p, a.state)).epsilon(1e-12));
    for (std::size_t k = 1; k < a.energy_trace.size(); ++k) CHECK(a.energy_trace[k] <= a.energy_trace[k - 1] + 1e-9);
    for (const auto& v : a.state.spins) CHECK(std::abs(norm(v) - 1.0) < 1e-6);
}

TEST_CASE("solver config validation") {
    const HamiltonianParams p{2.0, 0.2};
    SolverConfig c;
    c.torque_tol = 0.0;
    CHECK_THROWS(c.validate(p));
    c = {};
    c.t_start = 0.001;
    c.t_end = 0.01;
    CHECK_THROWS(c.validate(p));
}

TEST_CASE("rasterization") {
    const auto g = build_superlattice(MoireIndex{8}, {});
    const auto up = SpinConfig::uniform(g.size(), {0, 0, 1});
    for (Layer layer : {Layer::top, Layer::bottom}) {
        const auto img = rasterize(g, up, layer);
        REQUIRE(img.pixels.size() == 10000);
        for (const float v : img.pixels) CHECK(v == 1.0f);
    }

    const auto map = RasterMap::build(g, Layer::bottom);
    Rng rng(17);
    for (int k = 0; k < 100; ++k) {
        const int r = static_cast<int>(uniform_index(rng, kImageSize));
        const int c = static_cast<int>(uniform_index(rng, kImageSize));
        const Vec2 px = map.pixel_position(g, r, c);
        double best = 1e300;
        for (std::size_t j = g.layer_begin(Layer::bottom); j < g.layer_end(Layer::bottom); ++j) {
            best = std::min(best, norm(g.cell.min_image(g.sites[j].position - px)));
        }
        const auto chosen = static_cast<std::size_t>(map.site[static_cast<std::size_t>(r * kImageSize + c)]);
        CHECK(g.sites[chosen].layer == Layer::bottom);
        CHECK(norm(g.cell.min_image(g.sites[chosen].position - px)) <= best + 1e-12);
    }

    auto s = random_unit(g.size(), 23);
    auto neg = s;
    for (auto& v : neg.spins) v = -1.0 * v;
    const auto a = rasterize(g, s, Layer::top);
    const auto b = rasterize(g, neg, Layer::top);
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        CHECK(b.pixels[i] == -a.pixels[i]);
        CHECK(std::abs(a.pixels[i]) <= 1.0f);
    }
}

}
