#include "sforge/spinsim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "sforge/errors.hpp"
#include "sforge/rng.hpp"

namespace sforge {

namespace {

void check_size(const LatticeGraph& graph, const SpinConfig& s) {
    if (s.size() != graph.size()) {
        throw DimensionError("spin config has " + std::to_string(s.size()) + " spins, graph has " +
                             std::to_string(graph.size()) + " sites");
    }
}

// J sum_nn S_j - sum_inter w S_j: the field without the on-site anisotropy term.
Vec3 exchange_field(const LatticeGraph& g, double J, std::span<const Vec3> s, std::size_t i) {
    Vec3 nn;
    for (auto k = g.intra.offsets[i]; k < g.intra.offsets[i + 1]; ++k) {
        nn += s[static_cast<std::size_t>(g.intra.neighbors[static_cast<std::size_t>(k)])];
    }
    Vec3 h = J * nn;
    for (auto k = g.inter.offsets[i]; k < g.inter.offsets[i + 1]; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        h -= g.inter.weights[kk] * s[static_cast<std::size_t>(g.inter.neighbors[kk])];
    }
    return h;
}

Vec3 full_field(const LatticeGraph& g, const HamiltonianParams& p, std::span<const Vec3> s, std::size_t i) {
    Vec3 h = exchange_field(g, p.J, s, i);
    h.z += 2.0 * p.D * s[i].z;
    return h;
}

Vec3 tangent(Vec3 h, Vec3 s) { return h - dot(h, s) * s; }

// Upper bound on |h_i| over all sites for unit spins.
double field_scale(const LatticeGraph& g, const HamiltonianParams& p) {
    double worst = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        double sum = p.J * static_cast<double>(g.intra.degree(i));
        for (auto k = g.inter.offsets[i]; k < g.inter.offsets[i + 1]; ++k) {
            sum += std::abs(g.inter.weights[static_cast<std::size_t>(k)]);
        }
        worst = std::max(worst, sum);
    }
    return worst + 2.0 * p.D;
}

Vec3 random_unit(Rng& rng) {
    for (;;) {
        const Vec3 v{normal01(rng), normal01(rng), normal01(rng)};
        const double n = norm(v);
        if (n > 1e-12) return (1.0 / n) * v;
    }
}

struct DescentState {
    std::vector<Vec3> field;
    std::vector<Vec3> grad;  // -h_perp
    double max_torque = 0.0;
};

void evaluate(const LatticeGraph& g, const HamiltonianParams& p, std::span<const Vec3> s, DescentState& st) {
    st.max_torque = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        st.field[i] = full_field(g, p, s, i);
        st.grad[i] = -tangent(st.field[i], s[i]);
        st.max_torque = std::max(st.max_torque, norm(cross(s[i], st.field[i])));
    }
}

void anneal(const LatticeGraph& g, const HamiltonianParams& p, const SolverConfig& cfg, std::vector<Vec3>& s,
            Rng& rng) {
    const std::size_t n = s.size();
    if (n == 0) return;
    const std::uint64_t steps = cfg.anneal_steps.value_or(200 * static_cast<std::uint64_t>(n));
    if (steps == 0) return;
    const double t_start = cfg.t_start.value_or(2.0 * p.J);
    // Geometric schedules cannot reach zero; t_end == 0 anneals to 1e-6 t_start.
    const double t_end = cfg.t_end > 0.0 ? cfg.t_end : 1e-6 * t_start;
    const std::uint64_t sweeps = (steps + n - 1) / n;

    double sigma = 1.0;
    std::uint64_t proposal = 0;
    for (std::uint64_t sweep = 0; sweep < sweeps; ++sweep) {
        const double frac = sweeps > 1 ? static_cast<double>(sweep) / static_cast<double>(sweeps - 1) : 1.0;
        const double temperature = t_start > 0.0 ? t_start * std::pow(t_end / t_start, frac) : 0.0;
        std::uint64_t accepted = 0;
        std::uint64_t tried = 0;
        for (std::size_t i = 0; i < n && proposal < steps; ++i, ++proposal) {
            const Vec3 old = s[i];
            const Vec3 trial = normalized(old + sigma * Vec3{normal01(rng), normal01(rng), normal01(rng)});
            const Vec3 h = exchange_field(g, p.J, s, i);
            const double delta = -dot(h, trial - old) - p.D * (trial.z * trial.z - old.z * old.z);
            ++tried;
            const double u = uniform01(rng);
            if (delta <= 0.0 || (temperature > 0.0 && u < std::exp(-delta / temperature))) {
                s[i] = trial;
                ++accepted;
            }
        }
        const double rate = tried > 0 ? static_cast<double>(accepted) / static_cast<double>(tried) : 0.5;
        sigma = std::clamp(sigma * (rate > 0.5 ? 1.1 : 0.9), 1e-3, 2.0);
    }
}

}  // namespace

SpinConfig SpinConfig::uniform(std::size_t n, Vec3 direction) {
    return SpinConfig{std::vector<Vec3>(n, normalized(direction))};
}

SpinConfig SpinConfig::random(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    SpinConfig out;
    out.spins.resize(n);
    for (auto& v : out.spins) v = random_unit(rng);
    return out;
}

void SolverConfig::validate(const HamiltonianParams& params) const {
    const double ts = t_start.value_or(2.0 * params.J);
    if (!(t_end >= 0.0)) throw InvalidArgument("solver t_end must be >= 0");
    if (!(ts >= t_end)) throw InvalidArgument("solver t_start must be >= t_end");
    if (!(torque_tol > 0.0)) throw InvalidArgument("solver torque_tol must be > 0");
    if (!(descent_rate > 0.0)) throw InvalidArgument("solver descent_rate must be > 0");
}

double energy(const LatticeGraph& graph, const HamiltonianParams& params, const SpinConfig& s) {
    check_size(graph, s);
    double exchange = 0.0;
    for (const auto& b : graph.intra_bonds) {
        exchange += dot(s.spins[static_cast<std::size_t>(b.i)], s.spins[static_cast<std::size_t>(b.j)]);
    }
    double aniso = 0.0;
    for (const auto& v : s.spins) aniso += v.z * v.z;
    double inter = 0.0;
    for (const auto& pr : graph.inter_pairs) {
        inter += pr.weight * dot(s.spins[static_cast<std::size_t>(pr.i)], s.spins[static_cast<std::size_t>(pr.j)]);
    }
    return -params.J * exchange - params.D * aniso + inter;
}

Vec3 effective_field(const LatticeGraph& graph, const HamiltonianParams& params, const SpinConfig& s,
                     std::size_t site) {
    check_size(graph, s);
    if (site >= graph.size()) {
        throw InvalidArgument("site index " + std::to_string(site) + " out of range");
    }
    return full_field(graph, params, s.spins, site);
}

double max_torque(const LatticeGraph& graph, const HamiltonianParams& params, const SpinConfig& s) {
    check_size(graph, s);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        worst = std::max(worst, norm(cross(s.spins[i], full_field(graph, params, s.spins, i))));
    }
    return worst;
}

GroundStateResult relax(const LatticeGraph& graph, const HamiltonianParams& params, SpinConfig start,
                        const SolverConfig& cfg) {
    check_size(graph, start);
    cfg.validate(params);
    const std::size_t n = start.size();

    GroundStateResult res;
    res.state = std::move(start);
    auto& s = res.state.spins;
    res.post_anneal_energy = energy(graph, params, res.state);

    const double scale = std::max(field_scale(graph, params), std::numeric_limits<double>::min());
    const double eta_min = 1e-4 / scale;
    const double eta_max = 1e5 / scale;
    double eta = cfg.descent_rate / scale;

    DescentState cur{std::vector<Vec3>(n), std::vector<Vec3>(n), 0.0};
    DescentState next = cur;
    std::vector<Vec3> delta(n);
    std::vector<Vec3> trial(n);

    evaluate(graph, params, s, cur);
    double e_now = res.post_anneal_energy;
    if (cfg.record_trace) res.energy_trace.push_back(e_now);

    while (true) {
        if (cur.max_torque < cfg.torque_tol) {
            res.converged = true;
            break;
        }
        if (res.descent_iters >= cfg.max_descent_iters) break;

        // Backtrack until the first-order-accurate energy change is non-positive.
        bool accepted = false;
        for (int attempt = 0; attempt < 60; ++attempt) {
            double linear = 0.0;
            double aniso = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                // Linear term evaluated for exactly-unit spins; dot(delta, h) would
                // pick up round-off in |S| times (h . S), which swamps tiny steps;
                // v is tangent, so v . h = |v|^2 / eta.
                const Vec3 v = (-eta) * cur.grad[i];
                const double v2 = dot(v, v);
                const double c = std::sqrt(1.0 + v2);
                const double along = v2 / (c * (1.0 + c));
                delta[i] = (1.0 / c) * v - along * s[i];
                linear += v2 / (eta * c) - along * dot(cur.field[i], s[i]);
                aniso += delta[i].z * delta[i].z;
            }
            double quad = 0.0;
            for (std::size_t i = 0; i < n; ++i) quad += dot(delta[i], exchange_field(graph, params.J, delta, i));
            const double change = -linear - 0.5 * quad - params.D * aniso;
            if (change <= 0.0) {
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if (!accepted) break;  // stalled at floating-point resolution

        for (std::size_t i = 0; i < n; ++i) trial[i] = normalized(s[i] + delta[i]);
        evaluate(graph, params, trial, next);

        // Barzilai-Borwein proposal for the next step length.
        double ss = 0.0;
        double sy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 ds = trial[i] - s[i];
            ss += dot(ds, ds);
            sy += dot(ds, next.grad[i] - cur.grad[i]);
        }
        eta = sy > 0.0 ? std::clamp(ss / sy, eta_min, eta_max) : std::min(2.0 * eta, eta_max);

        s.swap(trial);
        std::swap(cur, next);
        ++res.descent_iters;
        if (cfg.record_trace) {
            e_now = energy(graph, params, res.state);
            res.energy_trace.push_back(e_now);
        }
    }
    res.max_torque = cur.max_torque;
    res.energy = energy(graph, params, res.state);
    return res;
}

GroundStateResult ground_state(const LatticeGraph& graph, const HamiltonianParams& params,
                               const SolverConfig& cfg) {
    cfg.validate(params);
    Rng rng(cfg.seed);
    SpinConfig s;
    s.spins.resize(graph.size());
    for (auto& v : s.spins) v = random_unit(rng);
    anneal(graph, params, cfg, s.spins, rng);
    return relax(graph, params, std::move(s), cfg);
}

double layer_mean_sz(const LatticeGraph& graph, const SpinConfig& s, Layer layer) {
    check_size(graph, s);
    const std::size_t lo = graph.layer_begin(layer);
    const std::size_t hi = graph.layer_end(layer);
    if (hi == lo) return 0.0;
    double sum = 0.0;
    for (std::size_t i = lo; i < hi; ++i) sum += s.spins[i].z;
    return sum / static_cast<double>(hi - lo);
}

Vec2 RasterMap::pixel_position(const LatticeGraph& graph, int row, int col) const {
    return graph.cell.from_fractional({(col + 0.5) / width, (row + 0.5) / height});
}

RasterMap RasterMap::build(const LatticeGraph& graph, Layer layer, int height, int width) {
    if (height < 1 || width < 1) throw InvalidArgument("raster dimensions must be positive");
    RasterMap map;
    map.layer = layer;
    map.height = height;
    map.width = width;
    map.site.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), -1);

    const std::size_t lo = graph.layer_begin(layer);
    const std::size_t hi = graph.layer_end(layer);
    if (lo == hi) throw InvalidArgument("cannot rasterize an empty layer");

    // No point of the plane is farther than 1/sqrt(3) from a honeycomb site,
    // so bins at least that wide only need their 3x3 neighbourhood searched.
    constexpr double kReach = 0.6;
    const auto& cell = graph.cell;
    const double area = std::abs(cell.area());
    const int bins1 = std::max(1, static_cast<int>(std::floor(area / norm(cell.l2()) / kReach)));
    const int bins2 = std::max(1, static_cast<int>(std::floor(area / norm(cell.l1()) / kReach)));
    auto bin_coord = [](double f, int bins) {
        f -= std::floor(f);
        return std::min(bins - 1, static_cast<int>(f * bins));
    };
    std::vector<std::vector<std::int32_t>> bins(static_cast<std::size_t>(bins1 * bins2));
    for (std::size_t i = lo; i < hi; ++i) {
        const Vec2 f = cell.to_fractional(graph.sites[i].position);
        bins[static_cast<std::size_t>(bin_coord(f.x, bins1) * bins2 + bin_coord(f.y, bins2))].push_back(
            static_cast<std::int32_t>(i));
    }

    std::vector<std::int32_t> candidates;
    for (int r = 0; r < height; ++r) {
        for (int c = 0; c < width; ++c) {
            const Vec2 p = map.pixel_position(graph, r, c);
            const Vec2 f = cell.to_fractional(p);
            const int b1 = bin_coord(f.x, bins1);
            const int b2 = bin_coord(f.y, bins2);
            candidates.clear();
            for (int d1 = -1; d1 <= 1; ++d1) {
                for (int d2 = -1; d2 <= 1; ++d2) {
                    const auto& bin = bins[static_cast<std::size_t>(((b1 + d1 + bins1) % bins1) * bins2 +
                                                                    (b2 + d2 + bins2) % bins2)];
                    candidates.insert(candidates.end(), bin.begin(), bin.end());
                }
            }
            std::sort(candidates.begin(), candidates.end());
            candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
            double best = std::numeric_limits<double>::infinity();
            std::int32_t best_site = -1;
            for (const std::int32_t id : candidates) {
                const Vec2 d = cell.min_image(graph.sites[static_cast<std::size_t>(id)].position - p);
                const double d2 = dot(d, d);
                if (d2 < best) {
                    best = d2;
                    best_site = id;
                }
            }
            map.site[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)] =
                best_site;
        }
    }
    return map;
}

DomainImage rasterize(const RasterMap& map, const SpinConfig& s) {
    DomainImage img;
    img.layer = map.layer;
    img.pixels.resize(map.site.size());
    for (std::size_t k = 0; k < map.site.size(); ++k) {
        const auto site = static_cast<std::size_t>(map.site[k]);
        if (site >= s.size()) throw DimensionError("raster map refers to a site outside the spin config");
        img.pixels[k] = static_cast<float>(std::clamp(s.spins[site].z, -1.0, 1.0));
    }
    return img;
}

DomainImage rasterize(const LatticeGraph& graph, const SpinConfig& s, Layer layer) {
    check_size(graph, s);
    return rasterize(RasterMap::build(graph, layer), s);
}

}  // namespace sforge
