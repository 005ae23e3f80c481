#include "sforge/lattice.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "json.hpp"

#include "sforge/errors.hpp"

namespace sforge {

namespace {

constexpr double kSqrt3 = std::numbers::sqrt3;
constexpr Vec2 kA1{1.0, 0.0};
constexpr Vec2 kA2{0.5, kSqrt3 / 2.0};

double wrap01(double f) {
    f -= std::floor(f);
    // floor can leave exactly 1.0 for tiny negative inputs
    return f >= 1.0 ? 0.0 : f;
}

// Integer supercell of one layer: columns t1 = (a, b), t2 = (c, d) in that
// layer's own (a1, a2) basis.
struct Supercell {
    std::int64_t a, b, c, d;
    std::int64_t det() const { return a * d - b * c; }
};

Supercell supercell_for(Layer layer, std::int64_t m) {
    if (layer == Layer::bottom) return {m, m + 1, -(m + 1), 2 * m + 1};
    return {m + 1, m, -m, 2 * m + 1};
}

struct LayerBuild {
    std::vector<LatticeSite> sites;
    std::vector<IntraBond> bonds;
};

std::int64_t floor_mod(std::int64_t x, std::int64_t n) {
    const std::int64_t r = x % n;
    return r < 0 ? r + n : r;
}

LayerBuild build_layer(Layer layer, std::int64_t m, const MoireCell& cell, std::int32_t id_offset) {
    const Supercell sc = supercell_for(layer, m);
    const std::int64_t det = sc.det();

    // Fractional numerators of lattice point (i, j): adj(M) (i, j).
    auto numerators = [&](std::int64_t i, std::int64_t j) {
        return std::array<std::int64_t, 2>{sc.d * i - sc.c * j, -sc.b * i + sc.a * j};
    };

    const std::int64_t i_lo = std::min({std::int64_t{0}, sc.a, sc.c, sc.a + sc.c});
    const std::int64_t i_hi = std::max({std::int64_t{0}, sc.a, sc.c, sc.a + sc.c});
    const std::int64_t j_lo = std::min({std::int64_t{0}, sc.b, sc.d, sc.b + sc.d});
    const std::int64_t j_hi = std::max({std::int64_t{0}, sc.b, sc.d, sc.b + sc.d});

    struct CellPoint {
        std::int64_t i, j, n1, n2;
    };
    std::vector<CellPoint> points;
    points.reserve(static_cast<std::size_t>(det));
    for (std::int64_t j = j_lo; j <= j_hi; ++j) {
        for (std::int64_t i = i_lo; i <= i_hi; ++i) {
            const auto n = numerators(i, j);
            if (n[0] >= 0 && n[0] < det && n[1] >= 0 && n[1] < det) points.push_back({i, j, n[0], n[1]});
        }
    }

    std::unordered_map<std::int64_t, std::int32_t> cell_of;  // canonical key -> unit-cell ordinal
    cell_of.reserve(points.size() * 2);
    for (std::size_t k = 0; k < points.size(); ++k) {
        cell_of.emplace(points[k].n1 * det + points[k].n2, static_cast<std::int32_t>(k));
    }
    auto lookup = [&](std::int64_t i, std::int64_t j) {
        const auto n = numerators(i, j);
        return cell_of.at(floor_mod(n[0], det) * det + floor_mod(n[1], det));
    };

    // B offset (1/3, 1/3) in the layer basis, as fractional moire coordinates.
    const double detd = static_cast<double>(det);
    const double b_off1 = static_cast<double>(sc.d - sc.c) / (3.0 * detd);
    const double b_off2 = static_cast<double>(sc.a - sc.b) / (3.0 * detd);

    LayerBuild out;
    const auto n_cells = static_cast<std::int32_t>(points.size());
    out.sites.resize(2 * points.size());
    for (std::int32_t k = 0; k < n_cells; ++k) {
        const auto& p = points[static_cast<std::size_t>(k)];
        const double f1 = static_cast<double>(p.n1) / detd;
        const double f2 = static_cast<double>(p.n2) / detd;
        auto& sa = out.sites[static_cast<std::size_t>(2 * k)];
        sa.id = id_offset + 2 * k;
        sa.layer = layer;
        sa.sublattice = Sublattice::A;
        sa.position = cell.from_fractional({f1, f2});
        auto& sb = out.sites[static_cast<std::size_t>(2 * k + 1)];
        sb.id = id_offset + 2 * k + 1;
        sb.layer = layer;
        sb.sublattice = Sublattice::B;
        sb.position = cell.from_fractional({wrap01(f1 + b_off1), wrap01(f2 + b_off2)});
    }

    // A(i, j) bonds to B(i, j), B(i - 1, j), B(i, j - 1).
    out.bonds.reserve(3 * points.size());
    for (std::int32_t k = 0; k < n_cells; ++k) {
        const auto& p = points[static_cast<std::size_t>(k)];
        const std::int32_t a_id = id_offset + 2 * k;
        for (const auto& [di, dj] : {std::pair{0, 0}, std::pair{-1, 0}, std::pair{0, -1}}) {
            const std::int32_t b_id = id_offset + 2 * lookup(p.i + di, p.j + dj) + 1;
            out.bonds.push_back({a_id, b_id});
        }
    }
    return out;
}

Adjacency make_adjacency(std::size_t n_sites, const std::vector<IntraBond>& bonds) {
    Adjacency adj;
    adj.offsets.assign(n_sites + 1, 0);
    for (const auto& b : bonds) {
        ++adj.offsets[static_cast<std::size_t>(b.i) + 1];
        ++adj.offsets[static_cast<std::size_t>(b.j) + 1];
    }
    for (std::size_t s = 0; s < n_sites; ++s) adj.offsets[s + 1] += adj.offsets[s];
    adj.neighbors.resize(static_cast<std::size_t>(adj.offsets.back()));
    std::vector<std::int32_t> fill(adj.offsets.begin(), adj.offsets.end() - 1);
    for (const auto& b : bonds) {
        adj.neighbors[static_cast<std::size_t>(fill[static_cast<std::size_t>(b.i)]++)] = b.j;
        adj.neighbors[static_cast<std::size_t>(fill[static_cast<std::size_t>(b.j)]++)] = b.i;
    }
    return adj;
}

Adjacency make_weighted_adjacency(std::size_t n_sites, const std::vector<InterPair>& pairs) {
    Adjacency adj;
    adj.offsets.assign(n_sites + 1, 0);
    for (const auto& p : pairs) {
        ++adj.offsets[static_cast<std::size_t>(p.i) + 1];
        ++adj.offsets[static_cast<std::size_t>(p.j) + 1];
    }
    for (std::size_t s = 0; s < n_sites; ++s) adj.offsets[s + 1] += adj.offsets[s];
    adj.neighbors.resize(static_cast<std::size_t>(adj.offsets.back()));
    adj.weights.resize(adj.neighbors.size());
    std::vector<std::int32_t> fill(adj.offsets.begin(), adj.offsets.end() - 1);
    for (const auto& p : pairs) {
        auto& fi = fill[static_cast<std::size_t>(p.i)];
        adj.neighbors[static_cast<std::size_t>(fi)] = p.j;
        adj.weights[static_cast<std::size_t>(fi++)] = p.weight;
        auto& fj = fill[static_cast<std::size_t>(p.j)];
        adj.neighbors[static_cast<std::size_t>(fj)] = p.i;
        adj.weights[static_cast<std::size_t>(fj++)] = p.weight;
    }
    return adj;
}

// Half of the shortest lattice-plane spacing of the cell.
double half_min_width(const MoireCell& cell) {
    const double area = std::abs(cell.area());
    return 0.5 * std::min(area / norm(cell.l1()), area / norm(cell.l2()));
}

}  // namespace

MoireIndex MoireIndex::checked(int m) {
    if (m < 1) throw InvalidArgument("moire index must be >= 1, got " + std::to_string(m));
    return MoireIndex{m};
}

void CouplingProfile::validate() const {
    if (!(cutoff_radius > 0.0) || !std::isfinite(cutoff_radius)) {
        throw InvalidArgument("coupling cutoff_radius must be positive and finite");
    }
    if (!(j_perp_scale >= 0.0) || !std::isfinite(j_perp_scale)) {
        throw InvalidArgument("coupling j_perp_scale must be non-negative and finite");
    }
    if (!(registry_harmonic >= 0.0 && registry_harmonic <= 1.0)) {
        throw InvalidArgument("coupling registry_harmonic must lie in [0, 1]");
    }
}

MoireCell::MoireCell(Vec2 l1, Vec2 l2) : l1_(l1), l2_(l2) {
    if (cross(l1, l2) <= 0.0) throw InvalidArgument("moire cell vectors must be right-handed");
}

Vec2 MoireCell::to_fractional(Vec2 r) const {
    const double inv = 1.0 / cross(l1_, l2_);
    return {cross(r, l2_) * inv, cross(l1_, r) * inv};
}

Vec2 MoireCell::wrap(Vec2 r) const {
    const Vec2 f = to_fractional(r);
    return from_fractional({wrap01(f.x), wrap01(f.y)});
}

Vec2 MoireCell::min_image(Vec2 d) const {
    const Vec2 f = to_fractional(d);
    const Vec2 base = d - from_fractional({std::round(f.x), std::round(f.y)});
    Vec2 best = base;
    double best_len = dot(base, base);
    for (int s1 = -1; s1 <= 1; ++s1) {
        for (int s2 = -1; s2 <= 1; ++s2) {
            if (s1 == 0 && s2 == 0) continue;
            const Vec2 cand = base + from_fractional({static_cast<double>(s1), static_cast<double>(s2)});
            const double len = dot(cand, cand);
            if (len < best_len) {
                best_len = len;
                best = cand;
            }
        }
    }
    return best;
}

double commensurate_angle(MoireIndex idx) {
    if (idx.m < 1) throw InvalidArgument("moire index must be >= 1, got " + std::to_string(idx.m));
    // cos(theta) = 1 - 1/(2 n)  <=>  sin(theta/2) = 1 / (2 sqrt(n)), n = 3m^2 + 3m + 1
    const double n = static_cast<double>(cells_per_layer(idx));
    return 2.0 * std::asin(0.5 / std::sqrt(n)) * 180.0 / std::numbers::pi;
}

std::vector<MoireIndex> commensurate_indices_in_range(double theta_min_deg, double theta_max_deg,
                                                      double tol_deg) {
    if (!(theta_min_deg > 0.0 && theta_min_deg < theta_max_deg)) {
        throw InvalidArgument("angle range must satisfy 0 < theta_min < theta_max");
    }
    std::vector<MoireIndex> out;
    // theta(m) ~ 1/(sqrt(3) m) radians, so m beyond this bound is below theta_min.
    const double lo = theta_min_deg - tol_deg;
    const double hi = theta_max_deg + tol_deg;
    const double theta_min_rad = std::max(lo, 1e-6) * std::numbers::pi / 180.0;
    const int m_max = static_cast<int>(std::ceil(1.0 / (std::numbers::sqrt3 * theta_min_rad))) + 2;
    for (int m = 1; m <= m_max; ++m) {
        const double theta = commensurate_angle(MoireIndex{m});
        if (theta < lo) break;
        if (theta <= hi) out.push_back(MoireIndex{m});
    }
    return out;
}

double registry_factor(const CouplingProfile& profile, Vec2 u) {
    // First-star reciprocal vectors of the bottom lattice.
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const Vec2 g1{two_pi, -two_pi / kSqrt3};
    const Vec2 g2{0.0, 2.0 * two_pi / kSqrt3};
    const Vec2 g3 = -1.0 * (g1 + g2);
    const double harmonic = (std::cos(dot(g1, u)) + std::cos(dot(g2, u)) + std::cos(dot(g3, u))) / 3.0;
    return (1.0 - profile.registry_harmonic) + profile.registry_harmonic * harmonic;
}

double interlayer_coupling(const CouplingProfile& profile, Vec2 registry_displacement_,
                           double in_plane_distance) {
    if (in_plane_distance < 0.0) throw InvalidArgument("in-plane distance must be non-negative");
    if (in_plane_distance > profile.cutoff_radius) return 0.0;
    const double rho0 = 0.5 * profile.cutoff_radius;
    const double radial = std::exp(-(in_plane_distance / rho0) * (in_plane_distance / rho0));
    return profile.j_perp_scale * registry_factor(profile, registry_displacement_) * radial;
}

Vec2 registry_displacement(double theta_deg, Vec2 r) {
    return r - rotate(r, -theta_deg * std::numbers::pi / 180.0);
}

std::vector<InterPair> enumerate_inter_pairs(const std::vector<LatticeSite>& sites, const MoireCell& cell,
                                             double theta_deg, const CouplingProfile& profile, Layer first) {
    profile.validate();
    if (profile.cutoff_radius >= half_min_width(cell)) {
        throw InvalidArgument("coupling cutoff_radius must be below half the moire cell width");
    }
    const Layer second = first == Layer::top ? Layer::bottom : Layer::top;

    // Bin the second layer on a fractional grid whose bins are at least one cutoff wide.
    const double area = std::abs(cell.area());
    const int bins1 = std::max(1, static_cast<int>(std::floor(area / norm(cell.l2()) / profile.cutoff_radius)));
    const int bins2 = std::max(1, static_cast<int>(std::floor(area / norm(cell.l1()) / profile.cutoff_radius)));
    auto bin_of = [&](Vec2 r) {
        const Vec2 f = cell.to_fractional(r);
        const int b1 = std::min(bins1 - 1, static_cast<int>(wrap01(f.x) * bins1));
        const int b2 = std::min(bins2 - 1, static_cast<int>(wrap01(f.y) * bins2));
        return std::pair{b1, b2};
    };
    std::vector<std::vector<std::int32_t>> bins(static_cast<std::size_t>(bins1 * bins2));
    for (const auto& s : sites) {
        if (s.layer != second) continue;
        const auto [b1, b2] = bin_of(s.position);
        bins[static_cast<std::size_t>(b1 * bins2 + b2)].push_back(s.id);
    }

    std::vector<InterPair> out;
    std::vector<std::int32_t> candidates;
    for (const auto& s : sites) {
        if (s.layer != first) continue;
        candidates.clear();
        const auto [c1, c2] = bin_of(s.position);
        for (int d1 = -1; d1 <= 1; ++d1) {
            for (int d2 = -1; d2 <= 1; ++d2) {
                const int b1 = ((c1 + d1) % bins1 + bins1) % bins1;
                const int b2 = ((c2 + d2) % bins2 + bins2) % bins2;
                const auto& bin = bins[static_cast<std::size_t>(b1 * bins2 + b2)];
                candidates.insert(candidates.end(), bin.begin(), bin.end());
            }
        }
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        for (const std::int32_t other : candidates) {
            const std::int32_t top = first == Layer::top ? s.id : other;
            const std::int32_t bottom = first == Layer::top ? other : s.id;
            const Vec2 r_top = sites[static_cast<std::size_t>(top)].position;
            const Vec2 d = cell.min_image(sites[static_cast<std::size_t>(bottom)].position - r_top);
            const double rho = norm(d);
            if (rho > profile.cutoff_radius) continue;
            const Vec2 u = registry_displacement(theta_deg, r_top + 0.5 * d);
            out.push_back({top, bottom, interlayer_coupling(profile, u, rho)});
        }
    }
    std::sort(out.begin(), out.end(), [](const InterPair& x, const InterPair& y) {
        return x.i != y.i ? x.i < y.i : x.j < y.j;
    });
    return out;
}

LatticeGraph build_superlattice(MoireIndex idx, const CouplingProfile& profile) {
    if (idx.m < 1) throw InvalidArgument("moire index must be >= 1, got " + std::to_string(idx.m));
    profile.validate();

    const std::int64_t m = idx.m;
    LatticeGraph g;
    g.index = idx;
    g.theta_deg = commensurate_angle(idx);
    g.profile = profile;
    g.cell = MoireCell(static_cast<double>(m) * kA1 + static_cast<double>(m + 1) * kA2,
                       static_cast<double>(-(m + 1)) * kA1 + static_cast<double>(2 * m + 1) * kA2);

    const auto n_layer = static_cast<std::int32_t>(sites_per_layer(idx));
    LayerBuild top = build_layer(Layer::top, m, g.cell, 0);
    LayerBuild bottom = build_layer(Layer::bottom, m, g.cell, n_layer);

    g.sites = std::move(top.sites);
    g.sites.insert(g.sites.end(), bottom.sites.begin(), bottom.sites.end());
    g.intra_bonds = std::move(top.bonds);
    g.intra_bonds.insert(g.intra_bonds.end(), bottom.bonds.begin(), bottom.bonds.end());
    g.inter_pairs = enumerate_inter_pairs(g.sites, g.cell, g.theta_deg, profile, Layer::top);

    g.intra = make_adjacency(g.sites.size(), g.intra_bonds);
    g.inter = make_weighted_adjacency(g.sites.size(), g.inter_pairs);
    return g;
}

LatticeGraph build_monolayer(MoireIndex idx) {
    if (idx.m < 1) throw InvalidArgument("moire index must be >= 1, got " + std::to_string(idx.m));
    const std::int64_t m = idx.m;
    LatticeGraph g;
    g.index = idx;
    g.theta_deg = commensurate_angle(idx);
    g.profile.j_perp_scale = 0.0;
    g.layers = 1;
    g.cell = MoireCell(static_cast<double>(m) * kA1 + static_cast<double>(m + 1) * kA2,
                       static_cast<double>(-(m + 1)) * kA1 + static_cast<double>(2 * m + 1) * kA2);
    LayerBuild top = build_layer(Layer::top, m, g.cell, 0);
    g.sites = std::move(top.sites);
    g.intra_bonds = std::move(top.bonds);
    g.intra = make_adjacency(g.sites.size(), g.intra_bonds);
    g.inter = make_weighted_adjacency(g.sites.size(), g.inter_pairs);
    return g;
}

std::string graph_to_json(const LatticeGraph& graph) {
    nlohmann::json j;
    j["m"] = graph.index.m;
    j["theta_deg"] = graph.theta_deg;
    j["cell"] = {{graph.cell.l1().x, graph.cell.l1().y}, {graph.cell.l2().x, graph.cell.l2().y}};
    j["profile"] = {{"j_perp_scale", graph.profile.j_perp_scale},
                    {"registry_harmonic", graph.profile.registry_harmonic},
                    {"cutoff_radius", graph.profile.cutoff_radius}};
    auto& sites = j["sites"] = nlohmann::json::array();
    for (const auto& s : graph.sites) {
        sites.push_back({{"id", s.id},
                         {"layer", s.layer == Layer::top ? "top" : "bottom"},
                         {"sublattice", s.sublattice == Sublattice::A ? "A" : "B"},
                         {"x", s.position.x},
                         {"y", s.position.y}});
    }
    auto& bonds = j["intra_bonds"] = nlohmann::json::array();
    for (const auto& b : graph.intra_bonds) bonds.push_back({b.i, b.j});
    auto& pairs = j["inter_pairs"] = nlohmann::json::array();
    for (const auto& p : graph.inter_pairs) pairs.push_back({p.i, p.j, p.weight});
    return j.dump();
}

}  // namespace sforge
