#pragma once

// Commensurate twisted-bilayer honeycomb superlattices.
//
// Lengths are in units of the intralayer lattice constant a0 = 1. The bottom
// layer is the unrotated honeycomb with primitive vectors a1 = (1, 0),
// a2 = (1/2, sqrt(3)/2) and sublattice B displaced by (a1 + a2) / 3. The top
// layer is the same lattice rotated counter-clockwise by theta(m) about an A
// site, so the origin is an AA-stacked point. Both layers share the moire cell
// L1 = m a1 + (m + 1) a2, L2 = -(m + 1) a1 + (2m + 1) a2 (bottom frame).

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sforge/vec.hpp"

namespace sforge {

enum class Layer : std::uint8_t { top = 0, bottom = 1 };
enum class Sublattice : std::uint8_t { A = 0, B = 1 };

struct MoireIndex {
    int m = 1;

    // Throws InvalidArgument for m < 1.
    static MoireIndex checked(int m);
    friend constexpr bool operator==(MoireIndex, MoireIndex) = default;
};

// Number of honeycomb unit cells of one layer inside the moire cell.
constexpr std::int64_t cells_per_layer(MoireIndex idx) {
    const std::int64_t m = idx.m;
    return 3 * m * m + 3 * m + 1;
}
constexpr std::int64_t sites_per_layer(MoireIndex idx) { return 2 * cells_per_layer(idx); }

inline constexpr double kNearestNeighborDistance = 0.57735026918962576;  // 1/sqrt(3)

struct LatticeSite {
    std::int32_t id = 0;
    Layer layer = Layer::top;
    Sublattice sublattice = Sublattice::A;
    Vec2 position;  // wrapped into the moire cell
};

struct IntraBond {
    std::int32_t i = 0;
    std::int32_t j = 0;
    friend constexpr bool operator==(IntraBond, IntraBond) = default;
};

// i is always a top-layer site, j a bottom-layer site.
struct InterPair {
    std::int32_t i = 0;
    std::int32_t j = 0;
    double weight = 0.0;  // meV
    friend constexpr bool operator==(InterPair, InterPair) = default;
};

struct CouplingProfile {
    double j_perp_scale = 1.5;       // meV
    double registry_harmonic = 1.0;  // 0: registry-blind AFM, 1: pure first harmonic
    double cutoff_radius = 1.0;      // a0

    // Throws InvalidArgument on cutoff <= 0, scale < 0 or harmonic outside [0, 1].
    void validate() const;
};

// Moire cell geometry with periodic wrapping.
class MoireCell {
public:
    MoireCell() = default;
    MoireCell(Vec2 l1, Vec2 l2);

    Vec2 l1() const { return l1_; }
    Vec2 l2() const { return l2_; }
    double area() const { return cross(l1_, l2_); }

    Vec2 to_fractional(Vec2 r) const;
    Vec2 from_fractional(Vec2 f) const { return f.x * l1_ + f.y * l2_; }
    Vec2 wrap(Vec2 r) const;
    // Shortest periodic image of a displacement.
    Vec2 min_image(Vec2 d) const;

private:
    Vec2 l1_{1.0, 0.0};
    Vec2 l2_{0.0, 1.0};
};

// Adjacency in compressed-row form, indexed by site id.
struct Adjacency {
    std::vector<std::int32_t> offsets;  // size n_sites + 1
    std::vector<std::int32_t> neighbors;
    std::vector<double> weights;  // empty for unweighted adjacency

    std::size_t degree(std::size_t site) const {
        return static_cast<std::size_t>(offsets[site + 1] - offsets[site]);
    }
};

struct LatticeGraph {
    MoireIndex index;
    double theta_deg = 0.0;
    CouplingProfile profile;
    MoireCell cell;
    std::vector<LatticeSite> sites;  // top layer first, then bottom
    std::vector<IntraBond> intra_bonds;
    std::vector<InterPair> inter_pairs;
    Adjacency intra;  // nearest neighbours within a layer
    Adjacency inter;  // interlayer partners with coupling weights

    std::size_t layers = 2;  // 1 for a monolayer (top only)

    std::size_t size() const { return sites.size(); }
    std::size_t layer_size() const { return sites.size() / layers; }
    bool has_layer(Layer layer) const { return layer == Layer::top || layers == 2; }
    std::size_t layer_begin(Layer layer) const {
        if (!has_layer(layer)) throw std::out_of_range("graph has no bottom layer");
        return layer == Layer::top ? 0 : layer_size();
    }
    std::size_t layer_end(Layer layer) const { return layer_begin(layer) + layer_size(); }
};

// cos(theta) = (3m^2 + 3m + 1/2) / (3m^2 + 3m + 1), in degrees.
double commensurate_angle(MoireIndex m);

// All m with theta_min <= theta(m) <= theta_max, ascending. Bounds are
// inclusive up to `tol_deg`, so quoted two-decimal endpoints such as 3.89
// admit theta(8) = 3.8902. Throws InvalidArgument unless 0 < theta_min < theta_max.
std::vector<MoireIndex> commensurate_indices_in_range(double theta_min_deg, double theta_max_deg,
                                                      double tol_deg = 0.005);

// Stacking-registry factor: +1 at AA, -1/2 at AB and BA, mixed with a constant
// by profile.registry_harmonic.
double registry_factor(const CouplingProfile& profile, Vec2 registry_displacement);

// w = j_perp_scale * g(u) * exp(-(rho / rho0)^2), rho0 = cutoff / 2; zero beyond cutoff.
double interlayer_coupling(const CouplingProfile& profile, Vec2 registry_displacement,
                           double in_plane_distance);

// Local displacement of the top layer relative to the bottom layer at r.
Vec2 registry_displacement(double theta_deg, Vec2 r);

// Interlayer pairs found by scanning `first` layer against the other one.
// Result is normalized (i in top) and sorted, so both orders agree.
std::vector<InterPair> enumerate_inter_pairs(const std::vector<LatticeSite>& sites,
                                             const MoireCell& cell, double theta_deg,
                                             const CouplingProfile& profile, Layer first);

LatticeGraph build_superlattice(MoireIndex m, const CouplingProfile& profile);

// The top layer of the same cell alone: no interlayer pairs.
LatticeGraph build_monolayer(MoireIndex m);

// Debug export; not a stable format.
std::string graph_to_json(const LatticeGraph& graph);

}  // namespace sforge
