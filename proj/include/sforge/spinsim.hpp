#pragma once

// Classical unit-spin model on a twisted bilayer:
//
//   H = -J sum_<ij> S_i . S_j - D sum_i (S_i . z)^2 + sum_(i in top, j in bottom) w_ij S_i . S_j
//
// with w_ij taken from LatticeGraph::inter_pairs. Energies and fields in meV.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "sforge/lattice.hpp"
#include "sforge/vec.hpp"

namespace sforge {

struct HamiltonianParams {
    double J = 2.0;  // intralayer exchange, meV
    double D = 0.2;  // single-ion anisotropy, meV
};

struct SpinConfig {
    std::vector<Vec3> spins;

    std::size_t size() const { return spins.size(); }
    static SpinConfig uniform(std::size_t n, Vec3 direction);
    static SpinConfig random(std::size_t n, std::uint64_t seed);
};

struct SolverConfig {
    std::optional<std::uint64_t> anneal_steps;  // Metropolis proposals; default 200 * sites
    std::optional<double> t_start;              // meV; default 2 J
    double t_end = 0.01;                        // meV
    double descent_rate = 0.1;                  // initial step, in units of 1 / (field scale)
    double torque_tol = 1e-6;                   // meV
    std::uint64_t max_descent_iters = 200000;
    std::uint64_t seed = 1;
    bool record_trace = false;  // keep per-iteration descent energies

    // Throws InvalidArgument when t_start < t_end, t_end < 0 or torque_tol <= 0.
    void validate(const HamiltonianParams& params) const;
};

struct GroundStateResult {
    SpinConfig state;
    double energy = 0.0;
    double post_anneal_energy = 0.0;
    bool converged = false;  // true: torque exit, false: iteration cap
    double max_torque = 0.0;
    std::uint64_t descent_iters = 0;
    std::vector<double> energy_trace;  // filled when SolverConfig::record_trace
};

inline constexpr int kImageSize = 100;
inline constexpr int kImagePixels = kImageSize * kImageSize;

struct DomainImage {
    Layer layer = Layer::top;
    std::vector<float> pixels;  // row-major kImageSize x kImageSize, S_z in [-1, 1]
};

double energy(const LatticeGraph& graph, const HamiltonianParams& params, const SpinConfig& s);

// -dH/dS_i.
Vec3 effective_field(const LatticeGraph& graph, const HamiltonianParams& params, const SpinConfig& s,
                     std::size_t site);

// Largest |S_i x h_i| over all sites.
double max_torque(const LatticeGraph& graph, const HamiltonianParams& params, const SpinConfig& s);

// Metropolis anneal from a seeded random state, then projected torque descent.
GroundStateResult ground_state(const LatticeGraph& graph, const HamiltonianParams& params,
                               const SolverConfig& cfg);

// Descent stage alone, starting from `start`.
GroundStateResult relax(const LatticeGraph& graph, const HamiltonianParams& params, SpinConfig start,
                        const SolverConfig& cfg);

// Mean S_z over one layer.
double layer_mean_sz(const LatticeGraph& graph, const SpinConfig& s, Layer layer);

// Pixel -> nearest site of one layer under the periodic metric. Pixel (r, c)
// samples fractional cell coordinate ((c + 1/2) / W, (r + 1/2) / H).
struct RasterMap {
    Layer layer = Layer::top;
    int height = kImageSize;
    int width = kImageSize;
    std::vector<std::int32_t> site;

    static RasterMap build(const LatticeGraph& graph, Layer layer, int height = kImageSize,
                           int width = kImageSize);
    Vec2 pixel_position(const LatticeGraph& graph, int row, int col) const;
};

DomainImage rasterize(const RasterMap& map, const SpinConfig& s);
DomainImage rasterize(const LatticeGraph& graph, const SpinConfig& s, Layer layer);

}  // namespace sforge
