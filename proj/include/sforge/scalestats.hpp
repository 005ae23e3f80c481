#pragma once

// Loss-ensemble statistics, power-law and log-linear fits, results CSV.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace sforge {

struct AverageReport {
    double arith_mean = 0.0;
    double arith_se = 0.0;
    double geo_mean = 0.0;
    double geo_se = 0.0;  // geo_mean * std(log) / sqrt(n)
    double median = 0.0;
    double mad = 0.0;  // median absolute deviation from the median
    std::size_t n = 0;
};

// Throws DomainError on an empty ensemble or a non-positive loss.
AverageReport summarize(std::span<const double> losses);

struct BootstrapResult {
    double mean = 0.0;  // mean of subset geometric means
    double std = 0.0;   // population std across subsets
};

BootstrapResult bootstrap_geomean(std::span<const double> losses, std::size_t n_subsets, std::size_t subset_size,
                                  std::uint64_t seed);

struct FitPoint {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const FitPoint&, const FitPoint&) = default;
};

// Points enter a fit iff x_min <= x <= x_max and y > y_floor.
struct FitMask {
    double x_min = 0.0;
    double x_max = std::numeric_limits<double>::infinity();
    double y_floor = 0.0;

    bool includes(const FitPoint& p) const { return p.x >= x_min && p.x <= x_max && p.y > y_floor; }
};

// ln y = ln C - alpha ln x. Uncertainties are NaN for two points.
struct PowerLawFit {
    double alpha = 0.0;
    double alpha_err = 0.0;
    double log_prefactor = 0.0;
    double log_prefactor_err = 0.0;
    double r2 = 0.0;
    std::size_t n_points = 0;
    double x_min = 0.0;
    double x_max = 0.0;

    double predict(double x) const;
};

PowerLawFit fit_power_law(std::span<const FitPoint> points, const FitMask& mask = {});

// y = a ln x + b
struct LogFit {
    double a = 0.0;
    double a_err = 0.0;
    double b = 0.0;
    double b_err = 0.0;
    std::size_t n_points = 0;

    bool uncertainties_defined() const { return n_points > 2; }
};

LogFit fit_log_linear(std::span<const FitPoint> points);

struct Histogram {
    std::vector<std::size_t> counts;  // bin k is [edges[k], edges[k+1])
    std::size_t underflow = 0;
    std::size_t overflow = 0;
};

Histogram histogram(std::span<const double> values, std::span<const double> edges);

// One trained network: the columns of the results CSV.
struct ResultRow {
    std::string target;
    std::string arch_id;
    std::uint64_t n_m = 0;
    std::uint64_t n_d = 0;
    std::uint64_t seed = 0;
    double test_mse = 0.0;
    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

inline constexpr const char* kResultsHeader = "target,arch_id,N_M,N_D,seed,test_mse";

// test_mse is written with 17 significant digits so it round-trips.
void write_results_csv(std::ostream& os, std::span<const ResultRow> rows);
std::string format_result_row(const ResultRow& row);
// One data line; throws FormatError on a malformed row.
ResultRow parse_result_row(const std::string& line);
// Throws FormatError naming the offending line.
std::vector<ResultRow> read_results_csv(std::istream& is);

}  // namespace sforge
