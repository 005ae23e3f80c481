#include "sforge/scalestats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>

#include "sforge/errors.hpp"
#include "sforge/rng.hpp"

namespace sforge {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sample_std(std::span<const double> v, double mean) {
    if (v.size() < 2) return kNaN;
    double ss = 0.0;
    for (const double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double geometric_mean(std::span<const double> v) {
    double s = 0.0;
    for (const double x : v) s += std::log(x);
    return std::exp(s / static_cast<double>(v.size()));
}

void require_positive(std::span<const double> losses) {
    if (losses.empty()) throw DomainError("empty loss ensemble");
    for (const double x : losses) {
        if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("losses must be finite and positive");
    }
}

struct Ols {
    double slope = 0.0;
    double slope_err = kNaN;
    double intercept = 0.0;
    double intercept_err = kNaN;
    double r2 = 1.0;
};

// Points are sorted first so the floating-point sums do not depend on the
// caller's ordering.
Ols ordinary_least_squares(std::vector<FitPoint> pts) {
    std::sort(pts.begin(), pts.end(), [](const FitPoint& a, const FitPoint& b) {
        return a.x != b.x ? a.x < b.x : a.y < b.y;
    });
    const double n = static_cast<double>(pts.size());
    double mx = 0.0, my = 0.0;
    for (const auto& p : pts) {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& p : pts) {
        sxx += (p.x - mx) * (p.x - mx);
        sxy += (p.x - mx) * (p.y - my);
        syy += (p.y - my) * (p.y - my);
    }
    if (!(sxx > 0.0)) throw DegenerateDataError("fit needs at least two distinct x values");
    Ols r;
    r.slope = sxy / sxx;
    r.intercept = my - r.slope * mx;
    double ssr = 0.0;
    for (const auto& p : pts) {
        const double e = p.y - (r.intercept + r.slope * p.x);
        ssr += e * e;
    }
    r.r2 = syy > 0.0 ? 1.0 - ssr / syy : 1.0;
    if (pts.size() > 2) {
        const double s2 = ssr / (n - 2.0);
        r.slope_err = std::sqrt(s2 / sxx);
        r.intercept_err = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    }
    return r;
}

std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_number(const std::string& s, T& value) {
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    return ec == std::errc{} && ptr == s.data() + s.size() && !s.empty();
}

}  // namespace

AverageReport summarize(std::span<const double> losses) {
    require_positive(losses);
    AverageReport r;
    r.n = losses.size();
    const double n = static_cast<double>(r.n);
    r.arith_mean = std::accumulate(losses.begin(), losses.end(), 0.0) / n;
    r.arith_se = sample_std(losses, r.arith_mean) / std::sqrt(n);

    std::vector<double> logs(losses.size());
    std::transform(losses.begin(), losses.end(), logs.begin(), [](double x) { return std::log(x); });
    const double mean_log = std::accumulate(logs.begin(), logs.end(), 0.0) / n;
    r.geo_mean = std::exp(mean_log);
    r.geo_se = r.geo_mean * sample_std(logs, mean_log) / std::sqrt(n);

    r.median = median_of({losses.begin(), losses.end()});
    std::vector<double> dev(losses.size());
    std::transform(losses.begin(), losses.end(), dev.begin(), [&](double x) { return std::abs(x - r.median); });
    r.mad = median_of(std::move(dev));
    return r;
}

BootstrapResult bootstrap_geomean(std::span<const double> losses, std::size_t n_subsets, std::size_t subset_size,
                                  std::uint64_t seed) {
    require_positive(losses);
    if (subset_size == 0 || subset_size > losses.size()) {
        throw InvalidArgument("bootstrap subset size must be in [1, n]");
    }
    if (n_subsets == 0) throw InvalidArgument("bootstrap needs at least one subset");
    Rng rng(seed);
    std::vector<std::size_t> idx(losses.size());
    std::vector<double> subset(subset_size);
    std::vector<double> means;
    means.reserve(n_subsets);
    for (std::size_t s = 0; s < n_subsets; ++s) {
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t k = 0; k < subset_size; ++k) {
            std::swap(idx[k], idx[k + uniform_index(rng, idx.size() - k)]);
            subset[k] = losses[idx[k]];
        }
        means.push_back(geometric_mean(subset));
    }
    BootstrapResult r;
    r.mean = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(n_subsets);
    double ss = 0.0;
    for (const double m : means) ss += (m - r.mean) * (m - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(n_subsets));
    return r;
}

double PowerLawFit::predict(double x) const { return std::exp(log_prefactor - alpha * std::log(x)); }

PowerLawFit fit_power_law(std::span<const FitPoint> points, const FitMask& mask) {
    std::vector<FitPoint> logs;
    PowerLawFit fit;
    fit.x_min = std::numeric_limits<double>::infinity();
    fit.x_max = 0.0;
    for (const auto& p : points) {
        if (!(p.x > 0.0) || !(p.y > 0.0) || !std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw DomainError("power-law fit needs positive finite coordinates");
        }
        if (!mask.includes(p)) continue;
        logs.push_back({std::log(p.x), std::log(p.y)});
        fit.x_min = std::min(fit.x_min, p.x);
        fit.x_max = std::max(fit.x_max, p.x);
    }
    if (logs.size() < 2) throw DegenerateDataError("power-law fit needs at least two in-range points");
    fit.n_points = logs.size();
    const Ols ols = ordinary_least_squares(std::move(logs));
    fit.alpha = -ols.slope;
    fit.alpha_err = ols.slope_err;
    fit.log_prefactor = ols.intercept;
    fit.log_prefactor_err = ols.intercept_err;
    fit.r2 = ols.r2;
    return fit;
}

LogFit fit_log_linear(std::span<const FitPoint> points) {
    if (points.size() < 2) throw DegenerateDataError("log-linear fit needs at least two points");
    std::vector<FitPoint> pts;
    for (const auto& p : points) {
        if (!(p.x > 0.0) || !std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw DomainError("log-linear fit needs positive finite N and finite values");
        }
        pts.push_back({std::log(p.x), p.y});
    }
    const Ols ols = ordinary_least_squares(std::move(pts));
    return {ols.slope, ols.slope_err, ols.intercept, ols.intercept_err, points.size()};
}

Histogram histogram(std::span<const double> values, std::span<const double> edges) {
    if (edges.size() < 2) throw InvalidArgument("histogram needs at least two edges");
    if (std::adjacent_find(edges.begin(), edges.end(), std::greater_equal<>{}) != edges.end()) {
        throw InvalidArgument("histogram edges must be strictly ascending");
    }
    Histogram h;
    h.counts.assign(edges.size() - 1, 0);
    for (const double v : values) {
        if (v < edges.front()) {
            ++h.underflow;
        } else if (!(v < edges.back())) {
            ++h.overflow;
        } else {
            const auto it = std::upper_bound(edges.begin(), edges.end(), v);
            ++h.counts[static_cast<std::size_t>(it - edges.begin()) - 1];
        }
    }
    return h;
}

std::string format_result_row(const ResultRow& row) {
    char mse[32];
    const auto res = std::to_chars(mse, mse + sizeof mse, row.test_mse, std::chars_format::general, 17);
    return row.target + ',' + row.arch_id + ',' + std::to_string(row.n_m) + ',' + std::to_string(row.n_d) + ',' +
           std::to_string(row.seed) + ',' + std::string(mse, res.ptr);
}

ResultRow parse_result_row(const std::string& line) {
    const auto f = split_commas(line);
    if (f.size() != 6) throw FormatError("expected 6 fields, found " + std::to_string(f.size()));
    ResultRow r;
    r.target = f[0];
    r.arch_id = f[1];
    if (r.target.empty() || r.arch_id.empty()) throw FormatError("empty target or arch_id");
    if (!parse_number(f[2], r.n_m) || r.n_m == 0) throw FormatError("bad N_M '" + f[2] + "'");
    if (!parse_number(f[3], r.n_d) || r.n_d == 0) throw FormatError("bad N_D '" + f[3] + "'");
    if (!parse_number(f[4], r.seed)) throw FormatError("bad seed '" + f[4] + "'");
    if (!parse_number(f[5], r.test_mse) || !std::isfinite(r.test_mse) || !(r.test_mse > 0.0)) {
        throw FormatError("test_mse must be a positive finite number, got '" + f[5] + "'");
    }
    return r;
}

void write_results_csv(std::ostream& os, std::span<const ResultRow> rows) {
    os << kResultsHeader << '\n';
    for (const auto& r : rows) os << format_result_row(r) << '\n';
}

std::vector<ResultRow> read_results_csv(std::istream& is) {
    std::vector<ResultRow> rows;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    auto fail = [&](const std::string& why) {
        throw FormatError("line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != kResultsHeader) fail("expected header '" + std::string(kResultsHeader) + "'");
            header_seen = true;
            continue;
        }
        try {
            rows.push_back(parse_result_row(line));
        } catch (const FormatError& e) {
            fail(e.what());
        }
    }
    if (!header_seen) throw FormatError("results CSV has no header");
    return rows;
}

}  // namespace sforge
