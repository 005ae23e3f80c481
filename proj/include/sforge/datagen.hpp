#pragma once

// Labeled domain-image datasets: parameter sampling, simulation, FM
// exclusion, persistence, standardization and train/validation splits.
//
// Binary layout (little-endian), 48-byte header then fixed-size records:
//
//   offset  size  field
//        0     4  magic "SFDG"
//        4     4  u32 format version
//        8     8  u64 record count
//       16     4  u32 image height
//       20     4  u32 image width
//       24     4  u32 flags (bit 0: pixels standardized)
//       28     4  u32 reserved, zero
//       32     8  f64 pixel mean applied by standardization (0 when raw)
//       40     8  f64 pixel std applied by standardization (1 when raw)
//
//   record: f32 top[H*W], f32 bottom[H*W], f64 theta_deg, f64 J, f64 D, u64 seed

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sforge/lattice.hpp"
#include "sforge/spinsim.hpp"

namespace sforge {

struct Range {
    double lo = 0.0;
    double hi = 1.0;
    bool contains(double v, double tol = 0.0) const { return v >= lo - tol && v <= hi + tol; }
};

// Sampling ranges of the three Hamiltonian parameters.
struct ParamRanges {
    Range theta_deg{1.01, 3.89};
    Range J{1.0, 10.0};
    Range D{0.01, 0.3};
};

inline constexpr double kThetaQuoteTolerance = 0.005;

struct ParamSample {
    MoireIndex m;
    double J = 0.0;
    double D = 0.0;

    double theta_deg() const { return commensurate_angle(m); }
};

struct Labels {
    double theta_deg = 0.0;
    double J = 0.0;
    double D = 0.0;
    friend bool operator==(const Labels&, const Labels&) = default;
};

enum class Target : std::uint8_t { theta, J, D };

Target parse_target(const std::string& name);
std::string target_name(Target t);
double label_value(const Labels& labels, Target t);
// Min-max normalization of one label over its sampling range, into [0, 1].
double normalized_label(const Labels& labels, Target t, const ParamRanges& ranges = {});

struct SampleRecord {
    DomainImage top;
    DomainImage bottom;
    Labels labels;
    std::uint64_t seed = 0;
};

struct PixelStats {
    double mean = 0.0;
    double std = 1.0;
    friend bool operator==(const PixelStats&, const PixelStats&) = default;
};

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 48;

// Records stored contiguously: record k's feature vector is the top image
// followed by the bottom image, 2 * H * W floats.
class Dataset {
public:
    Dataset() = default;
    Dataset(int height, int width) : height_(height), width_(width) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t image_pixels() const { return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_); }
    std::size_t feature_size() const { return 2 * image_pixels(); }
    std::size_t size() const { return labels_.size(); }
    bool empty() const { return labels_.empty(); }

    bool standardized() const { return standardized_; }
    const PixelStats& applied_stats() const { return applied_; }

    void append(const SampleRecord& rec);
    void append(std::span<const float> features, const Labels& labels, std::uint64_t seed);
    void reserve(std::size_t n);

    std::span<const float> features(std::size_t k) const;
    std::span<float> features(std::size_t k);
    const Labels& labels(std::size_t k) const { return labels_.at(k); }
    std::uint64_t seed(std::size_t k) const { return seeds_.at(k); }
    SampleRecord record(std::size_t k) const;

    std::span<const float> all_pixels() const { return pixels_; }

    // Copy of the given records, preserving order.
    Dataset subset(std::span<const std::size_t> ids) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;

private:
    friend Dataset read_dataset(const std::filesystem::path&);
    friend PixelStats standardize(Dataset&);
    friend void apply_standardization(Dataset&, const PixelStats&);

    int height_ = kImageSize;
    int width_ = kImageSize;
    bool standardized_ = false;
    PixelStats applied_{};
    std::vector<float> pixels_;
    std::vector<Labels> labels_;
    std::vector<std::uint64_t> seeds_;
};

// m uniform over `m_choices`, J and D independently uniform over their ranges.
// m_choices defaults to the commensurate set inside ranges.theta_deg.
std::vector<ParamSample> sample_params(std::uint64_t seed, std::size_t count, const ParamRanges& ranges = {},
                                       std::vector<MoireIndex> m_choices = {});

// True iff |mean S_z| exceeds the threshold on both layers.
bool is_ferromagnetic(const LatticeGraph& graph, const SpinConfig& s, double threshold = 0.99);

enum class SampleOutcome : std::uint8_t { kept, ferromagnetic, unconverged };

struct SimulatedSample {
    SampleOutcome outcome = SampleOutcome::kept;
    SampleRecord record;
};

struct GenerateOptions {
    std::size_t count = 100;
    std::uint64_t master_seed = 1;
    ParamRanges ranges{};
    std::vector<MoireIndex> m_choices;  // empty: every commensurate m in range
    CouplingProfile profile{};
    SolverConfig solver{};  // seed field ignored; one seed per draw is derived
    double fm_threshold = 0.99;
    std::size_t max_draws = 0;  // 0: 50 * count
    std::size_t threads = 1;
    bool keep_unconverged = false;
};

struct DatasetManifest {
    std::size_t record_count = 0;
    PixelStats pixel_stats;  // over every stored pixel
    Range theta_stats, J_stats, D_stats;  // observed label min / max
    std::uint64_t master_seed = 0;
    std::uint32_t format_version = kDatasetVersion;
    std::size_t draws = 0;
    std::size_t fm_excluded = 0;
    std::size_t unconverged_dropped = 0;
    std::vector<int> m_choices;
    CouplingProfile profile;
    std::string data_file;
    std::uint64_t data_hash = 0;  // FNV-1a of the data file bytes

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
    // FNV-1a of the canonical JSON.
    std::uint64_t hash() const;
};

// Simulates one parameter set: ground state, raster of both layers, FM check.
SimulatedSample simulate_sample(const ParamSample& p, std::uint64_t seed, const GenerateOptions& opts);

// Draws parameters until `count` non-FM records exist, writes them to `out`
// and `out` + ".json". Deterministic in master_seed regardless of thread count.
DatasetManifest generate_dataset(const GenerateOptions& opts, const std::filesystem::path& out);

// Global pixel standardization. standardize() computes stats from `data`
// itself; apply_standardization() reuses stored stats. Both refuse data whose
// standardized flag is already set; zero variance raises DegenerateDataError.
PixelStats standardize(Dataset& data);
void apply_standardization(Dataset& data, const PixelStats& stats);
PixelStats pixel_stats(const Dataset& data);

struct SplitSpec {
    std::size_t n_total = 256;  // divisible by 8
    std::uint64_t seed = 0;

    std::size_t train_size() const { return n_total / 8 * 7; }
    std::size_t validation_size() const { return n_total / 8; }
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
};

// n_total ids drawn without replacement from `pool`, 7/8 train and 1/8 validation.
Split make_split(std::span<const std::size_t> pool, const SplitSpec& spec);

struct TestCarve {
    std::vector<std::size_t> test;
    std::vector<std::size_t> pool;  // the remaining ids, ascending
};

// Fixed held-out test ids; default size min(20000, 12% of the records).
std::size_t default_test_size(std::size_t n_records);
TestCarve carve_test_split(std::size_t n_records, std::size_t test_size, std::uint64_t seed);

void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
std::uintmax_t expected_file_size(std::size_t records, int height = kImageSize, int width = kImageSize);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace sforge
