#pragma once

// Manifest-driven training grids, the on-disk results store, ingestion of
// externally produced losses, and report emission.
//
// Store directory layout:
//   results.csv   target,arch_id,N_M,N_D,seed,test_mse (canonical order once a grid finishes)
//   runs.csv      per-run details, including wall time
//   failures.csv  cells that threw, with the error message
//   store.json    manifest, manifest hash, status

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sforge/datagen.hpp"
#include "sforge/mlp.hpp"
#include "sforge/scalestats.hpp"

namespace sforge {

struct ArchSpec {
    std::size_t n_l = 3;
    std::size_t n_n = 16;
    friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

// "fcn-<n_l>x<n_n>"
std::string arch_id(const ArchSpec& a);

struct ExperimentManifest {
    std::filesystem::path dataset;
    Target target = Target::J;
    std::vector<ArchSpec> architectures;
    std::vector<std::size_t> n_d;  // n_total per cell; train is 7/8 of it
    std::size_t seeds = 20;
    std::uint64_t master_seed = 1;
    std::optional<std::size_t> test_size;  // default: min(20000, 12% of records)
    FitMask data_mask;                     // alpha_D fits, x = N_D
    FitMask model_mask;                    // alpha_M fits, x = N_M
    std::size_t threads = 0;               // 0: default_thread_count()
    TrainConfig train;                     // seed field unused; derived per cell

    void validate() const;
    std::string to_json() const;
    // Relative dataset paths are resolved against `base_dir`.
    static ExperimentManifest from_json(const std::string& text, const std::filesystem::path& base_dir = {});
    // FNV-1a of the canonical JSON without the thread limit, which does not
    // affect results.
    std::uint64_t hash() const;
};

ExperimentManifest load_manifest(const std::filesystem::path& path);

struct CellKey {
    std::string target;
    std::string arch_id;
    std::uint64_t n_d = 0;
    std::uint64_t seed = 0;
    auto operator<=>(const CellKey&) const = default;
};

CellKey key_of(const ResultRow& row);

struct RunRecord {
    ResultRow row;
    std::uint64_t manifest_hash = 0;
    std::size_t batch_size = 0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    bool at_precision_floor = false;
    double wall_seconds = 0.0;
};

enum class StoreStatus : std::uint8_t { empty, running, partial, complete };

std::string status_name(StoreStatus s);

class ResultsStore {
public:
    // Opens the store in `dir`, creating the directory if needed.
    static ResultsStore open(const std::filesystem::path& dir);

    const std::filesystem::path& dir() const { return dir_; }
    const std::vector<ResultRow>& rows() const { return rows_; }
    StoreStatus status() const { return status_; }
    std::optional<std::uint64_t> manifest_hash() const { return manifest_hash_; }
    bool contains(const CellKey& key) const;

    void bind_manifest(const ExperimentManifest& m);
    void append(const RunRecord& rec);
    void append_external(const ResultRow& row);
    void record_failure(const CellKey& key, const std::string& message);
    void clear_failures();
    // Rewrites results.csv sorted by cell key and updates the sidecar.
    void finalize(StoreStatus status);

private:
    void append_line(const std::filesystem::path& file, const std::string& header, const std::string& line);
    void write_sidecar() const;

    std::filesystem::path dir_;
    std::vector<ResultRow> rows_;
    std::vector<CellKey> keys_;  // sorted
    StoreStatus status_ = StoreStatus::empty;
    std::optional<std::uint64_t> manifest_hash_;
    std::string manifest_json_;
};

struct GridOptions {
    std::optional<std::size_t> max_new_cells;  // stop early, store left partial
    bool verbose = false;
};

struct GridOutcome {
    std::size_t total_cells = 0;
    std::size_t skipped = 0;  // already present in the store
    std::size_t completed = 0;
    std::size_t failed = 0;
    StoreStatus status = StoreStatus::empty;
};

// Seeds. The test carve depends on the master seed only, the split on
// (N_D, realization) and is shared by every architecture, the network init and
// batch order additionally on the architecture.
std::uint64_t test_carve_seed(std::uint64_t master);
std::uint64_t split_seed(std::uint64_t master, std::size_t n_d, std::size_t realization);
std::uint64_t train_seed(std::uint64_t split, const ArchSpec& arch);

// Pixel mean / std over the training pool (every record outside the test
// carve); applied to all records, test included.
PixelStats pool_pixel_stats(const Dataset& data, std::span<const std::size_t> pool);

GridOutcome run_grid(const ExperimentManifest& manifest, const std::filesystem::path& store_dir,
                     const GridOptions& opts = {});

struct IngestReport {
    std::size_t accepted = 0;
    std::vector<std::string> rejected;  // "line N: reason"
};

IngestReport ingest_external(const std::filesystem::path& csv, ResultsStore& store);

struct CellSummary {
    std::string arch_id;
    std::uint64_t n_m = 0;
    std::uint64_t n_d = 0;
    AverageReport stats;
    bool few_realizations = false;  // n < 2
};

struct ExponentRow {
    std::string label;  // arch_id for alpha_D, N_D for alpha_M
    double x = 0.0;     // N_M for alpha_D rows, N_D for alpha_M rows
    std::optional<PowerLawFit> fit;
    std::string note;
};

struct ReportBundle {
    std::vector<CellSummary> cells;
    std::vector<ExponentRow> alpha_d;
    std::vector<ExponentRow> alpha_m;
    std::optional<LogFit> alpha_d_vs_nm;
    std::optional<LogFit> alpha_m_vs_nd;
};

// Pure function of the rows for the manifest's target.
ReportBundle build_report(const std::vector<ResultRow>& rows, const ExperimentManifest& manifest);

// Writes cells.csv, alpha_D.csv, alpha_M.csv, log_fits.csv, curves_D.dat,
// curves_M.dat, scaling_D.gp and scaling_M.gp into out_dir.
ReportBundle report(const ResultsStore& store, const ExperimentManifest& manifest, const std::filesystem::path& out_dir);

}  // namespace sforge
