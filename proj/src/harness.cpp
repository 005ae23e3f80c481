#include "sforge/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "json.hpp"

#include "sforge/errors.hpp"
#include "sforge/parallel.hpp"
#include "sforge/rng.hpp"

namespace sforge {

namespace {

using nlohmann::ordered_json;

constexpr const char* kRunsHeader =
    "target,arch_id,N_D,seed,manifest_hash,batch_size,best_epoch,epochs_run,at_precision_floor,wall_seconds";
constexpr const char* kFailuresHeader = "target,arch_id,N_D,seed,error";

ordered_json mask_json(const FitMask& m) {
    ordered_json j;
    j["x_min"] = m.x_min;
    j["x_max"] = std::isfinite(m.x_max) ? ordered_json(m.x_max) : ordered_json(nullptr);
    j["y_floor"] = m.y_floor;
    return j;
}

FitMask mask_from(const nlohmann::json& j) {
    FitMask m;
    if (j.contains("x_min")) m.x_min = j.at("x_min").get<double>();
    if (j.contains("x_max") && !j.at("x_max").is_null()) m.x_max = j.at("x_max").get<double>();
    if (j.contains("y_floor")) m.y_floor = j.at("y_floor").get<double>();
    return m;
}

ordered_json manifest_json(const ExperimentManifest& m, bool with_threads) {
    ordered_json j;
    j["dataset"] = m.dataset.string();
    j["target"] = target_name(m.target);
    ordered_json arch = ordered_json::array();
    for (const auto& a : m.architectures) arch.push_back({a.n_l, a.n_n});
    j["architectures"] = arch;
    j["n_d"] = m.n_d;
    j["seeds"] = m.seeds;
    j["master_seed"] = m.master_seed;
    j["test_size"] = m.test_size ? ordered_json(*m.test_size) : ordered_json(nullptr);
    j["data_mask"] = mask_json(m.data_mask);
    j["model_mask"] = mask_json(m.model_mask);
    if (with_threads) j["threads"] = m.threads;
    j["train"] = {{"lr0", m.train.lr0},
                  {"lr_decay", m.train.lr_decay},
                  {"max_epochs", m.train.max_epochs},
                  {"patience", m.train.patience},
                  {"batch_size", m.train.batch_size}};
    return j;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string csv_escape(std::string s) {
    std::replace(s.begin(), s.end(), ',', ';');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw FormatError("cannot write " + tmp.string());
        os << text;
        if (!os) throw FormatError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

StoreStatus parse_status(const std::string& s) {
    if (s == "empty") return StoreStatus::empty;
    if (s == "running") return StoreStatus::running;
    if (s == "partial") return StoreStatus::partial;
    if (s == "complete") return StoreStatus::complete;
    throw FormatError("unknown store status '" + s + "'");
}

std::vector<float> normalized_targets(const Dataset& data, std::span<const std::size_t> ids, Target t) {
    std::vector<float> y;
    y.reserve(ids.size());
    for (const auto k : ids) y.push_back(static_cast<float>(normalized_label(data.labels(k), t)));
    return y;
}

std::vector<float> gather_features(const Dataset& data, std::span<const std::size_t> ids) {
    std::vector<float> x;
    x.reserve(ids.size() * data.feature_size());
    for (const auto k : ids) {
        const auto f = data.features(k);
        x.insert(x.end(), f.begin(), f.end());
    }
    return x;
}

}  // namespace

PixelStats pool_pixel_stats(const Dataset& data, std::span<const std::size_t> pool) {
    if (pool.empty()) throw DegenerateDataError("empty training pool");
    double sum = 0.0;
    for (const auto k : pool) {
        for (const float v : data.features(k)) sum += v;
    }
    const double n = static_cast<double>(pool.size() * data.feature_size());
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto k : pool) {
        for (const float v : data.features(k)) ss += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(ss / n)};
}

std::string arch_id(const ArchSpec& a) { return "fcn-" + std::to_string(a.n_l) + "x" + std::to_string(a.n_n); }

std::string status_name(StoreStatus s) {
    switch (s) {
        case StoreStatus::empty: return "empty";
        case StoreStatus::running: return "running";
        case StoreStatus::partial: return "partial";
        case StoreStatus::complete: return "complete";
    }
    return "unknown";
}

void ExperimentManifest::validate() const {
    if (dataset.empty()) throw InvalidArgument("manifest needs a dataset path");
    if (architectures.empty()) throw InvalidArgument("manifest needs at least one architecture");
    for (const auto& a : architectures) {
        if (a.n_l < 1 || a.n_n < 1) throw InvalidArgument("architecture sizes must be >= 1");
    }
    if (n_d.empty()) throw InvalidArgument("manifest needs at least one N_D");
    for (const auto n : n_d) {
        if (n == 0 || n % 8 != 0) throw InvalidArgument("every N_D must be a positive multiple of 8, got " + std::to_string(n));
    }
    if (seeds < 1) throw InvalidArgument("seeds per cell must be >= 1");
    train.validate();
}

std::string ExperimentManifest::to_json() const { return manifest_json(*this, true).dump(2); }

ExperimentManifest ExperimentManifest::from_json(const std::string& text, const std::filesystem::path& base_dir) {
    ExperimentManifest m;
    try {
        const auto j = nlohmann::json::parse(text);
        m.dataset = j.at("dataset").get<std::string>();
        if (m.dataset.is_relative() && !base_dir.empty()) m.dataset = base_dir / m.dataset;
        m.target = parse_target(j.at("target").get<std::string>());
        for (const auto& a : j.at("architectures")) {
            m.architectures.push_back({a.at(0).get<std::size_t>(), a.at(1).get<std::size_t>()});
        }
        m.n_d = j.at("n_d").get<std::vector<std::size_t>>();
        if (j.contains("seeds")) m.seeds = j.at("seeds").get<std::size_t>();
        if (j.contains("master_seed")) m.master_seed = j.at("master_seed").get<std::uint64_t>();
        if (j.contains("test_size") && !j.at("test_size").is_null()) m.test_size = j.at("test_size").get<std::size_t>();
        if (j.contains("data_mask")) m.data_mask = mask_from(j.at("data_mask"));
        if (j.contains("model_mask")) m.model_mask = mask_from(j.at("model_mask"));
        if (j.contains("threads")) m.threads = j.at("threads").get<std::size_t>();
        if (j.contains("train")) {
            const auto& t = j.at("train");
            if (t.contains("lr0")) m.train.lr0 = t.at("lr0").get<double>();
            if (t.contains("lr_decay")) m.train.lr_decay = t.at("lr_decay").get<double>();
            if (t.contains("max_epochs")) m.train.max_epochs = t.at("max_epochs").get<std::size_t>();
            if (t.contains("patience")) m.train.patience = t.at("patience").get<std::size_t>();
            if (t.contains("batch_size")) m.train.batch_size = t.at("batch_size").get<std::size_t>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed experiment manifest: ") + e.what());
    }
    m.validate();
    return m;
}

std::uint64_t ExperimentManifest::hash() const {
    auto j = manifest_json(*this, false);
    j["dataset"] = dataset.filename().string();
    const std::string text = j.dump();
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

ExperimentManifest load_manifest(const std::filesystem::path& path) {
    return ExperimentManifest::from_json(read_text(path), path.parent_path());
}

CellKey key_of(const ResultRow& row) { return {row.target, row.arch_id, row.n_d, row.seed}; }

ResultsStore ResultsStore::open(const std::filesystem::path& dir) {
    ResultsStore s;
    s.dir_ = dir;
    std::filesystem::create_directories(dir);
    if (std::filesystem::exists(dir / "results.csv")) {
        std::ifstream is(dir / "results.csv");
        s.rows_ = read_results_csv(is);
        for (const auto& r : s.rows_) s.keys_.push_back(key_of(r));
        std::sort(s.keys_.begin(), s.keys_.end());
        if (std::adjacent_find(s.keys_.begin(), s.keys_.end()) != s.keys_.end()) {
            throw FormatError("results store " + dir.string() + " holds duplicate cell keys");
        }
    }
    if (std::filesystem::exists(dir / "store.json")) {
        try {
            const auto j = nlohmann::json::parse(read_text(dir / "store.json"));
            s.status_ = parse_status(j.at("status").get<std::string>());
            if (!j.at("manifest_hash").is_null()) s.manifest_hash_ = j.at("manifest_hash").get<std::uint64_t>();
            if (!j.at("manifest").is_null()) s.manifest_json_ = j.at("manifest").dump();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("malformed store sidecar: ") + e.what());
        }
    }
    return s;
}

bool ResultsStore::contains(const CellKey& key) const { return std::binary_search(keys_.begin(), keys_.end(), key); }

void ResultsStore::bind_manifest(const ExperimentManifest& m) {
    const auto h = m.hash();
    if (manifest_hash_ && *manifest_hash_ != h) {
        throw InvalidArgument("results store " + dir_.string() + " belongs to a different manifest");
    }
    manifest_hash_ = h;
    manifest_json_ = m.to_json();
    write_sidecar();
}

void ResultsStore::append_line(const std::filesystem::path& file, const std::string& header, const std::string& line) {
    const bool fresh = !std::filesystem::exists(file);
    std::ofstream os(file, std::ios::binary | std::ios::app);
    if (!os) throw FormatError("cannot append to " + file.string());
    if (fresh) os << header << '\n';
    os << line << '\n';
    os.flush();
    if (!os) throw FormatError("append failed: " + file.string());
}

void ResultsStore::append_external(const ResultRow& row) {
    const auto key = key_of(row);
    if (contains(key)) throw InvalidArgument("duplicate cell key " + row.arch_id + "/" + std::to_string(row.n_d));
    append_line(dir_ / "results.csv", kResultsHeader, format_result_row(row));
    rows_.push_back(row);
    keys_.insert(std::upper_bound(keys_.begin(), keys_.end(), key), key);
}

void ResultsStore::append(const RunRecord& rec) {
    append_external(rec.row);
    const auto& r = rec.row;
    append_line(dir_ / "runs.csv", kRunsHeader,
                r.target + ',' + r.arch_id + ',' + std::to_string(r.n_d) + ',' + std::to_string(r.seed) + ',' +
                    std::to_string(rec.manifest_hash) + ',' + std::to_string(rec.batch_size) + ',' +
                    std::to_string(rec.best_epoch) + ',' +
                    std::to_string(rec.epochs_run) + ',' + (rec.at_precision_floor ? "1" : "0") + ',' +
                    fmt(rec.wall_seconds));
}

void ResultsStore::record_failure(const CellKey& key, const std::string& message) {
    append_line(dir_ / "failures.csv", kFailuresHeader,
                key.target + ',' + key.arch_id + ',' + std::to_string(key.n_d) + ',' + std::to_string(key.seed) + ',' +
                    csv_escape(message));
}

void ResultsStore::clear_failures() { std::filesystem::remove(dir_ / "failures.csv"); }

void ResultsStore::finalize(StoreStatus status) {
    std::sort(rows_.begin(), rows_.end(),
              [](const ResultRow& a, const ResultRow& b) { return key_of(a) < key_of(b); });
    std::ostringstream os;
    write_results_csv(os, rows_);
    write_text(dir_ / "results.csv", os.str());
    status_ = status;
    write_sidecar();
}

void ResultsStore::write_sidecar() const {
    ordered_json j;
    j["status"] = status_name(status_);
    j["manifest_hash"] = manifest_hash_ ? ordered_json(*manifest_hash_) : ordered_json(nullptr);
    j["manifest"] = manifest_json_.empty() ? ordered_json(nullptr) : ordered_json::parse(manifest_json_);
    j["records"] = rows_.size();
    write_text(dir_ / "store.json", j.dump(2) + "\n");
}

std::uint64_t test_carve_seed(std::uint64_t master) { return derive_seed(master, 0x7465737463617276ULL); }

std::uint64_t split_seed(std::uint64_t master, std::size_t n_d, std::size_t realization) {
    return derive_seed(derive_seed(master, n_d), realization);
}

std::uint64_t train_seed(std::uint64_t split, const ArchSpec& arch) {
    return derive_seed(split, (static_cast<std::uint64_t>(arch.n_l) << 32) ^ arch.n_n);
}

GridOutcome run_grid(const ExperimentManifest& manifest, const std::filesystem::path& store_dir,
                     const GridOptions& opts) {
    manifest.validate();
    ResultsStore store = ResultsStore::open(store_dir);
    store.bind_manifest(manifest);
    const std::uint64_t mhash = manifest.hash();

    Dataset data = read_dataset(manifest.dataset);
    const std::size_t test_size = manifest.test_size.value_or(default_test_size(data.size()));
    if (test_size == 0) throw InvalidArgument("test split is empty");
    const TestCarve carve = carve_test_split(data.size(), test_size, test_carve_seed(manifest.master_seed));
    if (!data.standardized()) apply_standardization(data, pool_pixel_stats(data, carve.pool));
    const std::size_t max_nd = *std::max_element(manifest.n_d.begin(), manifest.n_d.end());
    if (carve.pool.size() < max_nd) {
        throw InvalidArgument("dataset has " + std::to_string(data.size()) + " records; N_D = " +
                              std::to_string(max_nd) + " plus a test split of " + std::to_string(test_size) +
                              " does not fit");
    }
    const std::vector<float> test_x = gather_features(data, carve.test);
    const std::vector<float> test_y = normalized_targets(data, carve.test, manifest.target);
    const std::string target = target_name(manifest.target);

    struct Cell {
        ArchSpec arch;
        std::size_t n_d;
        std::size_t seed;
    };
    std::vector<Cell> pending;
    GridOutcome out;
    for (const auto& a : manifest.architectures) {
        for (const auto n : manifest.n_d) {
            for (std::size_t r = 0; r < manifest.seeds; ++r) {
                ++out.total_cells;
                if (store.contains({target, arch_id(a), n, r})) {
                    ++out.skipped;
                } else {
                    pending.push_back({a, n, r});
                }
            }
        }
    }
    const std::size_t remaining = pending.size();
    if (opts.max_new_cells && *opts.max_new_cells < pending.size()) pending.resize(*opts.max_new_cells);

    store.clear_failures();
    store.finalize(StoreStatus::running);

    std::mutex mu;
    const std::size_t threads = manifest.threads > 0 ? manifest.threads : default_thread_count();
    parallel_for(pending.size(), threads, [&](std::size_t i) {
        const Cell& c = pending[i];
        const CellKey key{target, arch_id(c.arch), c.n_d, c.seed};
        try {
            const MlpSpec spec{data.feature_size(), c.arch.n_l, c.arch.n_n};
            const std::uint64_t sseed = split_seed(manifest.master_seed, c.n_d, c.seed);
            const Split split = make_split(carve.pool, {c.n_d, sseed});
            const auto tx = gather_features(data, split.train);
            const auto ty = normalized_targets(data, split.train, manifest.target);
            const auto vx = gather_features(data, split.validation);
            const auto vy = normalized_targets(data, split.validation, manifest.target);
            TrainConfig cfg = manifest.train;
            cfg.seed = train_seed(sseed, c.arch);
            auto res = train(spec, {tx, ty}, {vx, vy}, cfg);
            const double test_mse = evaluate<float>(res.model, test_x, test_y);
            RunRecord rec;
            rec.row = {target, key.arch_id, param_count(spec), c.n_d, c.seed, test_mse};
            rec.manifest_hash = mhash;
            rec.batch_size = cfg.batch_size;
            rec.best_epoch = res.report.best_epoch;
            rec.epochs_run = res.report.epochs_run;
            rec.at_precision_floor = test_mse < kPrecisionFloor;
            rec.wall_seconds = res.report.wall_seconds;
            std::lock_guard lock(mu);
            store.append(rec);
            ++out.completed;
            if (opts.verbose) {
                std::cerr << key.arch_id << " N_D=" << c.n_d << " seed=" << c.seed << " test_mse=" << fmt(test_mse)
                          << " epochs=" << rec.epochs_run << " (" << fmt(rec.wall_seconds) << " s)\n";
            }
        } catch (const std::exception& e) {
            std::lock_guard lock(mu);
            store.record_failure(key, e.what());
            ++out.failed;
            if (opts.verbose) std::cerr << key.arch_id << " N_D=" << c.n_d << " seed=" << c.seed << " failed: " << e.what() << '\n';
        }
    });

    out.status = (out.failed == 0 && out.completed == remaining) ? StoreStatus::complete : StoreStatus::partial;
    store.finalize(out.status);
    return out;
}

IngestReport ingest_external(const std::filesystem::path& csv, ResultsStore& store) {
    std::ifstream is(csv);
    if (!is) throw FormatError("cannot open " + csv.string());
    IngestReport rep;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header_seen) {
            if (line != kResultsHeader) {
                throw FormatError(csv.string() + " line " + std::to_string(line_no) + ": expected header '" +
                                  kResultsHeader + "'");
            }
            header_seen = true;
            continue;
        }
        try {
            const ResultRow row = parse_result_row(line);
            if (store.contains(key_of(row))) {
                rep.rejected.push_back("line " + std::to_string(line_no) + ": duplicate cell key (" + row.target +
                                       ", " + row.arch_id + ", " + std::to_string(row.n_d) + ", " +
                                       std::to_string(row.seed) + ")");
                continue;
            }
            store.append_external(row);
            ++rep.accepted;
        } catch (const FormatError& e) {
            rep.rejected.push_back("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!header_seen) throw FormatError(csv.string() + " has no header");
    store.finalize(store.status() == StoreStatus::empty ? StoreStatus::complete : store.status());
    return rep;
}

ReportBundle build_report(const std::vector<ResultRow>& rows, const ExperimentManifest& manifest) {
    const std::string target = target_name(manifest.target);
    std::map<std::pair<std::string, std::uint64_t>, std::vector<double>> losses;
    std::map<std::string, std::uint64_t> n_m;
    for (const auto& r : rows) {
        if (r.target != target) continue;
        losses[{r.arch_id, r.n_d}].push_back(r.test_mse);
        const auto [it, fresh] = n_m.emplace(r.arch_id, r.n_m);
        if (!fresh && it->second != r.n_m) throw FormatError("inconsistent N_M for " + r.arch_id);
    }
    if (losses.empty()) throw InvalidArgument("no results for target " + target);

    ReportBundle b;
    for (const auto& [key, v] : losses) {
        CellSummary c;
        c.arch_id = key.first;
        c.n_m = n_m.at(key.first);
        c.n_d = key.second;
        c.stats = summarize(v);
        c.few_realizations = v.size() < 2;
        b.cells.push_back(c);
    }

    for (const auto& [arch, nm] : n_m) {
        std::vector<FitPoint> pts;
        for (const auto& c : b.cells) {
            if (c.arch_id == arch) pts.push_back({static_cast<double>(c.n_d), c.stats.geo_mean});
        }
        ExponentRow row{arch, static_cast<double>(nm), std::nullopt, ""};
        try {
            row.fit = fit_power_law(pts, manifest.data_mask);
        } catch (const DegenerateDataError& e) {
            row.note = e.what();
        }
        b.alpha_d.push_back(row);
    }

    std::set<std::string> family;
    for (const auto& a : manifest.architectures) family.insert(arch_id(a));
    std::set<std::uint64_t> sizes;
    for (const auto& c : b.cells) sizes.insert(c.n_d);
    for (const auto nd : sizes) {
        std::vector<FitPoint> pts;
        for (const auto& c : b.cells) {
            if (c.n_d == nd && family.contains(c.arch_id)) pts.push_back({static_cast<double>(c.n_m), c.stats.geo_mean});
        }
        ExponentRow row{std::to_string(nd), static_cast<double>(nd), std::nullopt, ""};
        try {
            row.fit = fit_power_law(pts, manifest.model_mask);
        } catch (const DegenerateDataError& e) {
            row.note = e.what();
        }
        b.alpha_m.push_back(row);
    }

    auto log_fit = [](const std::vector<ExponentRow>& rows_in, auto&& keep) -> std::optional<LogFit> {
        std::vector<FitPoint> pts;
        for (const auto& r : rows_in) {
            if (r.fit && keep(r)) pts.push_back({r.x, r.fit->alpha});
        }
        try {
            return fit_log_linear(pts);
        } catch (const DegenerateDataError&) {
            return std::nullopt;
        }
    };
    b.alpha_d_vs_nm = log_fit(b.alpha_d, [&](const ExponentRow& r) { return family.contains(r.label); });
    b.alpha_m_vs_nd = log_fit(b.alpha_m, [](const ExponentRow&) { return true; });
    return b;
}

ReportBundle report(const ResultsStore& store, const ExperimentManifest& manifest, const std::filesystem::path& out_dir) {
    if (store.rows().empty()) throw InvalidArgument("results store is empty");
    const ReportBundle b = build_report(store.rows(), manifest);
    std::filesystem::create_directories(out_dir);
    const std::string target = target_name(manifest.target);
    std::set<std::string> family;
    for (const auto& a : manifest.architectures) family.insert(arch_id(a));

    std::ostringstream cells;
    cells << "target,arch_id,N_M,N_D,n,arith_mean,arith_se,geo_mean,geo_se,median,mad,flag\n";
    for (const auto& c : b.cells) {
        const auto& s = c.stats;
        cells << target << ',' << c.arch_id << ',' << c.n_m << ',' << c.n_d << ',' << s.n << ',' << fmt(s.arith_mean)
              << ',' << fmt(s.arith_se) << ',' << fmt(s.geo_mean) << ',' << fmt(s.geo_se) << ',' << fmt(s.median)
              << ',' << fmt(s.mad) << ',' << (c.few_realizations ? "few_realizations" : "") << '\n';
    }
    write_text(out_dir / "cells.csv", cells.str());

    auto exponent_table = [&](const std::vector<ExponentRow>& rows, const char* head) {
        std::ostringstream os;
        os << head << ",alpha,alpha_err,log_prefactor,log_prefactor_err,r2,n_points,x_min,x_max,note\n";
        for (const auto& r : rows) {
            os << r.label << ',' << fmt(r.x);
            if (r.fit) {
                const auto& f = *r.fit;
                os << ',' << fmt(f.alpha) << ',' << fmt(f.alpha_err) << ',' << fmt(f.log_prefactor) << ','
                   << fmt(f.log_prefactor_err) << ',' << fmt(f.r2) << ',' << f.n_points << ',' << fmt(f.x_min) << ','
                   << fmt(f.x_max) << ",\n";
            } else {
                os << ",,,,,,,,," << csv_escape(r.note) << '\n';
            }
        }
        return os.str();
    };
    write_text(out_dir / "alpha_D.csv", exponent_table(b.alpha_d, "arch_id,N_M"));
    write_text(out_dir / "alpha_M.csv", exponent_table(b.alpha_m, "N_D_label,N_D"));

    std::ostringstream logs;
    logs << "fit,a,a_err,b,b_err,n_points\n";
    for (const auto& [name, f] : {std::pair{"alpha_D_vs_ln_N_M", b.alpha_d_vs_nm}, {"alpha_M_vs_ln_N_D", b.alpha_m_vs_nd}}) {
        if (f) logs << name << ',' << fmt(f->a) << ',' << fmt(f->a_err) << ',' << fmt(f->b) << ',' << fmt(f->b_err) << ',' << f->n_points << '\n';
    }
    write_text(out_dir / "log_fits.csv", logs.str());

    // gnuplot data: one index block per curve, columns x geo_mean geo_se in_fit fit
    auto curves = [&](const std::vector<ExponentRow>& rows, bool by_arch, const FitMask& mask, const char* xlabel,
                      const char* stem) {
        std::ostringstream dat, gp;
        gp << "set logscale xy\nset xlabel '" << xlabel << "'\nset ylabel 'test MSE (geometric mean)'\nplot ";
        std::size_t block = 0;
        for (const auto& r : rows) {
            if (block > 0) dat << "\n\n";
            dat << "# " << r.label << '\n';
            for (const auto& c : b.cells) {
                const bool match = by_arch ? c.arch_id == r.label
                                           : std::to_string(c.n_d) == r.label && family.contains(c.arch_id);
                if (!match) continue;
                const double x = static_cast<double>(by_arch ? c.n_d : c.n_m);
                const FitPoint p{x, c.stats.geo_mean};
                dat << fmt(x) << ' ' << fmt(c.stats.geo_mean) << ' ' << fmt(c.stats.geo_se) << ' '
                    << (mask.includes(p) ? 1 : 0) << ' ' << fmt(r.fit ? r.fit->predict(x) : std::nan("")) << '\n';
            }
            gp << (block > 0 ? ", \\\n     " : "") << "'" << stem << ".dat' index " << block
               << " using 1:2:3 with yerrorbars title '" << r.label << "', '' index " << block
               << " using 1:5 with lines notitle";
            ++block;
        }
        gp << '\n';
        write_text(out_dir / (std::string(stem) + ".dat"), dat.str());
        return gp.str();
    };
    write_text(out_dir / "scaling_D.gp", curves(b.alpha_d, true, manifest.data_mask, "N_D", "curves_D"));
    write_text(out_dir / "scaling_M.gp", curves(b.alpha_m, false, manifest.model_mask, "N_M", "curves_M"));
    return b;
}

}  // namespace sforge
