// scaling_forge: dataset generation, training grids, ingestion and reports.
//
// Exit codes: 0 ok, 2 partial grid (or rejected ingest rows), 1 error.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "sforge/datagen.hpp"
#include "sforge/errors.hpp"
#include "sforge/harness.hpp"
#include "sforge/mlp.hpp"
#include "sforge/parallel.hpp"

namespace {

using namespace sforge;

std::vector<MoireIndex> parse_m_range(const std::string& s) {
    const auto sep = s.find_first_of(",:");
    const int lo = std::stoi(s.substr(0, sep));
    const int hi = sep == std::string::npos ? lo : std::stoi(s.substr(sep + 1));
    if (lo < 1 || hi < lo) throw InvalidArgument("bad --m-range '" + s + "'");
    std::vector<MoireIndex> out;
    for (int m = lo; m <= hi; ++m) out.push_back(MoireIndex{m});
    return out;
}

ArchSpec parse_spec(const std::string& s) {
    const auto sep = s.find(',');
    if (sep == std::string::npos) throw InvalidArgument("--spec expects n_l,n_n");
    return {std::stoul(s.substr(0, sep)), std::stoul(s.substr(sep + 1))};
}

int run_train(const std::string& data_path, const std::string& spec_s, std::uint64_t seed,
              const std::string& target_s, std::size_t n_total, std::size_t epochs, const std::string& out) {
    Dataset data = read_dataset(data_path);
    const Target target = parse_target(target_s);
    const ArchSpec arch = parse_spec(spec_s);
    const TestCarve carve = carve_test_split(data.size(), default_test_size(data.size()), test_carve_seed(seed));
    if (!data.standardized()) apply_standardization(data, pool_pixel_stats(data, carve.pool));
    if (n_total == 0) n_total = carve.pool.size() / 8 * 8;
    const Split split = make_split(carve.pool, {n_total, split_seed(seed, n_total, 0)});

    auto gather = [&](const std::vector<std::size_t>& ids, std::vector<float>& x, std::vector<float>& y) {
        for (const auto k : ids) {
            const auto f = data.features(k);
            x.insert(x.end(), f.begin(), f.end());
            y.push_back(static_cast<float>(normalized_label(data.labels(k), target)));
        }
    };
    std::vector<float> tx, ty, vx, vy, sx, sy;
    gather(split.train, tx, ty);
    gather(split.validation, vx, vy);
    gather(carve.test, sx, sy);

    const MlpSpec spec{data.feature_size(), arch.n_l, arch.n_n};
    TrainConfig cfg;
    cfg.seed = train_seed(split_seed(seed, n_total, 0), arch);
    if (epochs > 0) cfg.max_epochs = epochs;
    auto res = train(spec, {tx, ty}, {vx, vy}, cfg);
    const double test_mse = sx.empty() ? std::nan("") : evaluate<float>(res.model, sx, sy);
    std::printf("arch %s  N_M %llu  N_D %zu  best_epoch %zu  epochs %zu  val_mse %.6g  test_mse %.6g  (%.1f s)\n",
                arch_id(arch).c_str(), static_cast<unsigned long long>(param_count(spec)), n_total,
                res.report.best_epoch, res.report.epochs_run, res.report.best_val_loss, test_mse,
                res.report.wall_seconds);
    if (!out.empty()) save_checkpoint(res.model, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scaling_forge: neural scaling-law experiments on twisted-bilayer domain images"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "simulate a labeled domain-image dataset");
    std::size_t count = 0;
    std::uint64_t gen_seed = 1;
    std::string m_range, gen_out;
    std::size_t gen_threads = 0;
    double j_perp = CouplingProfile{}.j_perp_scale;
    gen->add_option("--count", count, "records to keep (non-FM)")->required();
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--m-range", m_range, "commensurate index range lo,hi (default: every m in the theta range)");
    gen->add_option("--out", gen_out, "dataset file; a .json manifest is written alongside")->required();
    gen->add_option("--threads", gen_threads, "worker threads (default SCALING_FORGE_THREADS or all cores)");
    gen->add_option("--j-perp", j_perp, "interlayer coupling scale (meV)");

    auto* grid = app.add_subcommand("grid", "run a training grid into a results store");
    std::string manifest_path, store_dir;
    std::size_t max_cells = 0;
    bool verbose = false;
    grid->add_option("--manifest", manifest_path)->required();
    grid->add_option("--store", store_dir)->required();
    grid->add_option("--max-cells", max_cells, "stop after this many new cells (0: no limit)");
    grid->add_flag("-v,--verbose", verbose);

    auto* ingest = app.add_subcommand("ingest", "merge externally trained losses into a store");
    std::string ingest_csv;
    ingest->add_option("--store", store_dir)->required();
    ingest->add_option("csv", ingest_csv)->required();

    auto* rep = app.add_subcommand("report", "write averages, exponent tables and gnuplot data");
    std::string report_out;
    rep->add_option("--store", store_dir)->required();
    rep->add_option("--manifest", manifest_path)->required();
    rep->add_option("--out", report_out)->required();

    auto* tr = app.add_subcommand("train", "train one network and print its test loss");
    std::string spec_s = "3,16", data_path, target_s = "J", ckpt_out;
    std::uint64_t train_seed_v = 1;
    std::size_t n_total = 0, epochs = 0;
    tr->add_option("--spec", spec_s, "n_l,n_n");
    tr->add_option("--seed", train_seed_v);
    tr->add_option("--data", data_path)->required();
    tr->add_option("--target", target_s)->check(CLI::IsMember({"theta", "J", "D"}));
    tr->add_option("--n-total", n_total, "train+validation records (default: whole pool)");
    tr->add_option("--epochs", epochs, "maximum epochs (default 200)");
    tr->add_option("--out", ckpt_out, "checkpoint path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            GenerateOptions opts;
            opts.count = count;
            opts.master_seed = gen_seed;
            if (!m_range.empty()) opts.m_choices = parse_m_range(m_range);
            opts.threads = gen_threads > 0 ? gen_threads : default_thread_count();
            opts.profile.j_perp_scale = j_perp;
            const auto m = generate_dataset(opts, gen_out);
            std::printf("%zu records from %zu draws (%zu ferromagnetic, %zu unconverged excluded) -> %s\n",
                        m.record_count, m.draws, m.fm_excluded, m.unconverged_dropped, gen_out.c_str());
            return 0;
        }
        if (grid->parsed()) {
            const auto manifest = load_manifest(manifest_path);
            GridOptions opts;
            if (max_cells > 0) opts.max_new_cells = max_cells;
            opts.verbose = verbose;
            const auto o = run_grid(manifest, store_dir, opts);
            std::printf("%zu cells: %zu done now, %zu already stored, %zu failed; store %s\n", o.total_cells,
                        o.completed, o.skipped, o.failed, status_name(o.status).c_str());
            return o.status == StoreStatus::complete ? 0 : 2;
        }
        if (ingest->parsed()) {
            auto store = ResultsStore::open(store_dir);
            const auto r = ingest_external(ingest_csv, store);
            for (const auto& msg : r.rejected) std::fprintf(stderr, "rejected %s\n", msg.c_str());
            std::printf("%zu rows ingested, %zu rejected\n", r.accepted, r.rejected.size());
            return r.rejected.empty() ? 0 : 2;
        }
        if (rep->parsed()) {
            const auto manifest = load_manifest(manifest_path);
            const auto store = ResultsStore::open(store_dir);
            const auto b = report(store, manifest, report_out);
            for (const auto& row : b.alpha_d) {
                if (row.fit) {
                    std::printf("%-12s alpha_D = %.4f +- %.4f  (R2 %.3f, %zu points)\n", row.label.c_str(),
                                row.fit->alpha, row.fit->alpha_err, row.fit->r2, row.fit->n_points);
                } else {
                    std::printf("%-12s alpha_D unavailable: %s\n", row.label.c_str(), row.note.c_str());
                }
            }
            return 0;
        }
        if (tr->parsed()) return run_train(data_path, spec_s, train_seed_v, target_s, n_total, epochs, ckpt_out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
