#include "sforge/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"

#include "sforge/errors.hpp"
#include "sforge/parallel.hpp"
#include "sforge/rng.hpp"

namespace sforge {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'F', 'D', 'G'};
constexpr std::uint32_t kFlagStandardized = 1U;

class ParamStream {
public:
    ParamStream(std::uint64_t seed, const ParamRanges& ranges, std::vector<MoireIndex> choices)
        : rng_(seed), ranges_(ranges), choices_(std::move(choices)) {
        if (choices_.empty()) {
            choices_ = commensurate_indices_in_range(ranges_.theta_deg.lo, ranges_.theta_deg.hi, kThetaQuoteTolerance);
        }
        if (choices_.empty()) throw InvalidArgument("no commensurate angle inside the theta range");
        if (!(ranges_.J.lo <= ranges_.J.hi) || !(ranges_.D.lo <= ranges_.D.hi)) {
            throw InvalidArgument("parameter ranges must satisfy lo <= hi");
        }
    }

    ParamSample next() {
        ParamSample p;
        p.m = choices_[static_cast<std::size_t>(uniform_index(rng_, choices_.size()))];
        p.J = uniform(rng_, ranges_.J.lo, ranges_.J.hi);
        p.D = uniform(rng_, ranges_.D.lo, ranges_.D.hi);
        return p;
    }

private:
    Rng rng_;
    ParamRanges ranges_;
    std::vector<MoireIndex> choices_;
};

// Little-endian byte sink/source.
template <typename T>
void put_le(std::vector<unsigned char>& buf, T value) {
    auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    buf.insert(buf.end(), bits.begin(), bits.end());
}

template <typename T>
T get_le(const unsigned char* p) {
    std::array<unsigned char, sizeof(T)> bits;
    std::memcpy(bits.data(), p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    return std::bit_cast<T>(bits);
}

std::size_t record_bytes(std::size_t image_pixels) { return 2 * image_pixels * 4 + 3 * 8 + 8; }

nlohmann::json range_json(const Range& r) { return nlohmann::json::array({r.lo, r.hi}); }
Range range_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

// Layer graphs and raster maps are shared across draws with the same m.
struct GeometryCache {
    struct Entry {
        LatticeGraph graph;
        RasterMap top;
        RasterMap bottom;
    };
    std::map<int, Entry> by_m;

    void prepare(MoireIndex m, const CouplingProfile& profile) {
        if (by_m.contains(m.m)) return;
        Entry e{build_superlattice(m, profile), {}, {}};
        e.top = RasterMap::build(e.graph, Layer::top);
        e.bottom = RasterMap::build(e.graph, Layer::bottom);
        by_m.emplace(m.m, std::move(e));
    }
};

SimulatedSample simulate_with(const GeometryCache::Entry& geo, const ParamSample& p, std::uint64_t seed,
                              const GenerateOptions& opts) {
    SolverConfig cfg = opts.solver;
    cfg.seed = seed;
    const HamiltonianParams params{p.J, p.D};
    GroundStateResult gs = ground_state(geo.graph, params, cfg);

    SimulatedSample out;
    out.record.top = rasterize(geo.top, gs.state);
    out.record.bottom = rasterize(geo.bottom, gs.state);
    out.record.labels = {geo.graph.theta_deg, p.J, p.D};
    out.record.seed = seed;
    if (!gs.converged && !opts.keep_unconverged) {
        out.outcome = SampleOutcome::unconverged;
    } else if (is_ferromagnetic(geo.graph, gs.state, opts.fm_threshold)) {
        out.outcome = SampleOutcome::ferromagnetic;
    }
    return out;
}

void check_record(const Dataset& data, std::size_t k, const ParamRanges& ranges) {
    const Labels& l = data.labels(k);
    if (!ranges.theta_deg.contains(l.theta_deg, kThetaQuoteTolerance) || !ranges.J.contains(l.J) ||
        !ranges.D.contains(l.D)) {
        throw FormatError("record " + std::to_string(k) + " has labels outside the sampling ranges");
    }
    if (!data.standardized()) {
        for (const float v : data.features(k)) {
            if (!(v >= -1.0F && v <= 1.0F)) {
                throw FormatError("record " + std::to_string(k) + " has a pixel outside [-1, 1]");
            }
        }
    }
}

}  // namespace

Target parse_target(const std::string& name) {
    if (name == "theta") return Target::theta;
    if (name == "J") return Target::J;
    if (name == "D") return Target::D;
    throw InvalidArgument("unknown target '" + name + "' (expected theta, J or D)");
}

std::string target_name(Target t) {
    switch (t) {
        case Target::theta: return "theta";
        case Target::J: return "J";
        case Target::D: return "D";
    }
    return "?";
}

double label_value(const Labels& labels, Target t) {
    switch (t) {
        case Target::theta: return labels.theta_deg;
        case Target::J: return labels.J;
        case Target::D: return labels.D;
    }
    return 0.0;
}

double normalized_label(const Labels& labels, Target t, const ParamRanges& ranges) {
    const Range& r = t == Target::theta ? ranges.theta_deg : (t == Target::J ? ranges.J : ranges.D);
    return (label_value(labels, t) - r.lo) / (r.hi - r.lo);
}

void Dataset::append(const SampleRecord& rec) {
    if (rec.top.pixels.size() != image_pixels() || rec.bottom.pixels.size() != image_pixels()) {
        throw DimensionError("record images do not match the dataset image size");
    }
    pixels_.insert(pixels_.end(), rec.top.pixels.begin(), rec.top.pixels.end());
    pixels_.insert(pixels_.end(), rec.bottom.pixels.begin(), rec.bottom.pixels.end());
    labels_.push_back(rec.labels);
    seeds_.push_back(rec.seed);
}

void Dataset::append(std::span<const float> features, const Labels& labels, std::uint64_t seed) {
    if (features.size() != feature_size()) throw DimensionError("feature vector does not match the dataset");
    pixels_.insert(pixels_.end(), features.begin(), features.end());
    labels_.push_back(labels);
    seeds_.push_back(seed);
}

void Dataset::reserve(std::size_t n) {
    pixels_.reserve(n * feature_size());
    labels_.reserve(n);
    seeds_.reserve(n);
}

std::span<const float> Dataset::features(std::size_t k) const {
    if (k >= size()) throw InvalidArgument("record index out of range");
    return std::span<const float>(pixels_).subspan(k * feature_size(), feature_size());
}

std::span<float> Dataset::features(std::size_t k) {
    if (k >= size()) throw InvalidArgument("record index out of range");
    return std::span<float>(pixels_).subspan(k * feature_size(), feature_size());
}

SampleRecord Dataset::record(std::size_t k) const {
    const auto f = features(k);
    SampleRecord rec;
    rec.top.layer = Layer::top;
    rec.top.pixels.assign(f.begin(), f.begin() + static_cast<std::ptrdiff_t>(image_pixels()));
    rec.bottom.layer = Layer::bottom;
    rec.bottom.pixels.assign(f.begin() + static_cast<std::ptrdiff_t>(image_pixels()), f.end());
    rec.labels = labels_[k];
    rec.seed = seeds_[k];
    return rec;
}

Dataset Dataset::subset(std::span<const std::size_t> ids) const {
    Dataset out(height_, width_);
    out.standardized_ = standardized_;
    out.applied_ = applied_;
    out.reserve(ids.size());
    for (const std::size_t k : ids) out.append(features(k), labels_.at(k), seeds_.at(k));
    return out;
}

std::vector<ParamSample> sample_params(std::uint64_t seed, std::size_t count, const ParamRanges& ranges,
                                       std::vector<MoireIndex> m_choices) {
    if (count < 1) throw InvalidArgument("sample count must be >= 1");
    ParamStream stream(seed, ranges, std::move(m_choices));
    std::vector<ParamSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(stream.next());
    return out;
}

bool is_ferromagnetic(const LatticeGraph& graph, const SpinConfig& s, double threshold) {
    return std::abs(layer_mean_sz(graph, s, Layer::top)) > threshold &&
           (!graph.has_layer(Layer::bottom) || std::abs(layer_mean_sz(graph, s, Layer::bottom)) > threshold);
}

SimulatedSample simulate_sample(const ParamSample& p, std::uint64_t seed, const GenerateOptions& opts) {
    GeometryCache cache;
    cache.prepare(p.m, opts.profile);
    return simulate_with(cache.by_m.at(p.m.m), p, seed, opts);
}

DatasetManifest generate_dataset(const GenerateOptions& opts, const std::filesystem::path& out) {
    if (opts.count < 1) throw InvalidArgument("record count must be >= 1");
    opts.profile.validate();

    const std::uint64_t param_seed = derive_seed(opts.master_seed, 0x70a7);
    const std::uint64_t spin_seed = derive_seed(opts.master_seed, 0x5917);
    ParamStream stream(param_seed, opts.ranges, opts.m_choices);
    std::vector<MoireIndex> choices = opts.m_choices;
    if (choices.empty()) {
        choices = commensurate_indices_in_range(opts.ranges.theta_deg.lo, opts.ranges.theta_deg.hi, kThetaQuoteTolerance);
    }

    GeometryCache cache;
    for (const auto m : choices) cache.prepare(m, opts.profile);

    const std::size_t max_draws = opts.max_draws > 0 ? opts.max_draws : 50 * opts.count;
    const std::size_t threads = std::max<std::size_t>(1, opts.threads);

    Dataset data(kImageSize, kImageSize);
    data.reserve(opts.count);
    DatasetManifest manifest;
    manifest.master_seed = opts.master_seed;
    manifest.profile = opts.profile;
    for (const auto m : choices) manifest.m_choices.push_back(m.m);

    std::size_t draw = 0;
    while (data.size() < opts.count) {
        if (draw >= max_draws) {
            throw InvalidArgument("gave up after " + std::to_string(draw) + " draws with " +
                                  std::to_string(data.size()) + " non-FM records");
        }
        const std::size_t chunk = std::min(max_draws - draw, std::max(opts.count - data.size(), threads));
        std::vector<ParamSample> params(chunk);
        for (auto& p : params) p = stream.next();
        std::vector<SimulatedSample> results(chunk);
        parallel_for(chunk, threads, [&](std::size_t i) {
            results[i] = simulate_with(cache.by_m.at(params[i].m.m), params[i], derive_seed(spin_seed, draw + i), opts);
        });
        for (std::size_t i = 0; i < chunk && data.size() < opts.count; ++i) {
            ++manifest.draws;
            switch (results[i].outcome) {
                case SampleOutcome::kept: data.append(results[i].record); break;
                case SampleOutcome::ferromagnetic: ++manifest.fm_excluded; break;
                case SampleOutcome::unconverged: ++manifest.unconverged_dropped; break;
            }
        }
        draw += chunk;
    }

    write_dataset(data, out);

    manifest.record_count = data.size();
    manifest.pixel_stats = pixel_stats(data);
    auto label_range = [&](Target t) {
        Range r{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
        for (std::size_t k = 0; k < data.size(); ++k) {
            r.lo = std::min(r.lo, label_value(data.labels(k), t));
            r.hi = std::max(r.hi, label_value(data.labels(k), t));
        }
        return r;
    };
    manifest.theta_stats = label_range(Target::theta);
    manifest.J_stats = label_range(Target::J);
    manifest.D_stats = label_range(Target::D);
    manifest.data_file = out.filename().string();
    manifest.data_hash = file_hash(out);

    std::ofstream js(out.string() + ".json", std::ios::binary);
    if (!js) throw FormatError("cannot open manifest for writing: " + out.string() + ".json");
    js << manifest.to_json() << '\n';
    return manifest;
}

std::string DatasetManifest::to_json() const {
    nlohmann::ordered_json j;
    j["format_version"] = format_version;
    j["record_count"] = record_count;
    j["data_file"] = data_file;
    j["data_hash"] = data_hash;
    j["master_seed"] = master_seed;
    j["draws"] = draws;
    j["fm_excluded"] = fm_excluded;
    j["unconverged_dropped"] = unconverged_dropped;
    j["m_choices"] = m_choices;
    j["pixel_stats"] = {{"mean", pixel_stats.mean}, {"std", pixel_stats.std}};
    j["label_stats"] = {{"theta", range_json(theta_stats)}, {"J", range_json(J_stats)}, {"D", range_json(D_stats)}};
    j["coupling_profile"] = {{"j_perp_scale", profile.j_perp_scale},
                             {"registry_harmonic", profile.registry_harmonic},
                             {"cutoff_radius", profile.cutoff_radius}};
    return j.dump(2);
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        DatasetManifest m;
        m.format_version = j.at("format_version").get<std::uint32_t>();
        m.record_count = j.at("record_count").get<std::size_t>();
        m.data_file = j.at("data_file").get<std::string>();
        m.data_hash = j.at("data_hash").get<std::uint64_t>();
        m.master_seed = j.at("master_seed").get<std::uint64_t>();
        m.draws = j.at("draws").get<std::size_t>();
        m.fm_excluded = j.at("fm_excluded").get<std::size_t>();
        m.unconverged_dropped = j.at("unconverged_dropped").get<std::size_t>();
        m.m_choices = j.at("m_choices").get<std::vector<int>>();
        m.pixel_stats = {j.at("pixel_stats").at("mean").get<double>(), j.at("pixel_stats").at("std").get<double>()};
        m.theta_stats = range_from(j.at("label_stats").at("theta"));
        m.J_stats = range_from(j.at("label_stats").at("J"));
        m.D_stats = range_from(j.at("label_stats").at("D"));
        const auto& p = j.at("coupling_profile");
        m.profile = {p.at("j_perp_scale").get<double>(), p.at("registry_harmonic").get<double>(),
                     p.at("cutoff_radius").get<double>()};
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset manifest: ") + e.what());
    }
}

std::uint64_t DatasetManifest::hash() const {
    const std::string text = to_json();
    return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

PixelStats pixel_stats(const Dataset& data) {
    const auto px = data.all_pixels();
    if (px.empty()) throw DegenerateDataError("cannot compute statistics of an empty dataset");
    double sum = 0.0;
    for (const float v : px) sum += v;
    const double mean = sum / static_cast<double>(px.size());
    double ss = 0.0;
    for (const float v : px) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(px.size()))};
}

PixelStats standardize(Dataset& data) {
    if (data.empty()) throw InvalidArgument("cannot standardize an empty dataset");
    if (data.standardized_) throw FormatError("dataset is already standardized");
    const PixelStats stats = pixel_stats(data);
    apply_standardization(data, stats);
    return stats;
}

void apply_standardization(Dataset& data, const PixelStats& stats) {
    if (data.standardized_) throw FormatError("dataset is already standardized");
    if (!(stats.std > 0.0) || !std::isfinite(stats.std)) {
        throw DegenerateDataError("pixel standard deviation is zero; data are degenerate");
    }
    const double inv = 1.0 / stats.std;
    for (float& v : data.pixels_) v = static_cast<float>((v - stats.mean) * inv);
    data.standardized_ = true;
    data.applied_ = stats;
}

Split make_split(std::span<const std::size_t> pool, const SplitSpec& spec) {
    if (spec.n_total == 0 || spec.n_total % 8 != 0) {
        throw InvalidArgument("split size must be a positive multiple of 8, got " + std::to_string(spec.n_total));
    }
    if (pool.size() < spec.n_total) {
        throw InvalidArgument("pool of " + std::to_string(pool.size()) + " records is smaller than the requested " +
                              std::to_string(spec.n_total));
    }
    std::vector<std::size_t> ids(pool.begin(), pool.end());
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < spec.n_total; ++i) {
        const auto j = i + static_cast<std::size_t>(uniform_index(rng, ids.size() - i));
        std::swap(ids[i], ids[j]);
    }
    Split out;
    const auto train_end = ids.begin() + static_cast<std::ptrdiff_t>(spec.train_size());
    out.train.assign(ids.begin(), train_end);
    out.validation.assign(train_end, ids.begin() + static_cast<std::ptrdiff_t>(spec.n_total));
    return out;
}

std::size_t default_test_size(std::size_t n_records) {
    return std::min<std::size_t>(20000, n_records * 12 / 100);
}

TestCarve carve_test_split(std::size_t n_records, std::size_t test_size, std::uint64_t seed) {
    if (test_size > n_records) throw InvalidArgument("test split larger than the dataset");
    std::vector<std::size_t> ids(n_records);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    Rng rng(seed);
    shuffle(std::span(ids), rng);
    TestCarve out;
    out.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(test_size));
    std::sort(out.test.begin(), out.test.end());
    out.pool.assign(ids.begin() + static_cast<std::ptrdiff_t>(test_size), ids.end());
    std::sort(out.pool.begin(), out.pool.end());
    return out;
}

std::uintmax_t expected_file_size(std::size_t records, int height, int width) {
    const auto px = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    return kDatasetHeaderBytes + records * record_bytes(px);
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open dataset for writing: " + path.string());

    std::vector<unsigned char> buf;
    buf.reserve(record_bytes(data.image_pixels()));
    buf.insert(buf.end(), kMagic.begin(), kMagic.end());
    put_le<std::uint32_t>(buf, kDatasetVersion);
    put_le<std::uint64_t>(buf, data.size());
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(data.height()));
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(data.width()));
    put_le<std::uint32_t>(buf, data.standardized() ? kFlagStandardized : 0U);
    put_le<std::uint32_t>(buf, 0U);
    put_le<double>(buf, data.standardized() ? data.applied_stats().mean : 0.0);
    put_le<double>(buf, data.standardized() ? data.applied_stats().std : 1.0);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));

    for (std::size_t k = 0; k < data.size(); ++k) {
        buf.clear();
        for (const float v : data.features(k)) put_le<float>(buf, v);
        const Labels& l = data.labels(k);
        put_le<double>(buf, l.theta_deg);
        put_le<double>(buf, l.J);
        put_le<double>(buf, l.D);
        put_le<std::uint64_t>(buf, data.seed(k));
        os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    }
    if (!os) throw FormatError("write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open dataset: " + path.string());

    std::array<unsigned char, kDatasetHeaderBytes> head{};
    is.read(reinterpret_cast<char*>(head.data()), head.size());
    if (is.gcount() != static_cast<std::streamsize>(head.size())) throw FormatError("truncated dataset header");
    if (std::memcmp(head.data(), kMagic.data(), kMagic.size()) != 0) throw FormatError("bad dataset magic");
    const auto version = get_le<std::uint32_t>(head.data() + 4);
    if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
    const auto count = get_le<std::uint64_t>(head.data() + 8);
    const auto height = get_le<std::uint32_t>(head.data() + 16);
    const auto width = get_le<std::uint32_t>(head.data() + 20);
    const auto flags = get_le<std::uint32_t>(head.data() + 24);
    if (height == 0 || width == 0 || height > 4096 || width > 4096) throw FormatError("bad image dimensions");

    const auto size = std::filesystem::file_size(path);
    if (size != expected_file_size(count, static_cast<int>(height), static_cast<int>(width))) {
        throw FormatError("dataset size " + std::to_string(size) + " does not match its header (" +
                          std::to_string(count) + " records)");
    }

    Dataset data(static_cast<int>(height), static_cast<int>(width));
    data.standardized_ = (flags & kFlagStandardized) != 0;
    if (data.standardized_) data.applied_ = {get_le<double>(head.data() + 32), get_le<double>(head.data() + 40)};
    data.reserve(count);
    const std::size_t n_feat = data.feature_size();
    std::vector<unsigned char> buf(record_bytes(data.image_pixels()));
    std::vector<float> feat(n_feat);
    for (std::uint64_t k = 0; k < count; ++k) {
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        if (is.gcount() != static_cast<std::streamsize>(buf.size())) throw FormatError("truncated dataset record");
        for (std::size_t i = 0; i < n_feat; ++i) feat[i] = get_le<float>(buf.data() + 4 * i);
        const unsigned char* tail = buf.data() + 4 * n_feat;
        const Labels labels{get_le<double>(tail), get_le<double>(tail + 8), get_le<double>(tail + 16)};
        data.append(feat, labels, get_le<std::uint64_t>(tail + 24));
    }
    const ParamRanges ranges{};
    for (std::size_t k = 0; k < data.size(); ++k) check_record(data, k, ranges);
    return data;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes, std::uint64_t h) {
    for (const unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for hashing: " + path.string());
    std::vector<unsigned char> buf(1 << 16);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    while (is) {
        is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        h = fnv1a64(std::span(buf.data(), static_cast<std::size_t>(is.gcount())), h);
    }
    return h;
}

}  // namespace sforge
