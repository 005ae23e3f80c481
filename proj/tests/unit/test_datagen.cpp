#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <memory>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sforge/datagen.hpp"
#include "sforge/errors.hpp"
#include "sforge/rng.hpp"

using namespace sforge;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    const fs::path p = fs::path(SFORGE_TEST_TMP) / "datagen";
    fs::create_directories(p);
    return p;
}

Dataset synthetic(std::size_t n, std::uint64_t seed) {
    Dataset d;
    Rng rng(seed);
    std::vector<float> f(d.feature_size());
    for (std::size_t k = 0; k < n; ++k) {
        for (auto& v : f) v = static_cast<float>(uniform(rng, -1.0, 1.0));
        d.append(f, {commensurate_angle(MoireIndex{8}), uniform(rng, 1.0, 10.0), uniform(rng, 0.01, 0.3)}, k);
    }
    return d;
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("parameter sampling") {
    const auto a = sample_params(42, 10000);
    const auto b = sample_params(42, 10000);
    REQUIRE(a.size() == 10000);
    std::vector<double> js;
    std::set<int> ms;
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].J >= 1.0);
        CHECK(a[k].J <= 10.0);
        CHECK(a[k].D >= 0.01);
        CHECK(a[k].D <= 0.3);
        CHECK(a[k].m.m >= 8);
        CHECK(a[k].m.m <= 32);
        CHECK(a[k].J == b[k].J);
        CHECK(a[k].D == b[k].D);
        CHECK(a[k].m == b[k].m);
        js.push_back(a[k].J);
        ms.insert(a[k].m.m);
    }
    CHECK(ms.size() == 25);
    // Kolmogorov-Smirnov against uniform(1, 10)
    std::sort(js.begin(), js.end());
    double ks = 0.0;
    const double n = static_cast<double>(js.size());
    for (std::size_t k = 0; k < js.size(); ++k) {
        const double cdf = (js[k] - 1.0) / 9.0;
        ks = std::max({ks, std::abs(cdf - static_cast<double>(k) / n), std::abs(static_cast<double>(k + 1) / n - cdf)});
    }
    CHECK(ks < 1.63 / std::sqrt(n));
    CHECK(sample_params(43, 5)[0].J != a[0].J);
}

TEST_CASE("ferromagnet classification") {
    const auto g = build_superlattice(MoireIndex{8}, {});
    auto s = SpinConfig::uniform(g.size(), {0, 0, 1});
    CHECK(is_ferromagnetic(g, s));
    for (std::size_t i = g.layer_begin(Layer::bottom); i < g.layer_end(Layer::bottom); ++i) s.spins[i] = {0, 0, -1};
    CHECK(is_ferromagnetic(g, s));
    for (std::size_t i = 0; i < g.layer_size() / 2; ++i) s.spins[i] = {0, 0, -1};
    CHECK(layer_mean_sz(g, s, Layer::top) == doctest::Approx(0.0));
    CHECK_FALSE(is_ferromagnetic(g, s));
}

TEST_CASE("label normalization") {
    const Labels lo{1.01, 1.0, 0.01}, hi{3.89, 10.0, 0.3};
    for (Target t : {Target::theta, Target::J, Target::D}) {
        CHECK(normalized_label(lo, t) == doctest::Approx(0.0));
        CHECK(normalized_label(hi, t) == doctest::Approx(1.0));
        CHECK(parse_target(target_name(t)) == t);
    }
    CHECK(normalized_label({2.0, 5.5, 0.1}, Target::J) == doctest::Approx(0.5));
    CHECK_THROWS(parse_target("K"));
}

TEST_CASE("generation is deterministic and excludes ferromagnets") {
    const auto dir = tmp_dir();
    GenerateOptions o;
    o.count = 4;
    o.master_seed = 77;
    o.m_choices = {MoireIndex{8}};
    const auto m1 = generate_dataset(o, dir / "a.bin");
    o.threads = 2;
    const auto m2 = generate_dataset(o, dir / "b.bin");
    CHECK(m1.record_count == 4);
    CHECK(file_hash(dir / "a.bin") == file_hash(dir / "b.bin"));
    CHECK(m1.data_hash == m2.data_hash);
    CHECK(m1.draws == m1.record_count + m1.fm_excluded + m1.unconverged_dropped);
    const auto d = read_dataset(dir / "a.bin");
    REQUIRE(d.size() == 4);
    const auto g = build_superlattice(MoireIndex{8}, o.profile);
    for (std::size_t k = 0; k < d.size(); ++k) {
        CHECK(d.labels(k).theta_deg == commensurate_angle(MoireIndex{8}));
        // both images must not be (near) uniform
        const auto f = d.features(k);
        const double top = std::accumulate(f.begin(), f.begin() + 10000, 0.0) / 10000.0;
        const double bottom = std::accumulate(f.begin() + 10000, f.end(), 0.0) / 10000.0;
        CHECK_FALSE((std::abs(top) > 0.995 && std::abs(bottom) > 0.995));
    }
    std::ifstream js(dir / "a.bin.json");
    std::stringstream text;
    text << js.rdbuf();
    const auto parsed = DatasetManifest::from_json(text.str());
    CHECK(parsed.hash() == m1.hash());
    CHECK(parsed.record_count == 4);
    CHECK(parsed.pixel_stats.std > 0.0);
}

TEST_CASE("weak interlayer coupling and strong anisotropy favour ferromagnets") {
    GenerateOptions strong;
    strong.m_choices = {MoireIndex{8}};
    GenerateOptions weak = strong;
    weak.profile.j_perp_scale = 0.02;
    std::size_t fm_strong = 0, fm_weak = 0;
    for (std::uint64_t k = 0; k < 6; ++k) {
        const ParamSample p{MoireIndex{8}, 1.0 + 1.5 * static_cast<double>(k), 0.3};
        fm_strong += simulate_sample(p, 100 + k, strong).outcome == SampleOutcome::ferromagnetic;
        fm_weak += simulate_sample(p, 100 + k, weak).outcome == SampleOutcome::ferromagnetic;
    }
    CHECK(fm_weak > fm_strong);
}

TEST_CASE("standardization") {
    Dataset d = synthetic(20, 3);
    const PixelStats st = standardize(d);
    CHECK(st.std > 0.0);
    const auto px = d.all_pixels();
    double mean = 0.0;
    for (const float v : px) mean += v;
    mean /= static_cast<double>(px.size());
    double var = 0.0;
    for (const float v : px) var += (v - mean) * (v - mean);
    var /= static_cast<double>(px.size());
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);
    CHECK(d.standardized());
    CHECK_THROWS_AS(standardize(d), FormatError);
    CHECK_THROWS_AS(apply_standardization(d, st), FormatError);

    Dataset flat;
    std::vector<float> f(flat.feature_size(), 0.5f);
    flat.append(f, {2.0, 2.0, 0.1}, 0);
    flat.append(f, {2.0, 3.0, 0.1}, 1);
    CHECK_THROWS_AS(standardize(flat), DegenerateDataError);
    CHECK_THROWS(standardize(*std::make_unique<Dataset>()));
}

TEST_CASE("splits") {
    std::vector<std::size_t> pool(1000);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    const auto s = make_split(pool, {256, 9});
    CHECK(s.train.size() == 224);
    CHECK(s.validation.size() == 32);
    std::set<std::size_t> tr(s.train.begin(), s.train.end());
    CHECK(tr.size() == 224);
    for (const auto v : s.validation) CHECK(tr.count(v) == 0);
    const auto again = make_split(pool, {256, 9});
    CHECK(again.train == s.train);
    CHECK(again.validation == s.validation);
    CHECK(make_split(pool, {256, 10}).train != s.train);

    std::vector<std::size_t> big(131072);
    std::iota(big.begin(), big.end(), std::size_t{0});
    CHECK(make_split(big, {131072, 1}).train.size() == 114688);

    CHECK_THROWS(make_split(pool, {1008, 1}));
    CHECK_THROWS(make_split(pool, {250, 1}));

    const auto carve = carve_test_split(1000, default_test_size(1000), 5);
    CHECK(carve.test.size() == 120);
    CHECK(carve.pool.size() == 880);
    const auto split = make_split(carve.pool, {512, 4});
    std::set<std::size_t> test(carve.test.begin(), carve.test.end());
    for (const auto v : split.train) CHECK(test.count(v) == 0);
    for (const auto v : split.validation) CHECK(test.count(v) == 0);
    CHECK(default_test_size(1000000) == 20000);
}

TEST_CASE("binary round trip and corruption") {
    const auto dir = tmp_dir();
    Dataset d = synthetic(3, 8);
    write_dataset(d, dir / "rt.bin");
    CHECK(fs::file_size(dir / "rt.bin") == 48 + 3 * (2 * 10000 * 4 + 3 * 8 + 8));
    CHECK(expected_file_size(3) == fs::file_size(dir / "rt.bin"));
    const Dataset back = read_dataset(dir / "rt.bin");
    CHECK(back == d);

    standardize(d);
    write_dataset(d, dir / "std.bin");
    const Dataset sback = read_dataset(dir / "std.bin");
    CHECK(sback.standardized());
    CHECK(sback.applied_stats() == d.applied_stats());
    CHECK(sback == d);

    fs::copy_file(dir / "rt.bin", dir / "bad.bin", fs::copy_options::overwrite_existing);
    {
        std::fstream f(dir / "bad.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(read_dataset(dir / "bad.bin"), FormatError);

    fs::copy_file(dir / "rt.bin", dir / "short.bin", fs::copy_options::overwrite_existing);
    fs::resize_file(dir / "short.bin", fs::file_size(dir / "rt.bin") - 10);
    CHECK_THROWS_AS(read_dataset(dir / "short.bin"), FormatError);

    fs::copy_file(dir / "rt.bin", dir / "ver.bin", fs::copy_options::overwrite_existing);
    {
        std::fstream f(dir / "ver.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(4);
        const char v[4] = {9, 0, 0, 0};
        f.write(v, 4);
    }
    CHECK_THROWS_AS(read_dataset(dir / "ver.bin"), FormatError);
}

TEST_CASE("subset preserves order") {
    const Dataset d = synthetic(5, 1);
    const std::vector<std::size_t> ids{4, 1};
    const Dataset s = d.subset(ids);
    REQUIRE(s.size() == 2);
    CHECK(s.labels(0) == d.labels(4));
    CHECK(s.seed(1) == d.seed(1));
    CHECK(std::equal(s.features(0).begin(), s.features(0).end(), d.features(4).begin()));
}

}
