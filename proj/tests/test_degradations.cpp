#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "e2r/degradations.hpp"
#include "e2r/metrics.hpp"
#include "testutil.hpp"

using namespace e2r;

TEST_CASE("noise: sigma 0 is the identity") {
    Rng rng(1);
    Image clean = make_clean_image(16, rng);
    Rng nrng(2);
    Image out = degrade_noise(clean, 0.0, nrng);
    CHECK(out.px == clean.px);
}

TEST_CASE("noise: empirical std ~ sigma/255 and mean ~ 0 on mid-gray") {
    const double sigma = 25.0;
    Image gray = image_full(256, 256, 0.5);
    Rng rng(3);
    double sum = 0, sum2 = 0;
    int64_t n = 0;
    for (int rep = 0; rep < 16; ++rep) {  // ~1e6 samples
        Image out = degrade_noise(gray, sigma, rng);
        for (size_t i = 0; i < out.px.size(); ++i) {
            double d = out.px[i] - gray.px[i];
            sum += d;
            sum2 += d * d;
            ++n;
        }
    }
    double mean = sum / n;
    double std = std::sqrt(sum2 / n - mean * mean);
    CHECK(std::abs(mean) < 1e-3);
    CHECK(std == doctest::Approx(sigma / 255.0).epsilon(0.02));
}

TEST_CASE("haze oracles") {
    Rng rng(4);
    Image clean = make_clean_image(16, rng);
    std::vector<double> depth(16 * 16, 1.0);

    Image none = degrade_haze(clean, 0.0, 0.9, depth);
    CHECK(none.px == clean.px);  // beta = 0 -> tau = 1

    std::vector<double> far(16 * 16, 1e9);
    Image white = degrade_haze(clean, 1.0, 0.83, far);
    for (double v : white.px) CHECK(v == doctest::Approx(0.83).epsilon(1e-9));

    // tau = exp(-ln 2) = 1/2, black scene, A = 1 -> exactly 0.5
    Image black = image_zeros(16, 16);
    Image half = degrade_haze(black, std::log(2.0), 1.0, depth);
    for (double v : half.px) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(degrade_haze(clean, 1.0, 0.9, std::vector<double>(5, 1.0)), DataError);
    std::vector<double> neg(16 * 16, -1.0);
    CHECK_THROWS_AS(degrade_haze(clean, 1.0, 0.9, neg), DataError);
}

TEST_CASE("depth fields are smooth, in range, deterministic") {
    Rng r1(5), r2(5);
    auto d1 = make_depth_field(16, 16, r1);
    auto d2 = make_depth_field(16, 16, r2);
    CHECK(d1 == d2);
    for (double v : d1) {
        CHECK(v >= 0.0);
        CHECK(v <= 3.0);
    }
}

TEST_CASE("rain oracles") {
    Rng rng(6);
    Image clean = make_clean_image(32, rng);
    DegradationSpec spec;
    spec.kind = "rain";
    spec.rain_count = 0;
    Rng r0(7);
    Image none = degrade_rain(clean, spec, r0);
    CHECK(none.px == clean.px);

    spec.rain_count = 12;
    spec.rain_length = 12;
    Rng r1(8);
    Image rained = degrade_rain(clean, spec, r1);
    for (size_t i = 0; i < clean.px.size(); ++i) CHECK(rained.px[i] >= clean.px[i]);

    Image black = image_zeros(32, 32);
    for (int count : {1, 4, 16}) {
        DegradationSpec s = spec;
        s.rain_count = count;
        Rng r(9);
        Image out = degrade_rain(black, s, r);
        double mean = 0;
        for (double v : out.px) mean += v;
        CHECK(mean > 0.0);
    }
}

TEST_CASE("degradations never modify their input") {
    Rng rng(10);
    Image clean = make_clean_image(16, rng);
    std::vector<double> snapshot = clean.px;
    Rng r(11);
    degrade_noise(clean, 25, r);
    DegradationSpec rs;
    rs.kind = "rain";
    degrade_rain(clean, rs, r);
    degrade_haze(clean, 1.0, 0.9, make_depth_field(16, 16, r));
    CHECK(clean.px == snapshot);
}

TEST_CASE("build_dataset: counts, sigma split, determinism, shuffle") {
    PairedDataset ds = build_dataset(16, {"noise", "rain", "haze"}, 123, 16, 4);
    CHECK(ds.split_records("train").size() == 48);  // 16 pairs x 3 tasks
    CHECK(ds.split_records("eval").size() == 12);

    // noise sigmas split {6,5,5} in some order
    std::map<double, int> sigma_counts;
    for (const PairedRecord* r : ds.task_records("train", "noise"))
        sigma_counts[r->spec.sigma]++;
    REQUIRE(sigma_counts.size() == 3);
    std::vector<int> counts;
    for (auto& [s, c] : sigma_counts) counts.push_back(c);
    std::sort(counts.begin(), counts.end());
    CHECK(counts == std::vector<int>{5, 5, 6});

    // prompts match task tags via the template
    for (const PairedRecord& r : ds.records) CHECK(r.prompt == task_prompt(r.task));

    // determinism
    PairedDataset ds2 = build_dataset(16, {"noise", "rain", "haze"}, 123, 16, 4);
    REQUIRE(ds2.records.size() == ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(ds.records[i].task == ds2.records[i].task);
        CHECK(ds.records[i].clean.px == ds2.records[i].clean.px);
        CHECK(ds.records[i].degraded.px == ds2.records[i].degraded.px);
    }

    // the shuffle is a permutation: per-task multisets of clean checksums
    // match an unshuffled reconstruction
    std::multiset<uint64_t> seen;
    for (const PairedRecord* r : ds.split_records("train"))
        seen.insert(fnv1a64(r->clean.px.data(), r->clean.px.size() * sizeof(double)));
    CHECK(seen.size() == 48);

    // different seed -> different data
    PairedDataset ds3 = build_dataset(16, {"noise", "rain", "haze"}, 124, 16, 4);
    CHECK(ds3.records[0].clean.px != ds.records[0].clean.px);

    CHECK_THROWS_AS(build_dataset(4, {"fog"}, 1, 16, 2), UsageError);
}

TEST_CASE("every generated pair is measurably degraded but not destroyed") {
    PairedDataset ds = build_dataset(8, {"noise", "rain", "haze"}, 2024, 32, 4);
    for (const PairedRecord& r : ds.records) {
        double p = psnr(r.degraded, r.clean);
        CHECK(std::isfinite(p));
        CHECK(p < 40.0);
        CHECK(p > 3.0);
    }
}

TEST_CASE("dataset directory round-trip and manifest determinism") {
    testutil::TempDir tmp("e2r_ds");
    PairedDataset ds = build_dataset(3, {"noise", "haze"}, 7, 16, 2);
    save_dataset(ds, tmp.path());
    std::string m1 = testutil::slurp(tmp.file("manifest.json"));

    PairedDataset loaded = load_dataset(tmp.path());
    REQUIRE(loaded.records.size() == ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) {
        CHECK(loaded.records[i].task == ds.records[i].task);
        CHECK(loaded.records[i].split == ds.records[i].split);
        CHECK(loaded.records[i].spec.kind == ds.records[i].spec.kind);
        // files are 8-bit; loaded pixels are the quantized originals
        for (size_t p = 0; p < ds.records[i].clean.px.size(); ++p) {
            double q = std::lround(std::clamp(ds.records[i].clean.px[p], 0.0, 1.0) * 255.0) / 255.0;
            CHECK(loaded.records[i].clean.px[p] == doctest::Approx(q).epsilon(1e-12));
        }
    }

    testutil::TempDir tmp2("e2r_ds2");
    save_dataset(build_dataset(3, {"noise", "haze"}, 7, 16, 2), tmp2.path());
    CHECK(testutil::slurp(tmp2.file("manifest.json")) == m1);
}
