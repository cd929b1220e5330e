#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "segsim/features.hpp"
#include "test_util.hpp"

using namespace segsim;

TEST_CASE("cosine_sim basics") {
    std::vector<float> v{0.5f, -0.25f, 0.75f, 0.1f};
    CHECK(features::cosine_sim(v, v) == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<float> e1{1.0f, 0.0f}, e2{0.0f, 1.0f};
    CHECK(features::cosine_sim(e1, e2) == 0.0);

    std::vector<float> short_v{1.0f};
    CHECK_THROWS_AS((void)features::cosine_sim(e1, short_v), DataError);
}

TEST_CASE("cosine_sim matches an independent scalar loop") {
    // Frozen 8-dim vectors; oracle below accumulates in a separate loop shape.
    std::vector<float> a{0.12f, -0.44f, 0.91f, 0.03f, -0.77f, 0.25f, 0.6f, -0.1f};
    std::vector<float> b{-0.33f, 0.18f, 0.41f, 0.9f, 0.05f, -0.61f, 0.2f, 0.7f};
    double num = 0.0, na = 0.0, nb = 0.0;
    for (int i = 7; i >= 0; --i) { // reversed order on purpose
        num += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    double expected = num / (std::sqrt(na) * std::sqrt(nb));
    CHECK(features::cosine_sim(a, b) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cosine_sim symmetry and bound properties") {
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        int dim = rng.uniform_int(1, 16);
        std::vector<float> a(dim), b(dim);
        for (auto& x : a) x = static_cast<float>(rng.normal());
        for (auto& x : b) x = static_cast<float>(rng.normal());
        bool zero = true;
        for (auto x : a) zero = zero && x == 0.0f;
        if (zero) a[0] = 1.0f;
        zero = true;
        for (auto x : b) zero = zero && x == 0.0f;
        if (zero) b[0] = 1.0f;
        double ab = features::cosine_sim(a, b);
        double ba = features::cosine_sim(b, a);
        CHECK(ab == ba); // exact: left-to-right accumulation commutes per term
        CHECK(std::fabs(ab) <= 1.0 + 1e-6);
    }
}

TEST_CASE("sgaf ingest: counts, zero vector, idempotence, round-trip") {
    std::string dir = testutil::temp_dir("sgaf");
    std::string path = dir + "/two.sgaf";

    features::FeatureStore store;
    store.add(testutil::make_seq("a", 10, 4, 1));
    store.add(testutil::make_seq("b", 10, 4, 2));
    features::write_sgaf(store, path);

    features::FeatureStore loaded = features::ingest(path);
    CHECK(loaded.total_frames() == 20);
    CHECK(loaded.dim() == 4);

    // Round trip is bitwise stable after the first normalization.
    std::string path2 = dir + "/two2.sgaf";
    features::write_sgaf(loaded, path2);
    features::FeatureStore again = features::ingest(path2);
    for (const auto& [id, seq] : loaded.sequences) {
        const auto& other = again.at(id);
        REQUIRE(other.data.size() == seq.data.size());
        for (std::size_t i = 0; i < seq.data.size(); ++i) CHECK(other.data[i] == seq.data[i]);
    }

    // Zero vector names the offender.
    features::FeatureStore bad;
    features::FeatureSequence z = testutil::make_seq("zv", 3, 4, 3);
    for (int d = 0; d < 4; ++d) z.frame(1)[d] = 0.0f;
    bad.sequences.emplace("zv", z); // bypass add() normalization checks
    std::string bad_path = dir + "/bad.sgaf";
    features::write_sgaf(bad, bad_path);
    try {
        features::ingest(bad_path);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        std::string msg = e.what();
        CHECK(msg.find("zv") != std::string::npos);
        CHECK(msg.find("1") != std::string::npos);
    }
}

TEST_CASE("sgaf ingest rejects malformed header and dim mismatch") {
    std::string dir = testutil::temp_dir("sgaf_bad");
    {
        std::ofstream os(dir + "/nota.sgaf", std::ios::binary);
        os << "NOPE1234";
    }
    CHECK_THROWS_AS((void)features::ingest(dir + "/nota.sgaf"), DataError);

    features::FeatureStore store;
    store.add(testutil::make_seq("a", 4, 4, 1));
    features::FeatureSequence other = testutil::make_seq("b", 4, 6, 2);
    CHECK_THROWS_AS(store.add(other), DataError);
}

TEST_CASE("store invariants") {
    features::FeatureStore store;
    store.add(testutil::make_seq("a", 4, 4, 1));
    CHECK_THROWS_AS(store.add(testutil::make_seq("a", 4, 4, 2)), DataError);
    CHECK_THROWS_AS((void)store.at("missing"), DataError);
    CHECK(store.at("a").timestamp(4) == doctest::Approx(0.5));
}
