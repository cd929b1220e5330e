#include <cmath>
#include <fstream>

#include "doctest.h"
#include "segsim/features.hpp"
#include "segsim/simmap.hpp"
#include "test_util.hpp"

using namespace segsim;

namespace {

simmap::SimilarityMap transpose(const simmap::SimilarityMap& m) {
    simmap::SimilarityMap t;
    t.rows = m.cols;
    t.cols = m.rows;
    t.values.resize(m.values.size());
    for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j)
            t.values[static_cast<std::size_t>(j) * t.cols + i] =
                m.values[static_cast<std::size_t>(i) * m.cols + j];
    return t;
}

} // namespace

TEST_CASE("dense_map: self diagonal, scalar-loop oracle, orthogonal zeros") {
    auto a = testutil::make_seq("a", 6, 8, 11);
    simmap::SimilarityMap self = simmap::dense_map(a, a);
    for (int i = 0; i < self.rows; ++i)
        CHECK(self.at(i, i) == doctest::Approx(1.0).epsilon(1e-6));

    auto b = testutil::make_seq("b", 4, 8, 12);
    simmap::SimilarityMap m = simmap::dense_map(a, b);
    REQUIRE(m.rows == 6);
    REQUIRE(m.cols == 4);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int d = 0; d < 8; ++d)
                acc += static_cast<double>(a.frame(i)[d]) * b.frame(j)[d];
            CHECK(m.at(i, j) == doctest::Approx(acc).epsilon(1e-6));
        }
    }

    // Orthogonal constant sequences.
    features::FeatureSequence e1, e2;
    e1.video_id = "e1";
    e2.video_id = "e2";
    e1.dim = e2.dim = 2;
    for (int i = 0; i < 3; ++i) {
        e1.data.insert(e1.data.end(), {1.0f, 0.0f});
        e2.data.insert(e2.data.end(), {0.0f, 1.0f});
    }
    simmap::SimilarityMap z = simmap::dense_map(e1, e2);
    for (float v : z.values) CHECK(v == 0.0f);

    auto c = testutil::make_seq("c", 4, 6, 13);
    CHECK_THROWS_AS((void)simmap::dense_map(a, c), DataError);
}

TEST_CASE("dense_map transpose symmetry") {
    auto a = testutil::make_seq("a", 5, 8, 21);
    auto b = testutil::make_seq("b", 7, 8, 22);
    simmap::SimilarityMap ab = simmap::dense_map(a, b);
    simmap::SimilarityMap t = transpose(simmap::dense_map(b, a));
    REQUIRE(t.rows == ab.rows);
    REQUIRE(t.cols == ab.cols);
    for (std::size_t i = 0; i < ab.values.size(); ++i) CHECK(ab.values[i] == t.values[i]);
}

TEST_CASE("apply_keyframe_mask: identity, annihilation, oracle") {
    auto a = testutil::make_seq("a", 5, 8, 31);
    auto b = testutil::make_seq("b", 4, 8, 32);
    simmap::SimilarityMap s = simmap::dense_map(a, b);

    std::vector<double> ones_r(5, 1.0), ones_c(4, 1.0);
    simmap::SimilarityMap same = simmap::apply_keyframe_mask(s, ones_r, ones_c).materialize();
    for (std::size_t i = 0; i < s.values.size(); ++i) CHECK(same.values[i] == s.values[i]);

    std::vector<double> row0(5, 1.0);
    row0[2] = 0.0;
    simmap::SimilarityMap killed = simmap::apply_keyframe_mask(s, row0, ones_c).materialize();
    for (int j = 0; j < 4; ++j) CHECK(killed.at(2, j) == 0.0f);

    Rng rng(33);
    std::vector<double> pr(5), pc(4);
    for (auto& v : pr) v = rng.uniform();
    for (auto& v : pc) v = rng.uniform();
    simmap::SimilarityMap got = simmap::apply_keyframe_mask(s, pr, pc).materialize();
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(got.at(i, j) == doctest::Approx(pr[i] * pc[j] * s.at(i, j)).epsilon(1e-7));

    std::vector<double> bad(3, 1.0);
    CHECK_THROWS_AS((void)simmap::apply_keyframe_mask(s, bad, ones_c), DataError);
}

TEST_CASE("masking a sparse map equals masking its dense form") {
    simmap::SimilarityMap sp;
    sp.rows = 4;
    sp.cols = 5;
    sp.is_sparse = true;
    sp.cells = {{0, 1, 0.9f}, {1, 2, 0.8f}, {3, 4, 0.7f}};
    std::vector<double> pr{0.5, 1.0, 0.25, 0.75}, pc{1.0, 0.5, 0.5, 1.0, 0.2};
    simmap::SimilarityMap a = simmap::apply_keyframe_mask(sp, pr, pc).materialize();
    simmap::SimilarityMap b =
        simmap::apply_keyframe_mask(sp.densified(), pr, pc).materialize();
    REQUIRE(a.values.size() == b.values.size());
    for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == b.values[i]);
}

TEST_CASE("keyframe_submatrix zero-fill and drop modes") {
    auto a = testutil::make_seq("a", 4, 8, 41);
    auto b = testutil::make_seq("b", 4, 8, 42);
    simmap::SimilarityMap s = simmap::dense_map(a, b);

    std::vector<int> all{0, 1, 2, 3};
    simmap::KeyframeSubmatrix full =
        simmap::keyframe_submatrix(s, all, all, simmap::SubmatrixMode::ZeroFill);
    for (std::size_t i = 0; i < s.values.size(); ++i)
        CHECK(full.map.values[i] == s.values[i]);

    std::vector<int> only0{0};
    simmap::KeyframeSubmatrix corner =
        simmap::keyframe_submatrix(s, only0, only0, simmap::SubmatrixMode::ZeroFill);
    CHECK(corner.map.at(0, 0) == s.at(0, 0));
    CHECK(corner.map.at(0, 1) == 0.0f);
    CHECK(corner.map.at(1, 0) == 0.0f);

    simmap::KeyframeSubmatrix dropped =
        simmap::keyframe_submatrix(s, {1, 3}, {0, 2}, simmap::SubmatrixMode::Drop);
    REQUIRE(dropped.map.rows == 2);
    REQUIRE(dropped.map.cols == 2);
    CHECK(dropped.map.at(0, 0) == s.at(1, 0));
    CHECK(dropped.map.at(1, 1) == s.at(3, 2));
    CHECK(dropped.back_row(0.0) == doctest::Approx(1.0));
    CHECK(dropped.back_row(2.0) == doctest::Approx(4.0)); // end of last kept frame
    CHECK(dropped.back_col(1.0) == doctest::Approx(2.0));

    CHECK_THROWS_AS(
        (void)simmap::keyframe_submatrix(s, {}, all, simmap::SubmatrixMode::ZeroFill),
        DataError);
    CHECK_THROWS_AS(
        (void)simmap::keyframe_submatrix(s, {9}, all, simmap::SubmatrixMode::ZeroFill),
        DataError);
}

TEST_CASE("tile_offsets: spec geometry") {
    CHECK(simmap::tile_offsets(128, 128) == std::vector<int>{0});
    CHECK(simmap::tile_offsets(200, 128) == std::vector<int>{0, 72});
    CHECK(simmap::tile_offsets(16, 128) == std::vector<int>{0});
    CHECK(simmap::tile_offsets(256, 128) == std::vector<int>{0, 64, 128});
    CHECK(simmap::tile_offsets(129, 128) == std::vector<int>{0, 1});
}

TEST_CASE("prepare_detector_input covers every cell and pads small maps") {
    auto a = testutil::make_seq("a", 37, 8, 51);
    auto b = testutil::make_seq("b", 61, 8, 52);
    simmap::SimilarityMap m = simmap::dense_map(a, b);
    int g = 32;
    std::vector<simmap::Tile> tiles = simmap::prepare_detector_input(m, g, false);

    std::vector<char> covered(static_cast<std::size_t>(m.rows) * m.cols, 0);
    for (const auto& t : tiles) {
        for (int y = 0; y < g; ++y) {
            for (int x = 0; x < g; ++x) {
                int ry = t.row_offset + y, cx = t.col_offset + x;
                double v = t.data[static_cast<std::size_t>(y) * g + x];
                if (ry < m.rows && cx < m.cols) {
                    covered[static_cast<std::size_t>(ry) * m.cols + cx] = 1;
                    CHECK(v == doctest::Approx(m.at(ry, cx)));
                } else {
                    CHECK(v == 0.0); // padding
                }
            }
        }
    }
    for (char c : covered) CHECK(c == 1);

    auto small_tiles =
        simmap::prepare_detector_input(simmap::dense_map(testutil::make_seq("s", 16, 8, 53),
                                                         testutil::make_seq("t", 16, 8, 54)),
                                       128, true);
    CHECK(small_tiles.size() == 1);
    CHECK(small_tiles[0].row_offset == 0);
    CHECK(small_tiles[0].col_offset == 0);
}

TEST_CASE("negative clamp applies only when requested") {
    features::FeatureSequence u, v;
    u.video_id = "u";
    v.video_id = "v";
    u.dim = v.dim = 2;
    u.data = {1.0f, 0.0f};
    v.data = {-1.0f, 0.0f};
    simmap::SimilarityMap m = simmap::dense_map(u, v);
    CHECK(m.at(0, 0) == -1.0f);
    auto clamped = simmap::prepare_detector_input(m, 8, true);
    CHECK(clamped[0].data[0] == 0.0);
    auto raw = simmap::prepare_detector_input(m, 8, false);
    CHECK(raw[0].data[0] == -1.0);
}

TEST_CASE("pgm dump") {
    auto a = testutil::make_seq("a", 9, 8, 61);
    simmap::SimilarityMap m = simmap::dense_map(a, a);
    std::string path = testutil::temp_dir("pgm") + "/map.pgm";
    simmap::write_pgm(m, path);
    std::ifstream is(path, std::ios::binary);
    std::string header;
    is >> header;
    CHECK(header == "P5");
}
