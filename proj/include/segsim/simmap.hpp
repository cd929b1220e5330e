#pragma once

#include <string>
#include <vector>

#include "segsim/features.hpp"

namespace segsim::simmap {

struct SparseCell {
    int row = 0;
    int col = 0;
    float value = 0.0f;
};

// Frame-to-frame cosine map between two videos. Rows follow the query video,
// columns the reference video. Either dense (rows*cols values) or sparse
// (sorted coordinate list, absent entries are 0).
struct SimilarityMap {
    std::string query_id;
    std::string ref_id;
    int rows = 0;
    int cols = 0;
    float row_fps = 8.0f;
    float col_fps = 8.0f;
    bool is_sparse = false;
    std::vector<float> values;     // dense storage
    std::vector<SparseCell> cells; // sparse storage, sorted by (row, col), unique

    float at(int r, int c) const;
    SimilarityMap densified() const;
};

SimilarityMap dense_map(const features::FeatureSequence& a, const features::FeatureSequence& b);

// Element-wise product of the base map with the outer product of two keyframe
// score vectors. Kept as a view-style struct so the fusion stays inspectable;
// materialize() produces the map the detector consumes.
struct MaskedMap {
    const SimilarityMap* base = nullptr;
    std::vector<double> row_scores;
    std::vector<double> col_scores;

    SimilarityMap materialize() const;
};

MaskedMap apply_keyframe_mask(const SimilarityMap& base, const std::vector<double>& row_scores,
                              const std::vector<double>& col_scores);

enum class SubmatrixMode { ZeroFill, Drop };

// Keyframe-only view of a map. In ZeroFill mode the shape is preserved and
// non-keyframe cells become 0. In Drop mode rows/cols are compacted and
// row_map/col_map retain the original indices for box back-projection.
struct KeyframeSubmatrix {
    SimilarityMap map;
    std::vector<int> row_map; // drop mode: original row index per compact row
    std::vector<int> col_map;

    // Piecewise-linear back-mapping of a continuous compact coordinate to the
    // original frame axis. Identity in zero-fill mode.
    double back_row(double r) const;
    double back_col(double c) const;
};

KeyframeSubmatrix keyframe_submatrix(const SimilarityMap& s, const std::vector<int>& k1,
                                     const std::vector<int>& k2, SubmatrixMode mode);

// One detector input window. data is G*G doubles, row-major, negatives
// clamped to 0 when requested; offsets locate the tile in the source map.
struct Tile {
    int row_offset = 0;
    int col_offset = 0;
    int size = 0;
    std::vector<double> data;
};

// Sliding-window tiling: windows are evenly spaced so that consecutive
// offsets never exceed G/2 (roughly 50% overlap) and the final window is
// clamped to the map edge. Maps smaller than G get one zero-padded tile.
std::vector<Tile> prepare_detector_input(const SimilarityMap& m, int tile_size,
                                         bool clamp_negative = true);

std::vector<int> tile_offsets(int extent, int tile_size);

// Debug dump: P5 portable graymap, values linearly scaled from [0,1] to
// [0,255] (clamped).
void write_pgm(const SimilarityMap& m, const std::string& path);

} // namespace segsim::simmap
