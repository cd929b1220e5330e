#include "segsim/simmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "segsim/errors.hpp"

namespace segsim::simmap {

float SimilarityMap::at(int r, int c) const {
    if (!is_sparse) return values[static_cast<std::size_t>(r) * cols + c];
    auto it = std::lower_bound(cells.begin(), cells.end(), std::pair<int, int>{r, c},
                               [](const SparseCell& cell, const std::pair<int, int>& key) {
                                   return cell.row != key.first ? cell.row < key.first
                                                                : cell.col < key.second;
                               });
    if (it != cells.end() && it->row == r && it->col == c) return it->value;
    return 0.0f;
}

SimilarityMap SimilarityMap::densified() const {
    if (!is_sparse) return *this;
    SimilarityMap d = *this;
    d.is_sparse = false;
    d.cells.clear();
    d.values.assign(static_cast<std::size_t>(rows) * cols, 0.0f);
    for (const SparseCell& c : cells)
        d.values[static_cast<std::size_t>(c.row) * cols + c.col] = c.value;
    return d;
}

SimilarityMap dense_map(const features::FeatureSequence& a, const features::FeatureSequence& b) {
    if (a.dim != b.dim)
        throw DataError("dense_map dim mismatch: " + std::to_string(a.dim) + " vs " +
                        std::to_string(b.dim));
    SimilarityMap m;
    m.query_id = a.video_id;
    m.ref_id = b.video_id;
    m.rows = a.frame_count();
    m.cols = b.frame_count();
    m.row_fps = a.basis_fps;
    m.col_fps = b.basis_fps;
    m.values.resize(static_cast<std::size_t>(m.rows) * m.cols);
    for (int i = 0; i < m.rows; ++i) {
        auto fi = a.frame(i);
        float* out = m.values.data() + static_cast<std::size_t>(i) * m.cols;
        for (int j = 0; j < m.cols; ++j) {
            double v = features::dot(fi, b.frame(j));
            out[j] = static_cast<float>(std::clamp(v, -1.0, 1.0));
        }
    }
    return m;
}

MaskedMap apply_keyframe_mask(const SimilarityMap& base, const std::vector<double>& row_scores,
                              const std::vector<double>& col_scores) {
    if (static_cast<int>(row_scores.size()) != base.rows ||
        static_cast<int>(col_scores.size()) != base.cols)
        throw DataError("keyframe mask length mismatch: map " + std::to_string(base.rows) + "x" +
                        std::to_string(base.cols) + ", scores " +
                        std::to_string(row_scores.size()) + "/" +
                        std::to_string(col_scores.size()));
    MaskedMap m;
    m.base = &base;
    m.row_scores = row_scores;
    m.col_scores = col_scores;
    return m;
}

SimilarityMap MaskedMap::materialize() const {
    SimilarityMap out = base->densified();
    for (int i = 0; i < out.rows; ++i) {
        float* row = out.values.data() + static_cast<std::size_t>(i) * out.cols;
        for (int j = 0; j < out.cols; ++j)
            row[j] = static_cast<float>(row_scores[i] * (col_scores[j] * row[j]));
    }
    return out;
}

KeyframeSubmatrix keyframe_submatrix(const SimilarityMap& s, const std::vector<int>& k1,
                                     const std::vector<int>& k2, SubmatrixMode mode) {
    if (k1.empty() || k2.empty())
        throw DataError("keyframe_submatrix with empty keyframe set; interpolate first");
    for (int i : k1)
        if (i < 0 || i >= s.rows) throw DataError("row keyframe index out of bounds");
    for (int j : k2)
        if (j < 0 || j >= s.cols) throw DataError("col keyframe index out of bounds");

    std::vector<int> r1 = k1, r2 = k2;
    std::sort(r1.begin(), r1.end());
    r1.erase(std::unique(r1.begin(), r1.end()), r1.end());
    std::sort(r2.begin(), r2.end());
    r2.erase(std::unique(r2.begin(), r2.end()), r2.end());

    KeyframeSubmatrix out;
    if (mode == SubmatrixMode::ZeroFill) {
        SimilarityMap d = s.densified();
        std::vector<char> in1(s.rows, 0), in2(s.cols, 0);
        for (int i : r1) in1[i] = 1;
        for (int j : r2) in2[j] = 1;
        for (int i = 0; i < d.rows; ++i) {
            float* row = d.values.data() + static_cast<std::size_t>(i) * d.cols;
            for (int j = 0; j < d.cols; ++j)
                if (!in1[i] || !in2[j]) row[j] = 0.0f;
        }
        out.map = std::move(d);
        return out;
    }

    SimilarityMap d;
    d.query_id = s.query_id;
    d.ref_id = s.ref_id;
    d.rows = static_cast<int>(r1.size());
    d.cols = static_cast<int>(r2.size());
    d.row_fps = s.row_fps;
    d.col_fps = s.col_fps;
    d.values.resize(static_cast<std::size_t>(d.rows) * d.cols);
    for (int a = 0; a < d.rows; ++a)
        for (int b = 0; b < d.cols; ++b)
            d.values[static_cast<std::size_t>(a) * d.cols + b] = s.at(r1[a], r2[b]);
    out.map = std::move(d);
    out.row_map = std::move(r1);
    out.col_map = std::move(r2);
    return out;
}

static double back_project(const std::vector<int>& idx, double c) {
    if (idx.empty()) return c; // zero-fill: identity
    int n = static_cast<int>(idx.size());
    if (c <= 0.0) return idx.front() + c;
    if (c >= n) return idx.back() + 1 + (c - n);
    int t = static_cast<int>(std::floor(c));
    if (t >= n) t = n - 1;
    double frac = c - t;
    double lo = idx[t];
    double hi = (t + 1 < n) ? static_cast<double>(idx[t + 1]) : idx[n - 1] + 1.0;
    return lo + frac * (hi - lo);
}

double KeyframeSubmatrix::back_row(double r) const { return back_project(row_map, r); }
double KeyframeSubmatrix::back_col(double c) const { return back_project(col_map, c); }

std::vector<int> tile_offsets(int extent, int tile_size) {
    if (extent <= tile_size) return {0};
    int stride = tile_size / 2;
    int span = extent - tile_size;
    // Evenly spaced windows: floor(span/stride)+1 of them, last clamped to the
    // edge. Consecutive offsets stay below tile_size, so every cell is covered.
    int n = std::max(2, span / stride + 1);
    std::vector<int> offsets(n);
    for (int i = 0; i < n; ++i)
        offsets[i] = static_cast<int>(static_cast<long long>(i) * span / (n - 1));
    return offsets;
}

std::vector<Tile> prepare_detector_input(const SimilarityMap& m, int tile_size,
                                         bool clamp_negative) {
    if (tile_size <= 0) throw ConfigError("tile size must be positive");
    SimilarityMap d = m.densified();
    std::vector<int> row_offs = tile_offsets(d.rows, tile_size);
    std::vector<int> col_offs = tile_offsets(d.cols, tile_size);
    std::vector<Tile> tiles;
    tiles.reserve(row_offs.size() * col_offs.size());
    for (int ro : row_offs) {
        for (int co : col_offs) {
            Tile t;
            t.row_offset = ro;
            t.col_offset = co;
            t.size = tile_size;
            t.data.assign(static_cast<std::size_t>(tile_size) * tile_size, 0.0);
            int h = std::min(tile_size, d.rows - ro);
            int w = std::min(tile_size, d.cols - co);
            for (int y = 0; y < h; ++y) {
                const float* src = d.values.data() + static_cast<std::size_t>(ro + y) * d.cols + co;
                double* dst = t.data.data() + static_cast<std::size_t>(y) * tile_size;
                for (int x = 0; x < w; ++x) {
                    double v = src[x];
                    dst[x] = clamp_negative ? std::max(0.0, v) : v;
                }
            }
            tiles.push_back(std::move(t));
        }
    }
    return tiles;
}

void write_pgm(const SimilarityMap& m, const std::string& path) {
    SimilarityMap d = m.densified();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os << "P5\n" << d.cols << " " << d.rows << "\n255\n";
    for (float v : d.values) {
        double s = std::clamp(static_cast<double>(v), 0.0, 1.0);
        unsigned char b = static_cast<unsigned char>(std::lround(s * 255.0));
        os.write(reinterpret_cast<const char*>(&b), 1);
    }
    if (!os) throw DataError("write failed for '" + path + "'");
}

} // namespace segsim::simmap
