#include "segsim/align.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace segsim::align {

namespace {

struct Cell {
    int i, j;
    double sim;
};

// Nonzero candidate cells with sim >= min_sim, in (i, j) order.
std::vector<Cell> matched_cells(const simmap::SimilarityMap& m, double min_sim) {
    std::vector<Cell> out;
    if (m.is_sparse) {
        for (const auto& c : m.cells)
            if (c.value >= min_sim) out.push_back({c.row, c.col, c.value});
    } else {
        for (int i = 0; i < m.rows; ++i) {
            const float* row = m.values.data() + static_cast<std::size_t>(i) * m.cols;
            for (int j = 0; j < m.cols; ++j)
                if (row[j] >= min_sim) out.push_back({i, j, row[j]});
        }
    }
    return out;
}

void sort_matches(std::vector<SegmentMatch>& out) {
    std::sort(out.begin(), out.end(), [](const SegmentMatch& a, const SegmentMatch& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.q_start != b.q_start) return a.q_start < b.q_start;
        return a.r_start < b.r_start;
    });
}

} // namespace

std::vector<SegmentMatch> hough_align(const simmap::SimilarityMap& m, const HoughParams& p) {
    struct Bin {
        int votes = 0;
        double score = 0.0;
        int qi_min = 0, qi_max = 0, rj_min = 0, rj_max = 0;
    };
    std::map<long long, Bin> bins;
    for (const Cell& c : matched_cells(m, p.min_sim)) {
        double offset = c.j / static_cast<double>(m.col_fps) - c.i / static_cast<double>(m.row_fps);
        long long key = static_cast<long long>(std::floor(offset / p.offset_bin));
        auto [it, fresh] = bins.try_emplace(key);
        Bin& b = it->second;
        if (fresh) {
            b.qi_min = b.qi_max = c.i;
            b.rj_min = b.rj_max = c.j;
        } else {
            b.qi_min = std::min(b.qi_min, c.i);
            b.qi_max = std::max(b.qi_max, c.i);
            b.rj_min = std::min(b.rj_min, c.j);
            b.rj_max = std::max(b.rj_max, c.j);
        }
        b.votes += 1;
        b.score += c.sim;
    }
    std::vector<SegmentMatch> out;
    for (const auto& [key, b] : bins) {
        if (b.votes < p.min_votes) continue;
        SegmentMatch s;
        s.q_start = b.qi_min / static_cast<double>(m.row_fps);
        s.q_end = (b.qi_max + 1) / static_cast<double>(m.row_fps);
        s.r_start = b.rj_min / static_cast<double>(m.col_fps);
        s.r_end = (b.rj_max + 1) / static_cast<double>(m.col_fps);
        s.score = b.score;
        out.push_back(s);
    }
    sort_matches(out);
    return out;
}

std::vector<SegmentMatch> tn_align(const simmap::SimilarityMap& m, const TNParams& p) {
    std::vector<Cell> nodes = matched_cells(m, p.min_sim);
    const int n = static_cast<int>(nodes.size());
    std::map<std::pair<int, int>, int> by_pos;
    for (int k = 0; k < n; ++k) by_pos[{nodes[k].i, nodes[k].j}] = k;

    std::vector<char> used(n, 0);
    std::vector<SegmentMatch> out;
    const double stop = 2.0 * p.min_sim;

    while (true) {
        // Longest node-weighted path over the DAG; nodes are already in
        // topological (i, j) order.
        std::vector<double> best(n, 0.0);
        std::vector<int> parent(n, -1);
        int best_end = -1;
        double best_weight = -1.0;
        for (int k = 0; k < n; ++k) {
            if (used[k]) continue;
            best[k] = nodes[k].sim;
            for (int di = 1; di <= p.max_frame_gap; ++di) {
                for (int dj = 1; dj <= p.max_frame_gap; ++dj) {
                    auto it = by_pos.find({nodes[k].i - di, nodes[k].j - dj});
                    if (it == by_pos.end() || used[it->second]) continue;
                    double w = best[it->second] + nodes[k].sim;
                    if (w > best[k]) {
                        best[k] = w;
                        parent[k] = it->second;
                    }
                }
            }
            if (best[k] > best_weight) {
                best_weight = best[k];
                best_end = k;
            }
        }
        if (best_end < 0 || best_weight < stop) break;

        int qi_min = nodes[best_end].i, qi_max = nodes[best_end].i;
        int rj_min = nodes[best_end].j, rj_max = nodes[best_end].j;
        for (int k = best_end; k != -1; k = parent[k]) {
            used[k] = 1;
            qi_min = std::min(qi_min, nodes[k].i);
            qi_max = std::max(qi_max, nodes[k].i);
            rj_min = std::min(rj_min, nodes[k].j);
            rj_max = std::max(rj_max, nodes[k].j);
        }
        SegmentMatch s;
        s.q_start = qi_min / static_cast<double>(m.row_fps);
        s.q_end = (qi_max + 1) / static_cast<double>(m.row_fps);
        s.r_start = rj_min / static_cast<double>(m.col_fps);
        s.r_end = (rj_max + 1) / static_cast<double>(m.col_fps);
        s.score = best_weight;
        out.push_back(s);
    }
    sort_matches(out);
    return out;
}

std::vector<SegmentMatch> dp_align(const simmap::SimilarityMap& m, const DPParams& p) {
    simmap::SimilarityMap d = m.densified();
    const int rows = d.rows, cols = d.cols;
    if (rows == 0 || cols == 0) return {};

    std::vector<char> suppressed(static_cast<std::size_t>(rows) * cols, 0);
    std::vector<double> acc(static_cast<std::size_t>(rows) * cols, 0.0);
    // Traceback origin per cell, used for the optional offset band.
    std::vector<int> origin(static_cast<std::size_t>(rows) * cols, -1);

    auto idx = [cols](int i, int j) { return static_cast<std::size_t>(i) * cols + j; };
    const double stop = 2.0 * p.min_sim;
    std::vector<SegmentMatch> out;

    while (true) {
        double global_best = 0.0;
        int bi = -1, bj = -1;
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
                std::size_t k = idx(i, j);
                if (suppressed[k]) {
                    acc[k] = 0.0;
                    origin[k] = -1;
                    continue;
                }
                double gain = static_cast<double>(d.values[k]) - p.min_sim;
                double best_pred = 0.0;
                int best_origin = static_cast<int>(k);
                auto consider = [&](int pi, int pj, double penalty) {
                    std::size_t pk = idx(pi, pj);
                    double v = acc[pk] - penalty;
                    if (v <= best_pred) return;
                    if (p.band_width > 0 && origin[pk] >= 0) {
                        int oi = origin[pk] / cols, oj = origin[pk] % cols;
                        if (std::abs((j - i) - (oj - oi)) > p.band_width) return;
                    }
                    best_pred = v;
                    best_origin = origin[pk] >= 0 ? origin[pk] : static_cast<int>(pk);
                };
                if (i > 0 && j > 0) consider(i - 1, j - 1, 0.0);
                if (i > 0) consider(i - 1, j, p.gap_penalty);
                if (j > 0) consider(i, j - 1, p.gap_penalty);
                double v = best_pred + gain;
                if (v <= 0.0) {
                    acc[k] = 0.0;
                    origin[k] = -1;
                } else {
                    acc[k] = v;
                    origin[k] = best_pred > 0.0 ? best_origin : static_cast<int>(k);
                }
                if (acc[k] > global_best) {
                    global_best = acc[k];
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi < 0 || global_best < stop) break;

        // Trace the argmax chain back to its origin, suppressing the path.
        int i = bi, j = bj;
        int qi_min = bi, qi_max = bi, rj_min = bj, rj_max = bj;
        while (true) {
            std::size_t k = idx(i, j);
            suppressed[k] = 1;
            qi_min = std::min(qi_min, i);
            rj_min = std::min(rj_min, j);
            double gain = static_cast<double>(d.values[k]) - p.min_sim;
            double rest = acc[k] - gain;
            if (rest <= 1e-12) break;
            // Recover which predecessor supplied `rest`.
            double best_v = -std::numeric_limits<double>::infinity();
            int ni = i, nj = j;
            auto consider = [&](int pi, int pj, double penalty) {
                if (suppressed[idx(pi, pj)]) return;
                double v = acc[idx(pi, pj)] - penalty;
                if (p.band_width > 0 && origin[idx(pi, pj)] >= 0) {
                    int oi = origin[idx(pi, pj)] / cols, oj = origin[idx(pi, pj)] % cols;
                    if (std::abs((j - i) - (oj - oi)) > p.band_width) return;
                }
                if (v > best_v) {
                    best_v = v;
                    ni = pi;
                    nj = pj;
                }
            };
            if (i > 0 && j > 0) consider(i - 1, j - 1, 0.0);
            if (i > 0) consider(i - 1, j, p.gap_penalty);
            if (j > 0) consider(i, j - 1, p.gap_penalty);
            if (ni == i && nj == j) break;
            i = ni;
            j = nj;
        }
        SegmentMatch s;
        s.q_start = qi_min / static_cast<double>(d.row_fps);
        s.q_end = (qi_max + 1) / static_cast<double>(d.row_fps);
        s.r_start = rj_min / static_cast<double>(d.col_fps);
        s.r_end = (rj_max + 1) / static_cast<double>(d.col_fps);
        s.score = global_best;
        out.push_back(s);
    }
    sort_matches(out);
    return out;
}

} // namespace segsim::align
