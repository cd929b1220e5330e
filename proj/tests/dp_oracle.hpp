#pragma once

// Test-only reference implementations for dp_align: a top-down memoized
// search over all (start, end, offset-path) chains, plus a brute-force path
// enumerator used to validate the memoized version on tiny maps. Both score a
// path by replaying the published recurrence fold, so an agreeing optimal
// path yields a bit-identical score.

#include <limits>
#include <utility>
#include <vector>

#include "segsim/align.hpp"

namespace testoracle {

struct DpOracleResult {
    double score = 0.0;
    int qi_min = 0, qi_max = 0, rj_min = 0, rj_max = 0;
    bool found = false;
};

// Exact replay of the dp_align fold over an explicit path (cells in walk
// order; moves derived from coordinate deltas).
inline double replay_score(const segsim::simmap::SimilarityMap& m,
                           const std::vector<std::pair<int, int>>& path,
                           const segsim::align::DPParams& p) {
    double acc = 0.0;
    for (std::size_t k = 0; k < path.size(); ++k) {
        double gain = static_cast<double>(m.at(path[k].first, path[k].second)) - p.min_sim;
        double pred = 0.0;
        if (k > 0) {
            bool diagonal = path[k].first == path[k - 1].first + 1 &&
                            path[k].second == path[k - 1].second + 1;
            pred = diagonal ? acc : acc - p.gap_penalty;
            if (pred < 0.0) pred = 0.0;
        }
        acc = pred + gain;
        if (acc < 0.0) acc = 0.0;
    }
    return acc;
}

namespace detail {

struct Memo {
    std::vector<double> best;  // best suffix value starting at the cell
    std::vector<int> choice;   // -1 stop, 0 diag, 1 down, 2 right
    std::vector<char> ready;
};

inline double suffix_best(const segsim::simmap::SimilarityMap& m,
                          const segsim::align::DPParams& p, Memo& memo, int i, int j) {
    std::size_t k = static_cast<std::size_t>(i) * m.cols + j;
    if (memo.ready[k]) return memo.best[k];
    double gain = static_cast<double>(m.at(i, j)) - p.min_sim;
    double best_tail = 0.0;
    int choice = -1;
    if (i + 1 < m.rows && j + 1 < m.cols) {
        double v = suffix_best(m, p, memo, i + 1, j + 1);
        if (v > best_tail) {
            best_tail = v;
            choice = 0;
        }
    }
    if (i + 1 < m.rows) {
        double v = suffix_best(m, p, memo, i + 1, j) - p.gap_penalty;
        if (v > best_tail) {
            best_tail = v;
            choice = 1;
        }
    }
    if (j + 1 < m.cols) {
        double v = suffix_best(m, p, memo, i, j + 1) - p.gap_penalty;
        if (v > best_tail) {
            best_tail = v;
            choice = 2;
        }
    }
    memo.best[k] = gain + best_tail;
    memo.choice[k] = choice;
    memo.ready[k] = 1;
    return memo.best[k];
}

} // namespace detail

inline DpOracleResult dp_best_block(const segsim::simmap::SimilarityMap& m_in,
                                    const segsim::align::DPParams& p) {
    segsim::simmap::SimilarityMap m = m_in.densified();
    DpOracleResult out;
    if (m.rows == 0 || m.cols == 0) return out;
    detail::Memo memo;
    memo.best.assign(static_cast<std::size_t>(m.rows) * m.cols, 0.0);
    memo.choice.assign(memo.best.size(), -1);
    memo.ready.assign(memo.best.size(), 0);

    int bi = 0, bj = 0;
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            double v = detail::suffix_best(m, p, memo, i, j);
            if (v > best) {
                best = v;
                bi = i;
                bj = j;
            }
        }
    }
    if (best <= 0.0) return out;

    std::vector<std::pair<int, int>> path{{bi, bj}};
    int i = bi, j = bj;
    while (true) {
        std::size_t k = static_cast<std::size_t>(i) * m.cols + j;
        int c = memo.choice[k];
        if (c < 0) break;
        // Follow the recorded choice only while it contributes positively.
        double tail;
        if (c == 0)
            tail = memo.best[static_cast<std::size_t>(i + 1) * m.cols + (j + 1)];
        else if (c == 1)
            tail = memo.best[static_cast<std::size_t>(i + 1) * m.cols + j] - p.gap_penalty;
        else
            tail = memo.best[static_cast<std::size_t>(i) * m.cols + (j + 1)] - p.gap_penalty;
        if (tail <= 0.0) break;
        if (c == 0) {
            ++i;
            ++j;
        } else if (c == 1) {
            ++i;
        } else {
            ++j;
        }
        path.emplace_back(i, j);
    }
    out.found = true;
    out.score = replay_score(m, path, p);
    out.qi_min = path.front().first;
    out.rj_min = path.front().second;
    out.qi_max = path.back().first;
    out.rj_max = path.back().second;
    return out;
}

// Exponential enumeration of every monotone path; tiny maps only.
inline void enumerate_paths(const segsim::simmap::SimilarityMap& m,
                            const segsim::align::DPParams& p,
                            std::vector<std::pair<int, int>>& path, double& best) {
    double score = replay_score(m, path, p);
    if (score > best) best = score;
    auto [i, j] = path.back();
    const int moves[3][2] = {{1, 1}, {1, 0}, {0, 1}};
    for (const auto& mv : moves) {
        int ni = i + mv[0], nj = j + mv[1];
        if (ni >= m.rows || nj >= m.cols) continue;
        path.emplace_back(ni, nj);
        enumerate_paths(m, p, path, best);
        path.pop_back();
    }
}

inline DpOracleResult dp_best_block_bruteforce(const segsim::simmap::SimilarityMap& m_in,
                                               const segsim::align::DPParams& p) {
    segsim::simmap::SimilarityMap m = m_in.densified();
    DpOracleResult out;
    double best = 0.0;
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            std::vector<std::pair<int, int>> path{{i, j}};
            enumerate_paths(m, p, path, best);
        }
    }
    out.found = best > 0.0;
    out.score = best;
    return out;
}

} // namespace testoracle
