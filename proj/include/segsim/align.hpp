#pragma once

#include <vector>

#include "segsim/simmap.hpp"

namespace segsim::align {

// One aligned segment pair: query interval [q_start, q_end) against reference
// interval [r_start, r_end), in seconds. Score semantics depend on the method
// (vote mass, path weight, block score); raw, not normalized.
struct SegmentMatch {
    double q_start = 0.0;
    double q_end = 0.0;
    double r_start = 0.0;
    double r_end = 0.0;
    double score = 0.0;
};

struct HoughParams {
    double offset_bin = 1.0; // seconds
    int min_votes = 3;
    double min_sim = 0.7;
};

struct TNParams {
    int max_frame_gap = 3;
    double min_sim = 0.7;
};

struct DPParams {
    double min_sim = 0.7;
    double gap_penalty = 0.1;
    int band_width = 0; // 0 = unbounded; see dp_align notes
};

// Cells with sim >= min_sim vote into offset bins (offset = r_time - q_time);
// every bin reaching min_votes yields one match spanning its voting cells.
std::vector<SegmentMatch> hough_align(const simmap::SimilarityMap& m, const HoughParams& p);

// Temporal network: matched cells are nodes, edges connect strictly
// increasing cells within max_frame_gap on both axes, and matches are
// maximum-weight paths extracted repeatedly until below 2*min_sim.
std::vector<SegmentMatch> tn_align(const simmap::SimilarityMap& m, const TNParams& p);

// Local-alignment recurrence
//   A[i][j] = max(0, max(A[i-1][j-1], A[i-1][j]-gap, A[i][j-1]-gap) + (M[i][j]-min_sim))
// traced back from the global maximum, with extract-and-suppress iteration.
// band_width > 0 restricts lateral drift relative to the traceback origin
// (greedy, measured against each path's start offset); 0 disables the band.
std::vector<SegmentMatch> dp_align(const simmap::SimilarityMap& m, const DPParams& p);

} // namespace segsim::align
