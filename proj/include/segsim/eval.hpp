#pragma once

#include <map>
#include <string>
#include <vector>

#include "segsim/align.hpp"
#include "segsim/simmap.hpp"

namespace segsim::eval {

using PairKey = std::pair<std::string, std::string>; // (query_id, ref_id)
using SegmentSet = std::map<PairKey, std::vector<align::SegmentMatch>>;

struct PairBreakdown {
    int pred_cells = 0;
    int correct_cells = 0;
    int gt_cells = 0;
    int covered_cells = 0;
    double f1 = 0.0;
};

struct EvalReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;       // micro (pooled seconds)
    double macro_f1 = 0.0; // mean of per-pair F1
    double mAP = 0.0;
    std::vector<std::pair<double, double>> pr_points; // (precision, recall)
    double best_threshold = 0.0;
    double compression_ratio = 0.0;
    int skipped_queries = 0;
    std::map<PairKey, PairBreakdown> per_pair;
};

// House per-second protocol: each segment rasterizes to (q-second, r-second)
// cells along its linear time map; a predicted cell is correct when some gt
// segment of the pair covers it on both axes, and a gt cell is covered when
// some prediction does. F1 with empty predictions is 0 by convention.
EvalReport segment_f1(const SegmentSet& preds, const SegmentSet& gts, double score_threshold);

struct SweepResult {
    EvalReport best;
    std::vector<std::pair<double, double>> curve; // (precision, recall) per threshold
    std::vector<double> thresholds;
};

// Evaluates at every distinct prediction score and returns the best-F1 report
// plus the full PR curve.
SweepResult sweep_f1(const SegmentSet& preds, const SegmentSet& gts);

// Uninterpolated AP averaged over queries; queries with an empty relevance
// set are skipped and counted.
double map_eval(const std::map<std::string, std::vector<std::pair<std::string, double>>>& rankings,
                const std::map<std::string, std::vector<std::string>>& relevant,
                int* skipped = nullptr);

// P6 pixmap: map as grayscale, gt boxes green, predicted boxes red, 1-px
// outlines clipped to the image.
void dump_map_image(const simmap::SimilarityMap& m,
                    const std::vector<align::SegmentMatch>& gt_boxes,
                    const std::vector<align::SegmentMatch>& pred_boxes,
                    const std::string& path);

std::string report_to_json(const EvalReport& r);

} // namespace segsim::eval
