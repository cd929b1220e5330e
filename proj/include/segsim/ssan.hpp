#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segsim/keyframe.hpp"
#include "segsim/spd.hpp"

namespace segsim::ssan {

struct SsanParams {
    keyframe::ScorerParams scorer;
    spd::DetectorParams detector;
};

// Everything fixed about one training pair: the precomputed similarity map
// (negatives clamped, pre-tiled), per-frame novelty descriptors, teacher
// labels, the sparse uniform mask and gt boxes per tile. Scores and the
// fused mask are recomputed from the live scorer each step.
struct PairSample {
    std::string query_id, ref_id;
    int rows = 0, cols = 0;
    float row_fps = 8.0f, col_fps = 8.0f;
    std::vector<simmap::Tile> tiles;                  // clamped base tiles
    std::vector<std::vector<spd::Box>> tile_gt;       // per tile, tile-local
    std::vector<spd::Box> gt;                         // map-cell coords
    std::vector<std::array<double, 3>> phi_q, phi_r;  // novelty descriptors
    std::vector<std::uint8_t> labels_q, labels_r;     // teacher labels
    std::vector<std::uint8_t> umask_q, umask_r;       // sparse uniform mask
};

PairSample prepare_pair(const features::FeatureSequence& q, const features::FeatureSequence& r,
                        const simmap::SimilarityMap& s,
                        const std::vector<std::uint8_t>& labels_q,
                        const std::vector<std::uint8_t>& labels_r,
                        const std::vector<align::SegmentMatch>& gt_segments,
                        int uniform_interval, int tile_size);

// Effective per-frame weights: max(sigmoid score, uniform mask).
struct EffectiveScores {
    std::vector<double> scores_q, scores_r; // raw sigmoid scores
    std::vector<double> eff_q, eff_r;
};

EffectiveScores effective_scores(const SsanParams& p, const PairSample& s);

// Mask fusion + detection on the fused map. With every effective score equal
// to 1 this is bit-identical to running the detector on the raw clamped map.
spd::PairDetections ssan_forward(const SsanParams& p, const PairSample& s,
                                 const spd::DetectOptions& opt);

// l_ssan = l_ske(query) + l_ske(ref) + l_spd(masked map); l_spd is the mean
// over the pair's tiles.
spd::TrainingStats ssan_loss(const SsanParams& p, const PairSample& s);

struct SsanGrads {
    std::array<double, 4> scorer{0, 0, 0, 0}; // w0, w1, w2, bias
    spd::DetectorParams detector;
};

spd::TrainingStats ssan_loss_grad(const SsanParams& p, const PairSample& s, SsanGrads& grads);

struct SsanTrainLog {
    int epoch = 0;
    double l_ske = 0.0, l_spd = 0.0, l_ssan = 0.0;
    double compression_ratio = 0.0; // at quantize_threshold, query videos
};

struct SsanTrainHyper {
    spd::TrainHyper sgd;          // lr/momentum/wd/epochs/batch/seed
    double scorer_lr_scale = 1.0; // scorer steps at lr * scale
    double quantize_threshold = 0.5;
};

// Joint training from pretrained components; deterministic given seed.
SsanParams train_ssan(const std::vector<PairSample>& data, const SsanParams& init,
                      const SsanTrainHyper& hyper, std::vector<SsanTrainLog>* log = nullptr);

// Max relative error (unit-floored) between analytic and central-difference
// gradients of l_ssan w.r.t. the 4 scorer parameters.
double ssan_grad_check(const SsanParams& p, const PairSample& s, double h = 1e-5);

// SGSM model file: magic, version u32 = 1, scorer block (4 f64), detector
// block as in SGDM.
void save_sgsm(const SsanParams& p, const std::string& path);
SsanParams load_sgsm(const std::string& path);

} // namespace segsim::ssan
