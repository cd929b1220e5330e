#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "segsim/features.hpp"

namespace segsim::keyframe {

// Teacher rule: frame 0 is always a keyframe; frame i becomes one when its
// similarity to the last selected keyframe drops below sim_threshold and at
// least min_gap frames have passed, or unconditionally after max_gap frames.
struct TeacherParams {
    double sim_threshold = 0.85;
    int min_gap = 4;
    int max_gap = 64;
};

std::vector<std::uint8_t> teacher_select(const features::FeatureSequence& seq,
                                         const TeacherParams& p);

// Pre-processing step: low-quality frames are never keyframes.
void apply_quality_mask(std::vector<std::uint8_t>& labels,
                        const std::vector<std::uint8_t>& low_quality);

// Guarantees at least one positive label in every window
// [k*interval, (k+1)*interval); windows with none get their first frame set.
std::vector<std::uint8_t> sparse_uniform_interpolate(std::vector<std::uint8_t> labels,
                                                     int interval);

// Linear scorer over a 3-component per-frame novelty descriptor:
//   phi(i) = (1 - cos(f_i, f_{i-1}),
//             1 - max cos(f_i, f_{i-w..i-1}),
//             mean cos(f_i, f_{i-w..i-1}))   with window w = 8, phi(0) = (1,1,0).
struct ScorerParams {
    std::array<double, 3> w{0.0, 0.0, 0.0};
    double bias = 0.0;
};

inline constexpr int kNoveltyWindow = 8;

std::array<double, 3> novelty_descriptor(const features::FeatureSequence& seq, int i);

struct KeyframeScores {
    std::string video_id;
    std::vector<double> scores;        // sigmoid confidence per basis frame
    std::vector<std::uint8_t> labels;  // optional teacher labels (may be empty)
};

KeyframeScores score_frames(const features::FeatureSequence& seq, const ScorerParams& theta);

// Mean binary cross entropy with scores clamped to [1e-7, 1 - 1e-7].
double ske_loss(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels);

// Analytic d(ske_loss)/d(w0,w1,w2,bias) for a sequence scored with theta.
std::array<double, 4> ske_loss_grad(const features::FeatureSequence& seq,
                                    const ScorerParams& theta,
                                    const std::vector<std::uint8_t>& labels);

// Indices with score >= threshold; never empty (index 0 is force-included).
std::vector<int> quantize_scores(const std::vector<double>& scores, double threshold);

double compression_ratio(const std::vector<int>& keys, int frame_count);

// Plain gradient descent on the 4 scorer parameters against teacher labels.
struct ScorerTrainHyper {
    double lr = 1.0;
    int epochs = 2000;
};

ScorerParams train_scorer(const std::vector<const features::FeatureSequence*>& seqs,
                          const std::vector<const std::vector<std::uint8_t>*>& labels,
                          const ScorerTrainHyper& hyper);

// Tiled-canvas geometry: frame i of an m*m grid of s-pixel blocks sits at
// (row, col) = (i / m, i mod m); the box is [col*s, row*s, (col+1)*s, (row+1)*s].
struct TilingSpec {
    int block_size = 32;
    int grid_m = 24;
};

std::array<int, 4> tile_bbox(int i, const TilingSpec& t);

// JSON-lines export: {"video_id": ..., "labels": [...], "scores": [...]}.
std::string scores_to_jsonl(const KeyframeScores& ks);

} // namespace segsim::keyframe
