#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segsim/align.hpp"
#include "segsim/features.hpp"
#include "segsim/rng.hpp"

namespace segsim::synth {

// Shot-structured random-walk generator. Each shot draws a fresh unit anchor;
// frames follow normalize(alpha*prev + (1-alpha)*anchor + noise). A small
// fraction of frames receives heavy noise and a low-quality flag.
struct SynthConfig {
    int dim = 32;
    int min_len = 144; // frames at basis_fps
    int max_len = 288;
    float basis_fps = 8.0f;
    double alpha = 0.8;
    int mean_shot_len = 32;
    double noise = 0.18;
    double low_quality_frac = 0.02;
    double low_quality_noise = 2.0;
    // Recurring "stock footage": shots may draw their anchor from a shared
    // pool, producing strong square cross-video similarity blocks that are
    // not copies. Disabled when shared_shot_prob == 0.
    double shared_shot_prob = 0.0;
    int shared_pool_size = 12;
    std::uint64_t pool_seed = 0;
    std::uint64_t seed = 1;
};

struct SynthVideo {
    features::FeatureSequence seq;
    std::vector<std::uint8_t> low_quality;
};

SynthVideo gen_video(const SynthConfig& cfg, std::uint64_t seed, const std::string& video_id);

enum class TemporalKind { Clip, Concat, Accelerate, Decelerate, Drop, FpsChange };

struct TemporalTransform {
    TemporalKind kind = TemporalKind::Clip;
    int clip_start = 0;
    int clip_len = 0;   // 0 = to end
    int k = 2;          // accelerate/decelerate factor, in {2, 3}
    double p = 0.2;     // drop probability, in (0, 0.5)
    double rate = 1.0;  // fps_change ratio, > 0
};

// Source frame index per output frame; -1 marks foreign frames (concat tail).
struct TimeMapping {
    std::vector<int> src;

    int min_src() const;
    int max_src() const;
    TimeMapping compose(const TimeMapping& inner) const; // this applied after inner
};

std::pair<features::FeatureSequence, TimeMapping> apply_temporal(
    const features::FeatureSequence& seq, const TemporalTransform& t, std::uint64_t seed,
    const features::FeatureSequence* other = nullptr);

// Feature-space stand-in for spatial edits: seeded Gaussian perturbation plus
// an optional fixed small-angle Givens rotation applied to every frame, then
// renormalization.
features::FeatureSequence apply_spatial_proxy(const features::FeatureSequence& seq,
                                              double sigma_extra, std::uint64_t rotation_seed,
                                              bool rotate = true);

// Mean cosine between each perturbed frame and its original.
double mean_self_similarity(const features::FeatureSequence& a,
                            const features::FeatureSequence& b);

struct SegmentSpec {
    TemporalTransform transform;
    double spatial_sigma = 0.6;
    int src_len = 64; // frames taken from the reference video
};

struct PairSpec {
    std::string query_id;
    std::string ref_id;
    std::vector<SegmentSpec> segments; // >= 1, spliced disjointly
    bool adjacent = false;             // concat-style: splice segments back to back
};

struct GroundTruthPair {
    SynthVideo query;
    SynthVideo ref;
    std::vector<align::SegmentMatch> segments; // score = 1
    std::vector<std::string> tags;             // transform tag per segment
};

GroundTruthPair make_pair(const SynthConfig& cfg, const PairSpec& spec, std::uint64_t seed);

// Uniform mix over the six temporal edit kinds, spatial proxy always on.
// out_budget > 0 caps the source length so the transformed segment fits.
SegmentSpec random_segment_spec(Rng& rng, double spatial_sigma, int src_len_min, int src_len_max,
                                int out_budget = 0);

struct DatasetConfig {
    SynthConfig video;
    int n_pairs = 50;
    int n_distractors = 0;
    int segments_min = 1;
    int segments_max = 1;
    double spatial_sigma = 0.6;
    int src_len_min = 32;
    int src_len_max = 80;
    std::uint64_t seed = 7;
};

struct DatasetEntry {
    std::string query_id;
    std::string ref_id;
    std::vector<align::SegmentMatch> segments;
    std::vector<std::string> tags;
};

struct Dataset {
    features::FeatureStore queries;
    features::FeatureStore gallery;
    std::vector<DatasetEntry> entries;
    std::vector<std::pair<std::string, std::vector<std::uint8_t>>> low_quality; // per video id
};

// In-memory generation; deterministic per seed, pairs derive their seeds as
// mix(master, pair_index) so results are schedule-independent.
Dataset make_dataset(const DatasetConfig& cfg);

// Annotation lines: query_id,ref_id,q_start,q_end,r_start,r_end (seconds,
// 3 decimals, VCDB-style).
std::string annotations_to_csv(const std::vector<DatasetEntry>& entries);
std::vector<DatasetEntry> annotations_from_csv(const std::string& text);

struct DatasetFiles {
    std::string manifest_path;
    std::string queries_path;
    std::string gallery_path;
    std::string annotations_path;
};

// Writes queries.sgaf, gallery.sgaf, annotations.csv and manifest.json into
// out_dir; returns the paths. Byte-identical across runs for equal config.
DatasetFiles write_dataset(const Dataset& ds, const DatasetConfig& cfg,
                           const std::string& out_dir);

} // namespace segsim::synth
