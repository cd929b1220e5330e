#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "segsim/align.hpp"
#include "segsim/eval.hpp"
#include "segsim/index.hpp"
#include "segsim/keyframe.hpp"
#include "segsim/spd.hpp"
#include "segsim/ssan.hpp"
#include "segsim/synth.hpp"

namespace segsim::pipeline {

// Layered run configuration: config file < SEGSIM_* environment < CLI flags.
// The canonical JSON form (sorted keys, no timings) is hashed into every
// produced manifest for provenance.
struct RunConfig {
    std::uint64_t seed = 42;
    int threads = 2;

    // dataset
    int n_pairs = 5;
    int n_distractors = 15;
    int n_train_pairs = 40;
    int dim = 32;
    int min_len = 144;
    int max_len = 288;
    double basis_fps = 8.0;
    double alpha = 0.8;
    int mean_shot_len = 32;
    double noise = 0.18;
    double low_quality_frac = 0.02;
    double low_quality_noise = 2.0;
    int segments_min = 1;
    int segments_max = 1;
    double spatial_sigma = 0.6;
    double stock_shot_prob = 0.35;
    int stock_pool_size = 12;
    int src_len_min = 32;
    int src_len_max = 80;

    // teacher + keyframes
    double teacher_sim_threshold = 0.85;
    int teacher_min_gap = 4;
    int teacher_max_gap = 64;
    double quantize_threshold = 0.5;
    int uniform_interval = 8;

    // index
    std::string index_kind = "flat"; // flat | ivf
    int kc = 8;
    int kmeans_iters = 10;
    int nprobe = 4;
    int topn = 50;
    double score_floor = 0.5;
    bool allow_self = false;

    // detector + training
    int detector_g = 128;
    double giou_weight = 1.0;
    int train_epochs = 6;
    int ssan_epochs = 4;
    double lr = 0.01;
    double momentum = 0.937;
    double weight_decay = 0.0005;
    int batch = 8;
    double scorer_lr_scale = 1.0;
    std::string model_path; // skip training when set

    // detection + baselines
    std::string method = "spd"; // hough | tn | dp | spd | ssan
    double detect_threshold = 0.1;
    double nms_iou = 0.5;
    double hough_offset_bin = 1.0;
    int hough_min_votes = 3;
    double baseline_min_sim = 0.7;
    int tn_max_gap = 3;
    double dp_gap_penalty = 0.1;

    nlohmann::json to_json() const;
    static RunConfig from_json(const nlohmann::json& j);
    void apply_env();
    std::uint64_t hash() const;
    std::string hash_hex() const;
};

keyframe::TeacherParams teacher_params(const RunConfig& c);
synth::DatasetConfig dataset_config(const RunConfig& c, std::uint64_t seed, int n_pairs,
                                    int n_distractors);

// Teacher labels (quality-masked) for every video of a dataset.
std::map<std::string, std::vector<std::uint8_t>> label_dataset(const synth::Dataset& ds,
                                                               const RunConfig& c);

// Per-pair training samples (dense clamped tiles + per-tile gt) for the
// detector; mask fusion happens later.
std::vector<ssan::PairSample> build_pair_samples(
    const synth::Dataset& ds, const std::map<std::string, std::vector<std::uint8_t>>& labels,
    const RunConfig& c);

// Flattens pair samples into per-tile detector samples. mask_fraction > 0
// randomly comb-masks that share of tiles (keyframe-style dropout) so the
// detector tolerates sparse inputs.
std::vector<spd::TrainSample> flatten_tiles(const std::vector<ssan::PairSample>& pairs,
                                            double mask_fraction, int mask_interval,
                                            std::uint64_t seed);

// Zero-fill keyframe masking by binary effective scores, then detection.
spd::PairDetections detect_with_keyframes(const spd::DetectorParams& det,
                                          const ssan::PairSample& sample,
                                          const std::vector<int>& keys_q,
                                          const std::vector<int>& keys_r,
                                          const spd::DetectOptions& opt);

// Keyframe set for a video: quantized scores united with the sparse uniform
// grid.
std::vector<int> select_keyframes(const std::vector<double>& scores, double threshold,
                                  int interval);

struct StageTimings {
    std::vector<std::pair<std::string, double>> seconds;
    void add(const std::string& stage, double s) { seconds.emplace_back(stage, s); }
};

// Full pipeline: synth -> teacher labels -> scorer -> (train) -> keyframes ->
// index -> query -> align -> eval. Writes dataset files, model, index,
// matches.jsonl, report.json and run_manifest.json into out_dir.
int run_pipeline(const RunConfig& c, const std::string& out_dir);

// Recomputes the hash chain recorded in run_manifest.json.
bool verify_run_dir(const std::string& dir, std::string* message);

// JSON helpers shared by the CLI.
nlohmann::json strip_timings(nlohmann::json j);
std::uint64_t file_digest(const std::string& path);

std::string matches_to_jsonl(const eval::SegmentSet& preds, const std::string& method);
eval::SegmentSet matches_from_jsonl(const std::string& text);

} // namespace segsim::pipeline
