#include "segsim/keyframe.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace segsim::keyframe {

std::vector<std::uint8_t> teacher_select(const features::FeatureSequence& seq,
                                         const TeacherParams& p) {
    const int n = seq.frame_count();
    if (n == 0) throw DataError("teacher_select on empty sequence");
    std::vector<std::uint8_t> labels(n, 0);
    labels[0] = 1;
    int last = 0;
    for (int i = 1; i < n; ++i) {
        int gap = i - last;
        if (gap >= p.max_gap) {
            labels[i] = 1;
            last = i;
            continue;
        }
        if (gap < p.min_gap) continue;
        double sim = features::cosine_sim(seq.frame(i), seq.frame(last));
        if (sim < p.sim_threshold) {
            labels[i] = 1;
            last = i;
        }
    }
    return labels;
}

void apply_quality_mask(std::vector<std::uint8_t>& labels,
                        const std::vector<std::uint8_t>& low_quality) {
    if (low_quality.empty()) return;
    if (low_quality.size() != labels.size())
        throw DataError("quality mask length mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (low_quality[i]) labels[i] = 0;
}

std::vector<std::uint8_t> sparse_uniform_interpolate(std::vector<std::uint8_t> labels,
                                                     int interval) {
    if (interval < 1) throw ConfigError("interpolation interval must be >= 1");
    const int n = static_cast<int>(labels.size());
    for (int start = 0; start < n; start += interval) {
        int end = std::min(start + interval, n);
        bool any = false;
        for (int i = start; i < end; ++i)
            if (labels[i]) {
                any = true;
                break;
            }
        if (!any) labels[start] = 1;
    }
    return labels;
}

std::array<double, 3> novelty_descriptor(const features::FeatureSequence& seq, int i) {
    if (i == 0) return {1.0, 1.0, 0.0};
    auto fi = seq.frame(i);
    double prev = features::cosine_sim(fi, seq.frame(i - 1));
    int lo = std::max(0, i - kNoveltyWindow);
    double max_sim = -1.0, sum = 0.0;
    for (int j = lo; j < i; ++j) {
        double s = features::cosine_sim(fi, seq.frame(j));
        max_sim = std::max(max_sim, s);
        sum += s;
    }
    double mean = sum / (i - lo);
    return {1.0 - prev, 1.0 - max_sim, mean};
}

static inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

KeyframeScores score_frames(const features::FeatureSequence& seq, const ScorerParams& theta) {
    const int n = seq.frame_count();
    if (n == 0) throw DataError("score_frames on empty sequence");
    KeyframeScores ks;
    ks.video_id = seq.video_id;
    ks.scores.resize(n);
    for (int i = 0; i < n; ++i) {
        auto phi = novelty_descriptor(seq, i);
        double logit = theta.bias;
        for (int k = 0; k < 3; ++k) logit += theta.w[k] * phi[k];
        ks.scores[i] = sigmoid(logit);
    }
    return ks;
}

static constexpr double kEps = 1e-7;

double ske_loss(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    if (scores.size() != labels.size())
        throw DataError("ske_loss length mismatch: " + std::to_string(scores.size()) + " vs " +
                        std::to_string(labels.size()));
    if (scores.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        double p = std::clamp(scores[i], kEps, 1.0 - kEps);
        acc += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return acc / static_cast<double>(scores.size());
}

std::array<double, 4> ske_loss_grad(const features::FeatureSequence& seq,
                                    const ScorerParams& theta,
                                    const std::vector<std::uint8_t>& labels) {
    const int n = seq.frame_count();
    if (static_cast<int>(labels.size()) != n) throw DataError("ske_loss_grad length mismatch");
    std::array<double, 4> g{0.0, 0.0, 0.0, 0.0};
    for (int i = 0; i < n; ++i) {
        auto phi = novelty_descriptor(seq, i);
        double logit = theta.bias;
        for (int k = 0; k < 3; ++k) logit += theta.w[k] * phi[k];
        double p = sigmoid(logit);
        // d BCE / d logit = p - y when p is inside the clamp band
        double d = (std::clamp(p, kEps, 1.0 - kEps) == p) ? (p - labels[i]) : 0.0;
        for (int k = 0; k < 3; ++k) g[k] += d * phi[k];
        g[3] += d;
    }
    for (double& v : g) v /= static_cast<double>(n);
    return g;
}

std::vector<int> quantize_scores(const std::vector<double>& scores, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ConfigError("quantize threshold must be in (0,1)");
    std::vector<int> keys;
    for (int i = 0; i < static_cast<int>(scores.size()); ++i)
        if (scores[i] >= threshold) keys.push_back(i);
    if (keys.empty() && !scores.empty()) keys.push_back(0);
    return keys;
}

double compression_ratio(const std::vector<int>& keys, int frame_count) {
    return frame_count > 0 ? static_cast<double>(keys.size()) / frame_count : 0.0;
}

ScorerParams train_scorer(const std::vector<const features::FeatureSequence*>& seqs,
                          const std::vector<const std::vector<std::uint8_t>*>& labels,
                          const ScorerTrainHyper& hyper) {
    if (seqs.size() != labels.size() || seqs.empty())
        throw DataError("train_scorer needs matching nonempty sequences and labels");
    ScorerParams theta;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::array<double, 4> g{0.0, 0.0, 0.0, 0.0};
        for (std::size_t v = 0; v < seqs.size(); ++v) {
            auto gv = ske_loss_grad(*seqs[v], theta, *labels[v]);
            for (int k = 0; k < 4; ++k) g[k] += gv[k];
        }
        for (int k = 0; k < 4; ++k) g[k] /= static_cast<double>(seqs.size());
        for (int k = 0; k < 3; ++k) theta.w[k] -= hyper.lr * g[k];
        theta.bias -= hyper.lr * g[3];
    }
    return theta;
}

std::array<int, 4> tile_bbox(int i, const TilingSpec& t) {
    if (t.block_size <= 0 || t.grid_m <= 0) throw ConfigError("invalid tiling spec");
    if (i < 0 || i >= t.grid_m * t.grid_m)
        throw DataError("tile index " + std::to_string(i) + " out of range for m=" +
                        std::to_string(t.grid_m));
    int row = i / t.grid_m;
    int col = i % t.grid_m;
    return {col * t.block_size, row * t.block_size, (col + 1) * t.block_size,
            (row + 1) * t.block_size};
}

std::string scores_to_jsonl(const KeyframeScores& ks) {
    nlohmann::json j;
    j["video_id"] = ks.video_id;
    j["labels"] = ks.labels;
    j["scores"] = ks.scores;
    return j.dump();
}

} // namespace segsim::keyframe
