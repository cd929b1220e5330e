#include "segsim/pipeline.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "segsim/binio.hpp"
#include "segsim/parallel.hpp"
#include "segsim/rng.hpp"

namespace segsim::pipeline {

namespace fs = std::filesystem;

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["threads"] = threads;
    j["n_pairs"] = n_pairs;
    j["n_distractors"] = n_distractors;
    j["n_train_pairs"] = n_train_pairs;
    j["dim"] = dim;
    j["min_len"] = min_len;
    j["max_len"] = max_len;
    j["basis_fps"] = basis_fps;
    j["alpha"] = alpha;
    j["mean_shot_len"] = mean_shot_len;
    j["noise"] = noise;
    j["low_quality_frac"] = low_quality_frac;
    j["low_quality_noise"] = low_quality_noise;
    j["segments_min"] = segments_min;
    j["segments_max"] = segments_max;
    j["spatial_sigma"] = spatial_sigma;
    j["stock_shot_prob"] = stock_shot_prob;
    j["stock_pool_size"] = stock_pool_size;
    j["src_len_min"] = src_len_min;
    j["src_len_max"] = src_len_max;
    j["teacher_sim_threshold"] = teacher_sim_threshold;
    j["teacher_min_gap"] = teacher_min_gap;
    j["teacher_max_gap"] = teacher_max_gap;
    j["quantize_threshold"] = quantize_threshold;
    j["uniform_interval"] = uniform_interval;
    j["index_kind"] = index_kind;
    j["kc"] = kc;
    j["kmeans_iters"] = kmeans_iters;
    j["nprobe"] = nprobe;
    j["topn"] = topn;
    j["score_floor"] = score_floor;
    j["allow_self"] = allow_self;
    j["detector_g"] = detector_g;
    j["giou_weight"] = giou_weight;
    j["train_epochs"] = train_epochs;
    j["ssan_epochs"] = ssan_epochs;
    j["lr"] = lr;
    j["momentum"] = momentum;
    j["weight_decay"] = weight_decay;
    j["batch"] = batch;
    j["scorer_lr_scale"] = scorer_lr_scale;
    j["model_path"] = model_path;
    j["method"] = method;
    j["detect_threshold"] = detect_threshold;
    j["nms_iou"] = nms_iou;
    j["hough_offset_bin"] = hough_offset_bin;
    j["hough_min_votes"] = hough_min_votes;
    j["baseline_min_sim"] = baseline_min_sim;
    j["tn_max_gap"] = tn_max_gap;
    j["dp_gap_penalty"] = dp_gap_penalty;
    return j;
}

namespace {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig c;
    maybe(j, "seed", c.seed);
    maybe(j, "threads", c.threads);
    maybe(j, "n_pairs", c.n_pairs);
    maybe(j, "n_distractors", c.n_distractors);
    maybe(j, "n_train_pairs", c.n_train_pairs);
    maybe(j, "dim", c.dim);
    maybe(j, "min_len", c.min_len);
    maybe(j, "max_len", c.max_len);
    maybe(j, "basis_fps", c.basis_fps);
    maybe(j, "alpha", c.alpha);
    maybe(j, "mean_shot_len", c.mean_shot_len);
    maybe(j, "noise", c.noise);
    maybe(j, "low_quality_frac", c.low_quality_frac);
    maybe(j, "low_quality_noise", c.low_quality_noise);
    maybe(j, "segments_min", c.segments_min);
    maybe(j, "segments_max", c.segments_max);
    maybe(j, "spatial_sigma", c.spatial_sigma);
    maybe(j, "stock_shot_prob", c.stock_shot_prob);
    maybe(j, "stock_pool_size", c.stock_pool_size);
    maybe(j, "src_len_min", c.src_len_min);
    maybe(j, "src_len_max", c.src_len_max);
    maybe(j, "teacher_sim_threshold", c.teacher_sim_threshold);
    maybe(j, "teacher_min_gap", c.teacher_min_gap);
    maybe(j, "teacher_max_gap", c.teacher_max_gap);
    maybe(j, "quantize_threshold", c.quantize_threshold);
    maybe(j, "uniform_interval", c.uniform_interval);
    maybe(j, "index_kind", c.index_kind);
    maybe(j, "kc", c.kc);
    maybe(j, "kmeans_iters", c.kmeans_iters);
    maybe(j, "nprobe", c.nprobe);
    maybe(j, "topn", c.topn);
    maybe(j, "score_floor", c.score_floor);
    maybe(j, "allow_self", c.allow_self);
    maybe(j, "detector_g", c.detector_g);
    maybe(j, "giou_weight", c.giou_weight);
    maybe(j, "train_epochs", c.train_epochs);
    maybe(j, "ssan_epochs", c.ssan_epochs);
    maybe(j, "lr", c.lr);
    maybe(j, "momentum", c.momentum);
    maybe(j, "weight_decay", c.weight_decay);
    maybe(j, "batch", c.batch);
    maybe(j, "scorer_lr_scale", c.scorer_lr_scale);
    maybe(j, "model_path", c.model_path);
    maybe(j, "method", c.method);
    maybe(j, "detect_threshold", c.detect_threshold);
    maybe(j, "nms_iou", c.nms_iou);
    maybe(j, "hough_offset_bin", c.hough_offset_bin);
    maybe(j, "hough_min_votes", c.hough_min_votes);
    maybe(j, "baseline_min_sim", c.baseline_min_sim);
    maybe(j, "tn_max_gap", c.tn_max_gap);
    maybe(j, "dp_gap_penalty", c.dp_gap_penalty);
    return c;
}

void RunConfig::apply_env() {
    nlohmann::json j = to_json();
    nlohmann::json patch = nlohmann::json::object();
    for (auto& [key, value] : j.items()) {
        std::string env_key = "SEGSIM_";
        for (char ch : key) env_key += static_cast<char>(std::toupper(ch));
        const char* v = std::getenv(env_key.c_str());
        if (!v) continue;
        if (value.is_string())
            patch[key] = std::string(v);
        else if (value.is_boolean())
            patch[key] = std::string(v) == "1" || std::string(v) == "true";
        else if (value.is_number_integer() || value.is_number_unsigned())
            patch[key] = std::stoll(v);
        else
            patch[key] = std::stod(v);
    }
    if (!patch.empty()) {
        j.merge_patch(patch);
        *this = from_json(j);
    }
}

std::uint64_t RunConfig::hash() const {
    std::string canon = to_json().dump();
    return binio::fnv1a(canon.data(), canon.size());
}

std::string RunConfig::hash_hex() const {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

keyframe::TeacherParams teacher_params(const RunConfig& c) {
    keyframe::TeacherParams p;
    p.sim_threshold = c.teacher_sim_threshold;
    p.min_gap = c.teacher_min_gap;
    p.max_gap = c.teacher_max_gap;
    return p;
}

synth::DatasetConfig dataset_config(const RunConfig& c, std::uint64_t seed, int n_pairs,
                                    int n_distractors) {
    synth::DatasetConfig dc;
    dc.video.dim = c.dim;
    dc.video.min_len = c.min_len;
    dc.video.max_len = c.max_len;
    dc.video.basis_fps = static_cast<float>(c.basis_fps);
    dc.video.alpha = c.alpha;
    dc.video.mean_shot_len = c.mean_shot_len;
    dc.video.noise = c.noise;
    dc.video.low_quality_frac = c.low_quality_frac;
    dc.video.low_quality_noise = c.low_quality_noise;
    dc.video.shared_shot_prob = c.stock_shot_prob;
    dc.video.shared_pool_size = c.stock_pool_size;
    dc.video.pool_seed = Rng::mix(seed, 0x9001);
    dc.n_pairs = n_pairs;
    dc.n_distractors = n_distractors;
    dc.segments_min = c.segments_min;
    dc.segments_max = c.segments_max;
    dc.spatial_sigma = c.spatial_sigma;
    dc.src_len_min = c.src_len_min;
    dc.src_len_max = c.src_len_max;
    dc.seed = seed;
    return dc;
}

std::map<std::string, std::vector<std::uint8_t>> label_dataset(const synth::Dataset& ds,
                                                               const RunConfig& c) {
    keyframe::TeacherParams tp = teacher_params(c);
    std::map<std::string, const std::vector<std::uint8_t>*> lq;
    for (const auto& [id, flags] : ds.low_quality) lq[id] = &flags;
    std::map<std::string, std::vector<std::uint8_t>> out;
    auto label_store = [&](const features::FeatureStore& store) {
        for (const auto& [id, seq] : store.sequences) {
            std::vector<std::uint8_t> labels = keyframe::teacher_select(seq, tp);
            if (auto it = lq.find(id); it != lq.end())
                keyframe::apply_quality_mask(labels, *it->second);
            out[id] = std::move(labels);
        }
    };
    label_store(ds.queries);
    label_store(ds.gallery);
    return out;
}

std::vector<ssan::PairSample> build_pair_samples(
    const synth::Dataset& ds, const std::map<std::string, std::vector<std::uint8_t>>& labels,
    const RunConfig& c) {
    std::vector<ssan::PairSample> out(ds.entries.size());
    parallel_for(static_cast<int>(ds.entries.size()), c.threads, [&](int i) {
        const synth::DatasetEntry& e = ds.entries[i];
        const features::FeatureSequence& q = ds.queries.at(e.query_id);
        const features::FeatureSequence& r = ds.gallery.at(e.ref_id);
        simmap::SimilarityMap s = simmap::dense_map(q, r);
        out[i] = ssan::prepare_pair(q, r, s, labels.at(e.query_id), labels.at(e.ref_id),
                                    e.segments, c.uniform_interval, c.detector_g);
    });
    return out;
}

std::vector<spd::TrainSample> flatten_tiles(const std::vector<ssan::PairSample>& pairs,
                                            double mask_fraction, int mask_interval,
                                            std::uint64_t seed) {
    std::vector<spd::TrainSample> out;
    Rng rng(seed);
    for (const ssan::PairSample& p : pairs) {
        for (std::size_t t = 0; t < p.tiles.size(); ++t) {
            spd::TrainSample s;
            const simmap::Tile& tile = p.tiles[t];
            s.tile = spd::Tensor::zeros(1, tile.size, tile.size);
            s.tile.v = tile.data;
            s.gt = p.tile_gt[t];
            if (mask_fraction > 0.0 && rng.uniform() < mask_fraction) {
                // Keyframe-style comb dropout: keep one random phase per axis
                // out of every mask_interval rows/cols, zero the rest.
                int phase_r = rng.uniform_int(0, mask_interval - 1);
                int phase_c = rng.uniform_int(0, mask_interval - 1);
                for (int y = 0; y < tile.size; ++y) {
                    bool keep_row = (y % mask_interval) == phase_r ||
                                    rng.uniform() < 0.15; // content keyframes
                    double* row = s.tile.v.data() + static_cast<std::size_t>(y) * tile.size;
                    if (!keep_row) {
                        std::fill(row, row + tile.size, 0.0);
                        continue;
                    }
                    for (int x = 0; x < tile.size; ++x)
                        if ((x % mask_interval) != phase_c && rng.uniform() >= 0.15)
                            row[x] = 0.0;
                }
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<int> select_keyframes(const std::vector<double>& scores, double threshold,
                                  int interval) {
    std::vector<int> keys = keyframe::quantize_scores(scores, threshold);
    std::vector<std::uint8_t> lab(scores.size(), 0);
    for (int k : keys) lab[k] = 1;
    lab = keyframe::sparse_uniform_interpolate(std::move(lab), interval);
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(lab.size()); ++i)
        if (lab[i]) out.push_back(i);
    return out;
}

spd::PairDetections detect_with_keyframes(const spd::DetectorParams& det,
                                          const ssan::PairSample& sample,
                                          const std::vector<int>& keys_q,
                                          const std::vector<int>& keys_r,
                                          const spd::DetectOptions& opt) {
    ssan::SsanParams p;
    p.detector = det;
    // Binary effective scores via a sample whose umask is the keyframe set.
    ssan::PairSample masked = sample;
    masked.umask_q.assign(sample.rows, 0);
    masked.umask_r.assign(sample.cols, 0);
    for (int k : keys_q) masked.umask_q[k] = 1;
    for (int k : keys_r) masked.umask_r[k] = 1;
    // Force sigmoid scores to 0 so eff == umask exactly.
    p.scorer.bias = -1e9;
    return ssan::ssan_forward(p, masked, opt);
}

nlohmann::json strip_timings(nlohmann::json j) {
    j.erase("timings");
    return j;
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "' for digest");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[65536];
    while (is) {
        is.read(buf, sizeof(buf));
        h = binio::fnv1a(buf, static_cast<std::size_t>(is.gcount()), h);
    }
    return h;
}

std::string matches_to_jsonl(const eval::SegmentSet& preds, const std::string& method) {
    std::ostringstream os;
    for (const auto& [key, segs] : preds) {
        for (const auto& s : segs) {
            nlohmann::json j;
            j["query_id"] = key.first;
            j["ref_id"] = key.second;
            j["q_start"] = s.q_start;
            j["q_end"] = s.q_end;
            j["r_start"] = s.r_start;
            j["r_end"] = s.r_end;
            j["score"] = s.score;
            j["method"] = method;
            os << j.dump() << "\n";
        }
    }
    return os.str();
}

eval::SegmentSet matches_from_jsonl(const std::string& text) {
    eval::SegmentSet out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        align::SegmentMatch s;
        s.q_start = j.at("q_start").get<double>();
        s.q_end = j.at("q_end").get<double>();
        s.r_start = j.at("r_start").get<double>();
        s.r_end = j.at("r_end").get<double>();
        s.score = j.value("score", 1.0);
        out[{j.at("query_id").get<std::string>(), j.at("ref_id").get<std::string>()}].push_back(
            s);
    }
    return out;
}

namespace {

class Timer {
public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

align::HoughParams hough_params(const RunConfig& c) {
    return {c.hough_offset_bin, c.hough_min_votes, c.baseline_min_sim};
}
align::TNParams tn_params(const RunConfig& c) { return {c.tn_max_gap, c.baseline_min_sim}; }
align::DPParams dp_params(const RunConfig& c) {
    return {c.baseline_min_sim, c.dp_gap_penalty, 0};
}

} // namespace

int run_pipeline(const RunConfig& c, const std::string& out_dir) {
    fs::create_directories(out_dir);
    StageTimings timings;
    nlohmann::json stages;

    // --- synth ---------------------------------------------------------
    Timer t_synth;
    synth::DatasetConfig dc = dataset_config(c, c.seed, c.n_pairs, c.n_distractors);
    synth::Dataset ds = synth::make_dataset(dc);
    synth::DatasetFiles files = synth::write_dataset(ds, dc, out_dir);
    stages["synth"] = {{"queries", ds.queries.sequences.size()},
                       {"gallery", ds.gallery.sequences.size()},
                       {"total_frames", ds.queries.total_frames() + ds.gallery.total_frames()}};
    timings.add("synth", t_synth.seconds());

    // --- teacher labels + scorer ----------------------------------------
    Timer t_labels;
    auto labels = label_dataset(ds, c);
    std::vector<const features::FeatureSequence*> seqs;
    std::vector<const std::vector<std::uint8_t>*> seq_labels;
    for (const auto& [id, seq] : ds.gallery.sequences) {
        seqs.push_back(&seq);
        seq_labels.push_back(&labels.at(id));
    }
    keyframe::ScorerParams scorer = keyframe::train_scorer(seqs, seq_labels, {});
    {
        std::ofstream os(fs::path(out_dir) / "labels.jsonl", std::ios::binary);
        for (const auto& store : {&ds.queries, &ds.gallery}) {
            for (const auto& [id, seq] : store->sequences) {
                keyframe::KeyframeScores ks = keyframe::score_frames(seq, scorer);
                ks.labels = labels.at(id);
                os << keyframe::scores_to_jsonl(ks) << "\n";
            }
        }
    }
    timings.add("teacher_label", t_labels.seconds());

    // --- model -----------------------------------------------------------
    Timer t_train;
    spd::DetectorConfig dcfg;
    dcfg.input_size = c.detector_g;
    dcfg.giou_weight = c.giou_weight;
    spd::DetectorParams detector;
    keyframe::ScorerParams active_scorer = scorer;
    bool needs_model = c.method == "spd" || c.method == "ssan";
    if (needs_model) {
        if (!c.model_path.empty()) {
            if (c.method == "ssan") {
                ssan::SsanParams m = ssan::load_sgsm(c.model_path);
                detector = m.detector;
                active_scorer = m.scorer;
            } else {
                detector = spd::load_sgdm(c.model_path);
            }
        } else {
            synth::DatasetConfig tdc =
                dataset_config(c, Rng::mix(c.seed, 0x7a1), c.n_train_pairs, 0);
            synth::Dataset train_ds = synth::make_dataset(tdc);
            auto train_labels = label_dataset(train_ds, c);
            std::vector<ssan::PairSample> train_pairs =
                build_pair_samples(train_ds, train_labels, c);
            spd::TrainHyper hyper;
            hyper.lr = c.lr;
            hyper.momentum = c.momentum;
            hyper.weight_decay = c.weight_decay;
            hyper.epochs = c.train_epochs;
            hyper.batch = c.batch;
            hyper.seed = Rng::mix(c.seed, 0x7a2);
            std::vector<spd::TrainSample> tiles =
                flatten_tiles(train_pairs, 0.3, c.uniform_interval, Rng::mix(c.seed, 0x7a3));
            detector = spd::train_spd(tiles, dcfg, hyper);
            if (c.method == "ssan") {
                ssan::SsanParams init{active_scorer, detector};
                ssan::SsanTrainHyper jh;
                jh.sgd = hyper;
                jh.sgd.epochs = c.ssan_epochs;
                jh.sgd.seed = Rng::mix(c.seed, 0x7a4);
                jh.scorer_lr_scale = c.scorer_lr_scale;
                jh.quantize_threshold = c.quantize_threshold;
                ssan::SsanParams joint = ssan::train_ssan(train_pairs, init, jh);
                detector = joint.detector;
                active_scorer = joint.scorer;
            }
        }
        if (c.method == "ssan") {
            ssan::SsanParams m{active_scorer, detector};
            ssan::save_sgsm(m, (fs::path(out_dir) / "model.sgsm").string());
        } else {
            spd::save_sgdm(detector, (fs::path(out_dir) / "model.sgdm").string());
        }
    }
    timings.add("train", t_train.seconds());

    // --- keyframes + index ------------------------------------------------
    Timer t_index;
    index::KeyframeSets gallery_keys;
    long long selected = 0, total = 0;
    for (const auto& [id, seq] : ds.gallery.sequences) {
        keyframe::KeyframeScores ks = keyframe::score_frames(seq, active_scorer);
        std::vector<int> keys =
            select_keyframes(ks.scores, c.quantize_threshold, c.uniform_interval);
        selected += static_cast<long long>(keys.size());
        total += seq.frame_count();
        gallery_keys[id] = std::move(keys);
    }
    double ratio = total > 0 ? static_cast<double>(selected) / total : 0.0;
    index::FlatIndex flat;
    index::IVFIndex ivf;
    bool use_ivf = c.index_kind == "ivf";
    if (use_ivf) {
        int kc = std::min<int>(c.kc, static_cast<int>(selected));
        ivf = index::build_ivf(ds.gallery, gallery_keys, std::max(1, kc), c.kmeans_iters,
                               Rng::mix(c.seed, 0x1d9));
        index::save_ivf(ivf, (fs::path(out_dir) / "index.sgix").string());
    } else {
        flat = index::build_flat(ds.gallery, gallery_keys);
        index::save_flat(flat, (fs::path(out_dir) / "index.sgix").string());
    }
    stages["index"] = {{"rows", use_ivf ? ivf.base.rows() : flat.rows()},
                       {"kind", c.index_kind},
                       {"compression_ratio", ratio}};
    timings.add("index", t_index.seconds());

    // --- query + align -----------------------------------------------------
    Timer t_query;
    std::vector<std::string> query_ids;
    for (const auto& [id, seq] : ds.queries.sequences) query_ids.push_back(id);

    struct QueryOut {
        eval::SegmentSet matches;
        std::map<std::string, std::vector<std::pair<std::string, double>>> ranking;
    };
    std::vector<QueryOut> outs(query_ids.size());
    parallel_for(static_cast<int>(query_ids.size()), c.threads, [&](int qi) {
        const std::string& qid = query_ids[qi];
        const features::FeatureSequence& qseq = ds.queries.at(qid);
        keyframe::KeyframeScores ks = keyframe::score_frames(qseq, active_scorer);
        index::QueryPlan plan;
        plan.query_video_id = qid;
        plan.keyframe_indices =
            select_keyframes(ks.scores, c.quantize_threshold, c.uniform_interval);
        plan.topn = c.topn;
        index::GroupOptions gopt;
        gopt.allow_self = c.allow_self;
        gopt.score_floor = static_cast<float>(c.score_floor);
        std::vector<index::CandidateGroup> groups =
            use_ivf ? index::plan_and_group(plan, ds.queries, ivf, c.nprobe, gopt)
                    : index::plan_and_group(plan, ds.queries, flat, gopt);
        // plan_and_group resolves the query video in the query store; groups
        // reference gallery videos.
        for (const index::CandidateGroup& g : groups) {
            const features::FeatureSequence& rseq = ds.gallery.at(g.ref_video_id);
            simmap::SimilarityMap sparse = index::sparse_map_from_group(g, plan, qseq, rseq);
            std::vector<align::SegmentMatch> matches;
            double video_score = 0.0;
            if (c.method == "spd" || c.method == "ssan") {
                spd::DetectOptions opt{c.detect_threshold, c.nms_iou, true};
                spd::PairDetections det = spd::detect_pair(detector, sparse, opt);
                matches = det.matches;
                video_score = det.video_similarity;
            } else {
                if (c.method == "hough")
                    matches = align::hough_align(sparse, hough_params(c));
                else if (c.method == "tn")
                    matches = align::tn_align(sparse, tn_params(c));
                else if (c.method == "dp")
                    matches = align::dp_align(sparse, dp_params(c));
                else
                    throw ConfigError("unknown method '" + c.method + "'");
                for (const auto& m : matches)
                    video_score = std::max(video_score, m.score / std::max(1, sparse.rows));
            }
            if (!matches.empty()) {
                outs[qi].matches[{qid, g.ref_video_id}] = matches;
                outs[qi].ranking[qid].emplace_back(g.ref_video_id, video_score);
            }
        }
    });
    eval::SegmentSet all_matches;
    std::map<std::string, std::vector<std::pair<std::string, double>>> rankings;
    for (auto& o : outs) {
        for (auto& [k, v] : o.matches) all_matches[k] = std::move(v);
        for (auto& [k, v] : o.ranking) rankings[k] = std::move(v);
    }
    {
        std::ofstream os(fs::path(out_dir) / "matches.jsonl", std::ios::binary);
        os << matches_to_jsonl(all_matches, c.method);
    }
    timings.add("query_align", t_query.seconds());

    // --- eval ---------------------------------------------------------------
    Timer t_eval;
    eval::SegmentSet gts;
    std::map<std::string, std::vector<std::string>> relevant;
    for (const auto& e : ds.entries) {
        gts[{e.query_id, e.ref_id}] = e.segments;
        relevant[e.query_id].push_back(e.ref_id);
    }
    eval::SweepResult sweep = eval::sweep_f1(all_matches, gts);
    eval::EvalReport report = sweep.best;
    report.pr_points = sweep.curve;
    report.mAP = eval::map_eval(rankings, relevant, &report.skipped_queries);
    report.compression_ratio = ratio;
    timings.add("eval", t_eval.seconds());

    // --- report + manifest ---------------------------------------------------
    nlohmann::json rj = nlohmann::json::parse(eval::report_to_json(report));
    nlohmann::json top;
    top["config"] = c.to_json();
    top["config_hash"] = c.hash_hex();
    top["stages"] = stages;
    top["eval"] = rj;
    nlohmann::json tj = nlohmann::json::object();
    for (const auto& [k, v] : timings.seconds) tj[k] = v;
    top["timings"] = tj;
    std::string report_path = (fs::path(out_dir) / "report.json").string();
    {
        std::ofstream os(report_path, std::ios::binary | std::ios::trunc);
        os << top.dump(2) << "\n";
    }

    nlohmann::json manifest;
    manifest["config_hash"] = c.hash_hex();
    nlohmann::json digests = nlohmann::json::object();
    for (const char* name : {"manifest.json", "queries.sgaf", "gallery.sgaf", "annotations.csv",
                             "labels.jsonl", "index.sgix", "matches.jsonl", "report.json"}) {
        fs::path p = fs::path(out_dir) / name;
        if (fs::exists(p)) {
            char buf[24];
            std::snprintf(buf, sizeof(buf), "%016llx",
                          static_cast<unsigned long long>(file_digest(p.string())));
            digests[name] = buf;
        }
    }
    for (const char* name : {"model.sgdm", "model.sgsm"}) {
        fs::path p = fs::path(out_dir) / name;
        if (fs::exists(p)) {
            char buf[24];
            std::snprintf(buf, sizeof(buf), "%016llx",
                          static_cast<unsigned long long>(file_digest(p.string())));
            digests[name] = buf;
        }
    }
    manifest["files"] = digests;
    {
        std::ofstream os(fs::path(out_dir) / "run_manifest.json",
                         std::ios::binary | std::ios::trunc);
        os << manifest.dump(2) << "\n";
    }
    return 0;
}

bool verify_run_dir(const std::string& dir, std::string* message) {
    fs::path manifest_path = fs::path(dir) / "run_manifest.json";
    std::ifstream is(manifest_path);
    if (!is) {
        if (message) *message = "missing run_manifest.json";
        return false;
    }
    nlohmann::json manifest = nlohmann::json::parse(is);
    for (auto& [name, digest] : manifest.at("files").items()) {
        fs::path p = fs::path(dir) / name;
        if (!fs::exists(p)) {
            if (message) *message = "missing file " + name;
            return false;
        }
        char buf[24];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(file_digest(p.string())));
        if (digest.get<std::string>() != buf) {
            if (message) *message = "digest mismatch for " + name;
            return false;
        }
    }
    // Cross-check the config hash recorded in the report.
    std::ifstream rs(fs::path(dir) / "report.json");
    if (rs) {
        nlohmann::json report = nlohmann::json::parse(rs);
        if (report.value("config_hash", "") != manifest.value("config_hash", "!")) {
            if (message) *message = "config hash mismatch between report and manifest";
            return false;
        }
    }
    if (message) *message = "ok";
    return true;
}

} // namespace segsim::pipeline
