// segsim command line: synthetic data generation, keyframe labeling, detector
// training, index build/query, temporal alignment, evaluation and the full
// pipeline. Exit codes: 0 ok, 2 config error, 3 data error, 4 training
// divergence, 5 verification failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "segsim/pipeline.hpp"

namespace fs = std::filesystem;
using namespace segsim;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

struct LabelRecord {
    std::vector<std::uint8_t> labels;
    std::vector<double> scores;
};

std::map<std::string, LabelRecord> read_labels_jsonl(const std::string& path) {
    std::map<std::string, LabelRecord> out;
    std::istringstream is(read_file(path));
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        LabelRecord rec;
        if (j.contains("labels")) rec.labels = j["labels"].get<std::vector<std::uint8_t>>();
        if (j.contains("scores")) rec.scores = j["scores"].get<std::vector<double>>();
        out[j.at("video_id").get<std::string>()] = std::move(rec);
    }
    return out;
}

// Resolves a video id in one or two feature stores.
const features::FeatureSequence& find_video(const features::FeatureStore& a,
                                            const features::FeatureStore* b,
                                            const std::string& id) {
    if (a.contains(id)) return a.at(id);
    if (b && b->contains(id)) return b->at(id);
    throw DataError("video '" + id + "' not found in the given feature files");
}

void emit_matches(const std::vector<align::SegmentMatch>& matches, const std::string& q,
                  const std::string& r) {
    for (const auto& m : matches) {
        nlohmann::json j;
        j["query_id"] = q;
        j["ref_id"] = r;
        j["q_start"] = m.q_start;
        j["q_end"] = m.q_end;
        j["r_start"] = m.r_start;
        j["r_end"] = m.r_end;
        j["score"] = m.score;
        std::cout << j.dump() << "\n";
    }
}

pipeline::RunConfig load_config(const std::string& config_path) {
    pipeline::RunConfig c;
    if (!config_path.empty()) {
        nlohmann::json j = nlohmann::json::parse(read_file(config_path));
        c = pipeline::RunConfig::from_json(j);
    }
    c.apply_env();
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"segment-level content-based video retrieval engine"};
    app.require_subcommand(1);

    // --- synth ---------------------------------------------------------
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string synth_out = "dataset";
    std::uint64_t synth_seed = 7;
    int synth_pairs = 20, synth_distractors = 0, synth_segmin = 1, synth_segmax = 1;
    synth_cmd->add_option("--out", synth_out, "output directory");
    synth_cmd->add_option("--pairs", synth_pairs, "number of query/ref pairs");
    synth_cmd->add_option("--distractors", synth_distractors, "extra gallery videos");
    synth_cmd->add_option("--segments-min", synth_segmin);
    synth_cmd->add_option("--segments-max", synth_segmax);
    synth_cmd->add_option("--seed", synth_seed);

    // --- teacher-label ---------------------------------------------------
    auto* label_cmd = app.add_subcommand("teacher-label", "teacher keyframe labels + scores");
    std::string label_features, label_out = "labels.jsonl", label_manifest, label_scorer_out;
    double label_sim = 0.85;
    int label_min_gap = 4, label_max_gap = 64;
    label_cmd->add_option("--features", label_features)->required();
    label_cmd->add_option("--out", label_out);
    label_cmd->add_option("--manifest", label_manifest, "dataset manifest for quality flags");
    label_cmd->add_option("--train-scorer", label_scorer_out, "also fit the scorer, write JSON");
    label_cmd->add_option("--sim-threshold", label_sim);
    label_cmd->add_option("--min-gap", label_min_gap);
    label_cmd->add_option("--max-gap", label_max_gap);

    // --- train-spd ----------------------------------------------------------
    auto* tspd_cmd = app.add_subcommand("train-spd", "train the pattern detector");
    std::string tspd_data, tspd_out = "model.sgdm", tspd_config;
    int tspd_epochs = 6, tspd_g = 128;
    std::uint64_t tspd_seed = 1;
    tspd_cmd->add_option("--data", tspd_data, "dataset directory (manifest.json)")->required();
    tspd_cmd->add_option("--out", tspd_out);
    tspd_cmd->add_option("--epochs", tspd_epochs);
    tspd_cmd->add_option("--g", tspd_g, "detector input size");
    tspd_cmd->add_option("--seed", tspd_seed);
    tspd_cmd->add_option("--config", tspd_config);

    // --- train-ssan ------------------------------------------------------------
    auto* tssan_cmd = app.add_subcommand("train-ssan", "joint keyframe + detector training");
    std::string tssan_data, tssan_init_spd, tssan_init_ske, tssan_out = "model.sgsm",
                            tssan_config;
    int tssan_epochs = 4;
    std::uint64_t tssan_seed = 1;
    tssan_cmd->add_option("--data", tssan_data)->required();
    tssan_cmd->add_option("--init-spd", tssan_init_spd, "pretrained SGDM model")->required();
    tssan_cmd->add_option("--init-ske", tssan_init_ske, "pretrained scorer JSON")->required();
    tssan_cmd->add_option("--out", tssan_out);
    tssan_cmd->add_option("--epochs", tssan_epochs);
    tssan_cmd->add_option("--seed", tssan_seed);
    tssan_cmd->add_option("--config", tssan_config);

    // --- build-index ------------------------------------------------------------
    auto* bidx_cmd = app.add_subcommand("build-index", "index keyframe features");
    std::string bidx_features, bidx_keys, bidx_kind = "flat", bidx_out = "index.sgix";
    int bidx_kc = 8, bidx_iters = 10;
    std::uint64_t bidx_seed = 1;
    bidx_cmd->add_option("--features", bidx_features)->required();
    bidx_cmd->add_option("--keyframes", bidx_keys, "labels.jsonl with 0/1 keyframe labels")
        ->required();
    bidx_cmd->add_option("--kind", bidx_kind)->check(CLI::IsMember({"flat", "ivf"}));
    bidx_cmd->add_option("--kc", bidx_kc);
    bidx_cmd->add_option("--iters", bidx_iters);
    bidx_cmd->add_option("--out", bidx_out);
    bidx_cmd->add_option("--seed", bidx_seed);

    // --- query ---------------------------------------------------------------
    auto* query_cmd = app.add_subcommand("query", "top-N search for query keyframes");
    std::string query_index, query_features, query_keys;
    int query_topn = 50, query_nprobe = 4;
    double query_floor = 0.5;
    query_cmd->add_option("--index", query_index)->required();
    query_cmd->add_option("--features", query_features)->required();
    query_cmd->add_option("--keyframes", query_keys, "labels.jsonl for the query videos");
    query_cmd->add_option("--topn", query_topn);
    query_cmd->add_option("--nprobe", query_nprobe);
    query_cmd->add_option("--floor", query_floor);

    // --- align / detect --------------------------------------------------------
    auto* align_cmd = app.add_subcommand("align", "align one video pair");
    std::string align_method = "dp", align_features, align_features2, align_model, align_q,
                align_r;
    double align_min_sim = 0.7;
    align_cmd->add_option("--method", align_method)
        ->check(CLI::IsMember({"hough", "tn", "dp", "spd"}));
    align_cmd->add_option("--features", align_features)->required();
    align_cmd->add_option("--features2", align_features2, "second feature file, if split");
    align_cmd->add_option("--model", align_model, "SGDM model (spd method)");
    align_cmd->add_option("--pair", align_q, "query video id")->required();
    align_cmd->add_option("--ref", align_r, "reference video id")->required();
    align_cmd->add_option("--min-sim", align_min_sim);

    auto* detect_cmd = app.add_subcommand("detect", "SPD detection on one pair");
    std::string det_model, det_features, det_features2, det_q, det_r;
    double det_threshold = 0.1;
    detect_cmd->add_option("--model", det_model)->required();
    detect_cmd->add_option("--features", det_features)->required();
    detect_cmd->add_option("--features2", det_features2);
    detect_cmd->add_option("--pair", det_q)->required();
    detect_cmd->add_option("--ref", det_r)->required();
    detect_cmd->add_option("--threshold", det_threshold);

    // --- eval ---------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "segment F1 / mAP evaluation");
    std::string eval_preds, eval_gts, eval_out = "report.json", eval_protocol = "seconds";
    eval_cmd->add_option("--preds", eval_preds, "matches.jsonl")->required();
    eval_cmd->add_option("--gts", eval_gts, "annotations.csv")->required();
    eval_cmd->add_option("--protocol", eval_protocol)->check(CLI::IsMember({"seconds"}));
    eval_cmd->add_option("--out", eval_out);

    // --- dump-map ------------------------------------------------------------
    auto* dump_cmd = app.add_subcommand("dump-map", "write a similarity map image");
    std::string dump_features, dump_features2, dump_q, dump_r, dump_out = "map.ppm", dump_gts,
                dump_preds;
    dump_cmd->add_option("--features", dump_features)->required();
    dump_cmd->add_option("--features2", dump_features2);
    dump_cmd->add_option("--pair", dump_q)->required();
    dump_cmd->add_option("--ref", dump_r)->required();
    dump_cmd->add_option("--out", dump_out);
    dump_cmd->add_option("--gts", dump_gts, "annotations.csv");
    dump_cmd->add_option("--preds", dump_preds, "matches.jsonl");

    // --- run / verify -----------------------------------------------------------
    auto* run_cmd = app.add_subcommand("run", "full pipeline");
    std::string run_config, run_out = "run";
    pipeline::RunConfig flag_cfg;
    run_cmd->add_option("--config", run_config, "JSON config file");
    run_cmd->add_option("--out", run_out);
    auto* f_seed = run_cmd->add_option("--seed", flag_cfg.seed);
    auto* f_method = run_cmd->add_option("--method", flag_cfg.method)
                         ->check(CLI::IsMember({"hough", "tn", "dp", "spd", "ssan"}));
    auto* f_pairs = run_cmd->add_option("--pairs", flag_cfg.n_pairs);
    auto* f_distractors = run_cmd->add_option("--distractors", flag_cfg.n_distractors);
    auto* f_train_pairs = run_cmd->add_option("--train-pairs", flag_cfg.n_train_pairs);
    auto* f_epochs = run_cmd->add_option("--epochs", flag_cfg.train_epochs);
    auto* f_threads = run_cmd->add_option("--threads", flag_cfg.threads);
    auto* f_kind = run_cmd->add_option("--index-kind", flag_cfg.index_kind)
                       ->check(CLI::IsMember({"flat", "ivf"}));
    auto* f_topn = run_cmd->add_option("--topn", flag_cfg.topn);
    auto* f_model = run_cmd->add_option("--model", flag_cfg.model_path);

    auto* verify_cmd = app.add_subcommand("verify", "check a run directory hash chain");
    std::string verify_dir;
    verify_cmd->add_option("--dir", verify_dir)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth_cmd->parsed()) {
            pipeline::RunConfig c = load_config("");
            synth::DatasetConfig dc = pipeline::dataset_config(c, synth_seed, synth_pairs,
                                                               synth_distractors);
            dc.segments_min = synth_segmin;
            dc.segments_max = synth_segmax;
            synth::Dataset ds = synth::make_dataset(dc);
            synth::DatasetFiles files = synth::write_dataset(ds, dc, synth_out);
            std::cout << "wrote " << files.manifest_path << " (" << ds.entries.size()
                      << " pairs, " << ds.gallery.sequences.size() << " gallery videos)\n";
        } else if (label_cmd->parsed()) {
            features::FeatureStore store = features::ingest(label_features);
            keyframe::TeacherParams tp{label_sim, label_min_gap, label_max_gap};
            std::map<std::string, std::vector<std::uint8_t>> quality;
            if (!label_manifest.empty()) {
                nlohmann::json mj = nlohmann::json::parse(read_file(label_manifest));
                nlohmann::json lq_block = mj.value("low_quality", nlohmann::json::object());
                for (auto& [id, flags] : lq_block.items())
                    quality[id] = flags.get<std::vector<std::uint8_t>>();
            }
            std::vector<const features::FeatureSequence*> seqs;
            std::vector<std::vector<std::uint8_t>> all_labels;
            for (const auto& [id, seq] : store.sequences) {
                std::vector<std::uint8_t> labels = keyframe::teacher_select(seq, tp);
                if (auto it = quality.find(id); it != quality.end())
                    keyframe::apply_quality_mask(labels, it->second);
                seqs.push_back(&seq);
                all_labels.push_back(std::move(labels));
            }
            keyframe::ScorerParams scorer;
            bool have_scorer = !label_scorer_out.empty();
            if (have_scorer) {
                std::vector<const std::vector<std::uint8_t>*> lp;
                for (const auto& l : all_labels) lp.push_back(&l);
                scorer = keyframe::train_scorer(seqs, lp, {});
                nlohmann::json sj;
                sj["w"] = scorer.w;
                sj["bias"] = scorer.bias;
                std::ofstream os(label_scorer_out, std::ios::binary | std::ios::trunc);
                os << sj.dump(2) << "\n";
            }
            std::ofstream os(label_out, std::ios::binary | std::ios::trunc);
            std::size_t i = 0;
            for (const auto& [id, seq] : store.sequences) {
                keyframe::KeyframeScores ks;
                if (have_scorer)
                    ks = keyframe::score_frames(seq, scorer);
                else
                    ks.video_id = id;
                ks.labels = all_labels[i++];
                os << keyframe::scores_to_jsonl(ks) << "\n";
            }
            std::cout << "wrote " << label_out << "\n";
        } else if (tspd_cmd->parsed()) {
            pipeline::RunConfig c = load_config(tspd_config);
            c.detector_g = tspd_g;
            nlohmann::json mj =
                nlohmann::json::parse(read_file((fs::path(tspd_data) / "manifest.json").string()));
            synth::Dataset ds;
            ds.queries = features::ingest((fs::path(tspd_data) / "queries.sgaf").string());
            ds.gallery = features::ingest((fs::path(tspd_data) / "gallery.sgaf").string());
            for (const auto& p : mj.at("pairs")) {
                synth::DatasetEntry e;
                e.query_id = p.at("query_id").get<std::string>();
                e.ref_id = p.at("ref_id").get<std::string>();
                for (const auto& s : p.at("segments"))
                    e.segments.push_back({s[0].get<double>(), s[1].get<double>(),
                                          s[2].get<double>(), s[3].get<double>(), 1.0});
                ds.entries.push_back(std::move(e));
            }
            nlohmann::json lq_block = mj.value("low_quality", nlohmann::json::object());
            for (auto& [id, flags] : lq_block.items())
                ds.low_quality.emplace_back(id, flags.get<std::vector<std::uint8_t>>());
            auto labels = pipeline::label_dataset(ds, c);
            auto pairs = pipeline::build_pair_samples(ds, labels, c);
            spd::TrainHyper hyper;
            hyper.lr = c.lr;
            hyper.momentum = c.momentum;
            hyper.weight_decay = c.weight_decay;
            hyper.epochs = tspd_epochs;
            hyper.batch = c.batch;
            hyper.seed = tspd_seed;
            spd::DetectorConfig dcfg;
            dcfg.input_size = tspd_g;
            dcfg.giou_weight = c.giou_weight;
            auto tiles = pipeline::flatten_tiles(pairs, 0.3, c.uniform_interval,
                                                 Rng::mix(tspd_seed, 0x7a3));
            std::vector<spd::TrainLogEntry> log;
            spd::DetectorParams model = spd::train_spd(tiles, dcfg, hyper, &log);
            spd::save_sgdm(model, tspd_out);
            if (!log.empty())
                std::cout << "final l_spd " << log.back().l_spd << " after " << log.size()
                          << " steps\n";
            std::cout << "wrote " << tspd_out << "\n";
        } else if (tssan_cmd->parsed()) {
            pipeline::RunConfig c = load_config(tssan_config);
            nlohmann::json mj = nlohmann::json::parse(
                read_file((fs::path(tssan_data) / "manifest.json").string()));
            synth::Dataset ds;
            ds.queries = features::ingest((fs::path(tssan_data) / "queries.sgaf").string());
            ds.gallery = features::ingest((fs::path(tssan_data) / "gallery.sgaf").string());
            for (const auto& p : mj.at("pairs")) {
                synth::DatasetEntry e;
                e.query_id = p.at("query_id").get<std::string>();
                e.ref_id = p.at("ref_id").get<std::string>();
                for (const auto& s : p.at("segments"))
                    e.segments.push_back({s[0].get<double>(), s[1].get<double>(),
                                          s[2].get<double>(), s[3].get<double>(), 1.0});
                ds.entries.push_back(std::move(e));
            }
            nlohmann::json lq_block = mj.value("low_quality", nlohmann::json::object());
            for (auto& [id, flags] : lq_block.items())
                ds.low_quality.emplace_back(id, flags.get<std::vector<std::uint8_t>>());
            auto labels = pipeline::label_dataset(ds, c);
            auto pairs = pipeline::build_pair_samples(ds, labels, c);
            ssan::SsanParams init;
            init.detector = spd::load_sgdm(tssan_init_spd);
            nlohmann::json sj = nlohmann::json::parse(read_file(tssan_init_ske));
            init.scorer.w = sj.at("w").get<std::array<double, 3>>();
            init.scorer.bias = sj.at("bias").get<double>();
            ssan::SsanTrainHyper hyper;
            hyper.sgd.lr = c.lr;
            hyper.sgd.momentum = c.momentum;
            hyper.sgd.weight_decay = c.weight_decay;
            hyper.sgd.epochs = tssan_epochs;
            hyper.sgd.batch = c.batch;
            hyper.sgd.seed = tssan_seed;
            hyper.scorer_lr_scale = c.scorer_lr_scale;
            hyper.quantize_threshold = c.quantize_threshold;
            std::vector<ssan::SsanTrainLog> log;
            ssan::SsanParams model = ssan::train_ssan(pairs, init, hyper, &log);
            ssan::save_sgsm(model, tssan_out);
            for (const auto& l : log)
                std::cout << "epoch " << l.epoch << " l_ske " << l.l_ske << " l_spd " << l.l_spd
                          << " ratio " << l.compression_ratio << "\n";
            std::cout << "wrote " << tssan_out << "\n";
        } else if (bidx_cmd->parsed()) {
            features::FeatureStore store = features::ingest(bidx_features);
            auto labels = read_labels_jsonl(bidx_keys);
            index::KeyframeSets keys;
            for (const auto& [id, rec] : labels) {
                if (!store.contains(id)) continue;
                std::vector<int> k;
                for (int i = 0; i < static_cast<int>(rec.labels.size()); ++i)
                    if (rec.labels[i]) k.push_back(i);
                if (!k.empty()) keys[id] = std::move(k);
            }
            if (keys.empty()) throw DataError("no keyframes for any indexed video");
            if (bidx_kind == "flat") {
                index::FlatIndex idx = index::build_flat(store, keys);
                index::save_flat(idx, bidx_out);
                std::cout << "wrote " << bidx_out << " (" << idx.rows() << " rows)\n";
            } else {
                index::IVFIndex idx = index::build_ivf(store, keys, bidx_kc, bidx_iters,
                                                       bidx_seed);
                index::save_ivf(idx, bidx_out);
                std::cout << "wrote " << bidx_out << " (" << idx.base.rows() << " rows, "
                          << idx.k_c << " cells)\n";
            }
        } else if (query_cmd->parsed()) {
            index::LoadedIndex idx = index::load_index(query_index);
            features::FeatureStore store = features::ingest(query_features);
            std::map<std::string, LabelRecord> keys;
            if (!query_keys.empty()) keys = read_labels_jsonl(query_keys);
            for (const auto& [id, seq] : store.sequences) {
                index::QueryPlan plan;
                plan.query_video_id = id;
                plan.topn = query_topn;
                if (auto it = keys.find(id); it != keys.end()) {
                    for (int i = 0; i < static_cast<int>(it->second.labels.size()); ++i)
                        if (it->second.labels[i]) plan.keyframe_indices.push_back(i);
                } else {
                    for (int i = 0; i < seq.frame_count(); ++i)
                        plan.keyframe_indices.push_back(i);
                }
                index::GroupOptions opt;
                opt.score_floor = static_cast<float>(query_floor);
                std::vector<index::CandidateGroup> groups =
                    idx.kind == 0
                        ? index::plan_and_group(plan, store, idx.flat, opt)
                        : index::plan_and_group(plan, store, idx.ivf, query_nprobe, opt);
                for (const auto& g : groups) {
                    nlohmann::json j;
                    j["query_id"] = id;
                    j["ref_id"] = g.ref_video_id;
                    j["hits"] = g.hits.size();
                    std::cout << j.dump() << "\n";
                }
            }
        } else if (align_cmd->parsed() || detect_cmd->parsed()) {
            bool is_detect = detect_cmd->parsed();
            std::string feat = is_detect ? det_features : align_features;
            std::string feat2 = is_detect ? det_features2 : align_features2;
            std::string qid = is_detect ? det_q : align_q;
            std::string rid = is_detect ? det_r : align_r;
            features::FeatureStore store = features::ingest(feat);
            features::FeatureStore store2;
            if (!feat2.empty()) store2 = features::ingest(feat2);
            const features::FeatureSequence& q =
                find_video(store, feat2.empty() ? nullptr : &store2, qid);
            const features::FeatureSequence& r =
                find_video(store, feat2.empty() ? nullptr : &store2, rid);
            simmap::SimilarityMap m = simmap::dense_map(q, r);
            std::string method = is_detect ? "spd" : align_method;
            if (method == "spd") {
                std::string model_path = is_detect ? det_model : align_model;
                if (model_path.empty()) throw ConfigError("spd method needs --model");
                spd::DetectorParams det = spd::load_sgdm(model_path);
                spd::DetectOptions opt;
                opt.score_threshold = is_detect ? det_threshold : 0.1;
                spd::PairDetections out = spd::detect_pair(det, m, opt);
                emit_matches(out.matches, qid, rid);
            } else if (method == "hough") {
                emit_matches(align::hough_align(m, {1.0, 3, align_min_sim}), qid, rid);
            } else if (method == "tn") {
                emit_matches(align::tn_align(m, {3, align_min_sim}), qid, rid);
            } else {
                emit_matches(align::dp_align(m, {align_min_sim, 0.1, 0}), qid, rid);
            }
        } else if (eval_cmd->parsed()) {
            eval::SegmentSet preds = pipeline::matches_from_jsonl(read_file(eval_preds));
            eval::SegmentSet gts;
            for (const auto& e : synth::annotations_from_csv(read_file(eval_gts)))
                gts[{e.query_id, e.ref_id}] = e.segments;
            eval::SweepResult sweep = eval::sweep_f1(preds, gts);
            eval::EvalReport rep = sweep.best;
            rep.pr_points = sweep.curve;
            std::ofstream os(eval_out, std::ios::binary | std::ios::trunc);
            os << eval::report_to_json(rep) << "\n";
            std::cout << "f1 " << rep.f1 << " precision " << rep.precision << " recall "
                      << rep.recall << " (report: " << eval_out << ")\n";
        } else if (dump_cmd->parsed()) {
            features::FeatureStore store = features::ingest(dump_features);
            features::FeatureStore store2;
            if (!dump_features2.empty()) store2 = features::ingest(dump_features2);
            const features::FeatureSequence& q =
                find_video(store, dump_features2.empty() ? nullptr : &store2, dump_q);
            const features::FeatureSequence& r =
                find_video(store, dump_features2.empty() ? nullptr : &store2, dump_r);
            simmap::SimilarityMap m = simmap::dense_map(q, r);
            std::vector<align::SegmentMatch> gt, pred;
            if (!dump_gts.empty()) {
                for (const auto& e : synth::annotations_from_csv(read_file(dump_gts)))
                    if (e.query_id == dump_q && e.ref_id == dump_r)
                        gt.insert(gt.end(), e.segments.begin(), e.segments.end());
            }
            if (!dump_preds.empty()) {
                eval::SegmentSet preds = pipeline::matches_from_jsonl(read_file(dump_preds));
                if (auto it = preds.find({dump_q, dump_r}); it != preds.end()) pred = it->second;
            }
            eval::dump_map_image(m, gt, pred, dump_out);
            std::cout << "wrote " << dump_out << "\n";
        } else if (run_cmd->parsed()) {
            pipeline::RunConfig c = load_config(run_config);
            if (f_seed->count()) c.seed = flag_cfg.seed;
            if (f_method->count()) c.method = flag_cfg.method;
            if (f_pairs->count()) c.n_pairs = flag_cfg.n_pairs;
            if (f_distractors->count()) c.n_distractors = flag_cfg.n_distractors;
            if (f_train_pairs->count()) c.n_train_pairs = flag_cfg.n_train_pairs;
            if (f_epochs->count()) c.train_epochs = flag_cfg.train_epochs;
            if (f_threads->count()) c.threads = flag_cfg.threads;
            if (f_kind->count()) c.index_kind = flag_cfg.index_kind;
            if (f_topn->count()) c.topn = flag_cfg.topn;
            if (f_model->count()) c.model_path = flag_cfg.model_path;
            int rc = pipeline::run_pipeline(c, run_out);
            std::cout << "pipeline done, report at " << (fs::path(run_out) / "report.json")
                      << "\n";
            return rc;
        } else if (verify_cmd->parsed()) {
            std::string msg;
            if (!pipeline::verify_run_dir(verify_dir, &msg)) {
                std::cerr << "verification failed: " << msg << "\n";
                return 5;
            }
            std::cout << "verification ok\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const TrainingDiverged& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return 4;
    } catch (const VerifyError& e) {
        std::cerr << "verification failed: " << e.what() << "\n";
        return 5;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
