#include "segsim/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "segsim/binio.hpp"

namespace segsim::synth {

namespace {

void normalize_inplace(std::vector<double>& v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    double n = std::sqrt(sq);
    if (n < 1e-12) {
        v[0] = 1.0;
        n = 1.0;
    }
    for (double& x : v) x /= n;
}

std::vector<double> random_unit(Rng& rng, int dim) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    normalize_inplace(v);
    return v;
}

} // namespace

SynthVideo gen_video(const SynthConfig& cfg, std::uint64_t seed, const std::string& video_id) {
    Rng rng(seed);
    const int len = cfg.min_len == cfg.max_len ? cfg.min_len
                                               : rng.uniform_int(cfg.min_len, cfg.max_len);
    SynthVideo out;
    out.seq.video_id = video_id;
    out.seq.basis_fps = cfg.basis_fps;
    out.seq.dim = cfg.dim;
    out.seq.data.reserve(static_cast<std::size_t>(len) * cfg.dim);
    out.low_quality.assign(len, 0);

    auto draw_anchor = [&]() {
        if (cfg.shared_shot_prob > 0.0 && rng.uniform() < cfg.shared_shot_prob) {
            int k = rng.uniform_int(0, std::max(1, cfg.shared_pool_size) - 1);
            Rng pool_rng(Rng::mix(cfg.pool_seed, static_cast<std::uint64_t>(k)));
            return random_unit(pool_rng, cfg.dim);
        }
        return random_unit(rng, cfg.dim);
    };
    std::vector<double> anchor = draw_anchor();
    std::vector<double> prev = anchor;
    std::vector<double> f(cfg.dim);
    int shot_left = std::max(1, static_cast<int>(std::lround(
                                    cfg.mean_shot_len * (0.5 + rng.uniform()))));
    for (int i = 0; i < len; ++i) {
        if (shot_left == 0) {
            anchor = draw_anchor();
            prev = anchor;
            shot_left = std::max(1, static_cast<int>(std::lround(
                                        cfg.mean_shot_len * (0.5 + rng.uniform()))));
        }
        --shot_left;
        bool lq = rng.uniform() < cfg.low_quality_frac;
        double sigma = (lq ? cfg.low_quality_noise : cfg.noise) / std::sqrt(cfg.dim);
        for (int d = 0; d < cfg.dim; ++d)
            f[d] = cfg.alpha * prev[d] + (1.0 - cfg.alpha) * anchor[d] + sigma * rng.normal();
        normalize_inplace(f);
        if (lq) out.low_quality[i] = 1;
        for (double x : f) out.seq.data.push_back(static_cast<float>(x));
        prev = f;
    }
    out.seq.l2_normalize();
    return out;
}

int TimeMapping::min_src() const {
    int best = -1;
    for (int s : src)
        if (s >= 0 && (best < 0 || s < best)) best = s;
    return best;
}

int TimeMapping::max_src() const {
    int best = -1;
    for (int s : src)
        if (s > best) best = s;
    return best;
}

TimeMapping TimeMapping::compose(const TimeMapping& inner) const {
    TimeMapping out;
    out.src.reserve(src.size());
    for (int s : src) {
        if (s < 0 || s >= static_cast<int>(inner.src.size()))
            out.src.push_back(-1);
        else
            out.src.push_back(inner.src[s]);
    }
    return out;
}

std::pair<features::FeatureSequence, TimeMapping> apply_temporal(
    const features::FeatureSequence& seq, const TemporalTransform& t, std::uint64_t seed,
    const features::FeatureSequence* other) {
    const int n = seq.frame_count();
    TimeMapping map;
    switch (t.kind) {
        case TemporalKind::Clip: {
            int start = std::clamp(t.clip_start, 0, n);
            int len = t.clip_len > 0 ? std::min(t.clip_len, n - start) : n - start;
            for (int i = 0; i < len; ++i) map.src.push_back(start + i);
            break;
        }
        case TemporalKind::Concat: {
            if (!other) throw DataError("concat transform needs a second sequence");
            if (other->dim != seq.dim) throw DataError("concat dim mismatch");
            for (int i = 0; i < n; ++i) map.src.push_back(i);
            for (int i = 0; i < other->frame_count(); ++i) map.src.push_back(-1);
            break;
        }
        case TemporalKind::Accelerate: {
            if (t.k < 2 || t.k > 3) throw ConfigError("accelerate factor must be 2 or 3");
            for (int i = 0; i * t.k < n; ++i) map.src.push_back(i * t.k);
            break;
        }
        case TemporalKind::Decelerate: {
            if (t.k < 2 || t.k > 3) throw ConfigError("decelerate factor must be 2 or 3");
            for (int i = 0; i < n * t.k; ++i) map.src.push_back(i / t.k);
            break;
        }
        case TemporalKind::Drop: {
            if (!(t.p > 0.0 && t.p < 0.5)) throw ConfigError("drop probability must be in (0,0.5)");
            Rng rng(seed);
            for (int i = 0; i < n; ++i)
                if (rng.uniform() >= t.p) map.src.push_back(i);
            if (map.src.empty() && n > 0) map.src.push_back(0);
            break;
        }
        case TemporalKind::FpsChange: {
            if (!(t.rate > 0.0)) throw ConfigError("fps_change rate must be > 0");
            int out_len = static_cast<int>(std::floor(n / t.rate));
            for (int i = 0; i < out_len; ++i) {
                int s = static_cast<int>(std::floor(i * t.rate));
                if (s >= n) break;
                map.src.push_back(s);
            }
            break;
        }
    }
    if (map.src.empty()) throw DataError("temporal transform produced an empty sequence");

    features::FeatureSequence out;
    out.video_id = seq.video_id;
    out.basis_fps = seq.basis_fps;
    out.dim = seq.dim;
    out.data.reserve(map.src.size() * seq.dim);
    for (std::size_t i = 0; i < map.src.size(); ++i) {
        int s = map.src[i];
        std::span<const float> f =
            s >= 0 ? seq.frame(s) : other->frame(static_cast<int>(i) - n);
        out.data.insert(out.data.end(), f.begin(), f.end());
    }
    return {std::move(out), std::move(map)};
}

features::FeatureSequence apply_spatial_proxy(const features::FeatureSequence& seq,
                                              double sigma_extra, std::uint64_t rotation_seed,
                                              bool rotate) {
    if (sigma_extra < 0.0) throw ConfigError("spatial proxy sigma must be >= 0");
    features::FeatureSequence out = seq;
    const int n = out.frame_count();
    const int dim = out.dim;
    if (sigma_extra == 0.0 && !rotate) return out;

    // One fixed set of small-angle Givens rotations shared by all frames.
    Rng rot_rng(rotation_seed);
    std::vector<std::array<int, 2>> planes;
    std::vector<double> angles;
    if (rotate && dim >= 2) {
        int n_rot = dim / 2;
        for (int r = 0; r < n_rot; ++r) {
            int a = rot_rng.uniform_int(0, dim - 1);
            int b = rot_rng.uniform_int(0, dim - 2);
            if (b >= a) ++b;
            planes.push_back({a, b});
            angles.push_back(rot_rng.uniform(-0.15, 0.15));
        }
    }

    Rng noise_rng(Rng::mix(rotation_seed, 0x5eed));
    std::vector<double> f(dim);
    double sigma = sigma_extra / std::sqrt(static_cast<double>(dim));
    for (int i = 0; i < n; ++i) {
        auto fr = out.frame(i);
        for (int d = 0; d < dim; ++d) f[d] = fr[d];
        for (std::size_t r = 0; r < planes.size(); ++r) {
            double c = std::cos(angles[r]), s = std::sin(angles[r]);
            double xa = f[planes[r][0]], xb = f[planes[r][1]];
            f[planes[r][0]] = c * xa - s * xb;
            f[planes[r][1]] = s * xa + c * xb;
        }
        for (int d = 0; d < dim; ++d) f[d] += sigma * noise_rng.normal();
        normalize_inplace(f);
        for (int d = 0; d < dim; ++d) fr[d] = static_cast<float>(f[d]);
    }
    out.l2_normalize();
    return out;
}

double mean_self_similarity(const features::FeatureSequence& a,
                            const features::FeatureSequence& b) {
    int n = std::min(a.frame_count(), b.frame_count());
    if (n == 0) return 0.0;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += features::cosine_sim(a.frame(i), b.frame(i));
    return acc / n;
}

SegmentSpec random_segment_spec(Rng& rng, double spatial_sigma, int src_len_min,
                                int src_len_max, int out_budget) {
    SegmentSpec s;
    // Per-segment hardness jitter: spans the hard-positive similarity band.
    s.spatial_sigma = spatial_sigma * rng.uniform(0.55, 1.45);
    switch (rng.uniform_int(0, 5)) {
        case 0: s.transform.kind = TemporalKind::Clip; break;
        case 1: s.transform.kind = TemporalKind::Concat; break; // realized as adjacent clips
        case 2:
            s.transform.kind = TemporalKind::Accelerate;
            s.transform.k = rng.uniform_int(2, 3);
            break;
        case 3:
            s.transform.kind = TemporalKind::Decelerate;
            s.transform.k = 2;
            break;
        case 4:
            s.transform.kind = TemporalKind::Drop;
            s.transform.p = rng.uniform(0.1, 0.4);
            break;
        default:
            s.transform.kind = TemporalKind::FpsChange;
            s.transform.rate = rng.uniform() < 0.5 ? rng.uniform(0.6, 0.9)
                                                   : rng.uniform(1.2, 1.8);
            break;
    }
    // Cap the source length so the transformed segment fits the output budget.
    int hi = src_len_max;
    if (out_budget > 0) {
        int cap = out_budget;
        if (s.transform.kind == TemporalKind::Decelerate)
            cap = out_budget / s.transform.k;
        else if (s.transform.kind == TemporalKind::FpsChange && s.transform.rate < 1.0)
            cap = static_cast<int>(std::floor(out_budget * s.transform.rate));
        hi = std::min(hi, cap);
    }
    hi = std::max(hi, 4);
    int lo = std::min(src_len_min, hi);
    s.src_len = lo == hi ? lo : rng.uniform_int(lo, hi);
    return s;
}

static const char* tag_for(const TemporalTransform& t) {
    switch (t.kind) {
        case TemporalKind::Clip: return "clip";
        case TemporalKind::Concat: return "concat";
        case TemporalKind::Accelerate: return t.k == 2 ? "accelerate2" : "accelerate3";
        case TemporalKind::Decelerate: return t.k == 2 ? "decelerate2" : "decelerate3";
        case TemporalKind::Drop: return "drop";
        case TemporalKind::FpsChange: return "fps_change";
    }
    return "unknown";
}

GroundTruthPair make_pair(const SynthConfig& cfg, const PairSpec& spec, std::uint64_t seed) {
    if (spec.segments.empty()) throw ConfigError("make_pair needs at least one segment");
    GroundTruthPair out;
    out.ref = gen_video(cfg, Rng::mix(seed, 1), spec.ref_id);
    out.query = gen_video(cfg, Rng::mix(seed, 2), spec.query_id);
    Rng rng(Rng::mix(seed, 3));

    const int ref_len = out.ref.seq.frame_count();
    const double qfps = out.query.seq.basis_fps;
    const double rfps = out.ref.seq.basis_fps;

    // Build each transformed segment first so splice sizes are known.
    struct Prepared {
        features::FeatureSequence frames;
        int src_lo, src_hi; // inclusive ref frame extent
        std::string tag;
    };
    std::vector<Prepared> prepared;
    for (std::size_t s = 0; s < spec.segments.size(); ++s) {
        const SegmentSpec& seg = spec.segments[s];
        int src_len = std::min(seg.src_len, ref_len);
        if (src_len < 4) throw DataError("segment too short");
        int src_start = rng.uniform_int(0, ref_len - src_len);

        TemporalTransform clip{TemporalKind::Clip, src_start, src_len};
        auto [clipped, clip_map] = apply_temporal(out.ref.seq, clip, 0);

        TemporalTransform inner = seg.transform;
        if (inner.kind == TemporalKind::Clip || inner.kind == TemporalKind::Concat)
            inner = TemporalTransform{TemporalKind::Clip, 0, 0};
        auto [edited, edit_map] = apply_temporal(clipped, inner, Rng::mix(seed, 100 + s));
        TimeMapping full = edit_map.compose(clip_map);

        Prepared p;
        p.frames = apply_spatial_proxy(edited, seg.spatial_sigma, Rng::mix(seed, 200 + s),
                                       seg.spatial_sigma > 0.0);
        p.src_lo = full.min_src();
        p.src_hi = full.max_src();
        p.tag = tag_for(seg.transform);
        prepared.push_back(std::move(p));
    }

    // Choose disjoint splice positions in the query.
    int total = 0;
    for (const auto& p : prepared) total += p.frames.frame_count();
    int q_len = out.query.seq.frame_count();
    if (total > q_len) throw DataError("segments longer than host video");

    int slots = static_cast<int>(prepared.size());
    std::vector<int> positions(slots);
    int free_space = q_len - total;
    if (spec.adjacent) {
        int base = free_space > 0 ? rng.uniform_int(0, free_space) : 0;
        int cur = base;
        for (int s = 0; s < slots; ++s) {
            positions[s] = cur;
            cur += prepared[s].frames.frame_count();
        }
    } else {
        // Random gaps before each segment summing to <= free_space.
        std::vector<int> gaps(slots + 1, 0);
        int remaining = free_space;
        for (int s = 0; s < slots; ++s) {
            int min_sep = s > 0 ? 8 : 0; // keep non-adjacent segments clearly apart
            int g = std::min(remaining, min_sep + (remaining > min_sep
                                                       ? rng.uniform_int(0, remaining - min_sep)
                                                       : 0));
            gaps[s] = g;
            remaining -= g;
        }
        int cur = 0;
        for (int s = 0; s < slots; ++s) {
            cur += gaps[s];
            positions[s] = cur;
            cur += prepared[s].frames.frame_count();
        }
    }

    for (int s = 0; s < slots; ++s) {
        const Prepared& p = prepared[s];
        int at = positions[s];
        int len = p.frames.frame_count();
        std::copy(p.frames.data.begin(), p.frames.data.end(),
                  out.query.seq.data.begin() + static_cast<std::size_t>(at) * cfg.dim);
        std::fill(out.query.low_quality.begin() + at, out.query.low_quality.begin() + at + len,
                  static_cast<std::uint8_t>(0));
        align::SegmentMatch gt;
        gt.q_start = at / qfps;
        gt.q_end = (at + len) / qfps;
        gt.r_start = p.src_lo / rfps;
        gt.r_end = (p.src_hi + 1) / rfps;
        gt.score = 1.0;
        out.segments.push_back(gt);
        out.tags.push_back(p.tag);
    }
    return out;
}

Dataset make_dataset(const DatasetConfig& cfg) {
    Dataset ds;
    for (int i = 0; i < cfg.n_pairs; ++i) {
        std::uint64_t pair_seed = Rng::mix(cfg.seed, static_cast<std::uint64_t>(i));
        Rng rng(Rng::mix(pair_seed, 0xabcd));
        char qid[32], rid[32];
        std::snprintf(qid, sizeof(qid), "q%04d", i);
        std::snprintf(rid, sizeof(rid), "g%04d", i);
        PairSpec spec;
        spec.query_id = qid;
        spec.ref_id = rid;
        int n_seg = cfg.segments_min == cfg.segments_max
                        ? cfg.segments_min
                        : rng.uniform_int(cfg.segments_min, cfg.segments_max);
        // Worst-case output budget per segment, against the shortest host.
        int budget = (cfg.video.min_len - 8 * std::max(0, n_seg - 1)) / std::max(1, n_seg);
        bool adjacent = false;
        for (int s = 0; s < n_seg; ++s) {
            SegmentSpec seg = random_segment_spec(rng, cfg.spatial_sigma, cfg.src_len_min,
                                                  cfg.src_len_max, budget);
            if (seg.transform.kind == TemporalKind::Concat) adjacent = true;
            spec.segments.push_back(seg);
        }
        // Concat means two clips spliced back to back; split the budget.
        if (adjacent && spec.segments.size() == 1) {
            spec.segments[0].src_len = std::max(4, spec.segments[0].src_len / 2);
            spec.segments.push_back(spec.segments[0]);
        }
        spec.adjacent = adjacent;

        SynthConfig vcfg = cfg.video;
        GroundTruthPair pair = make_pair(vcfg, spec, pair_seed);
        ds.low_quality.emplace_back(pair.query.seq.video_id, pair.query.low_quality);
        ds.low_quality.emplace_back(pair.ref.seq.video_id, pair.ref.low_quality);
        DatasetEntry e;
        e.query_id = pair.query.seq.video_id;
        e.ref_id = pair.ref.seq.video_id;
        e.segments = pair.segments;
        e.tags = pair.tags;
        ds.entries.push_back(std::move(e));
        ds.queries.add(std::move(pair.query.seq));
        ds.gallery.add(std::move(pair.ref.seq));
    }
    for (int i = 0; i < cfg.n_distractors; ++i) {
        char did[32];
        std::snprintf(did, sizeof(did), "d%04d", i);
        SynthVideo v = gen_video(cfg.video, Rng::mix(cfg.seed, 0x0d15ea5e + i), did);
        ds.low_quality.emplace_back(v.seq.video_id, v.low_quality);
        ds.gallery.add(std::move(v.seq));
    }
    return ds;
}

std::string annotations_to_csv(const std::vector<DatasetEntry>& entries) {
    std::ostringstream os;
    char buf[256];
    for (const auto& e : entries) {
        for (const auto& s : e.segments) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%.3f,%.3f,%.3f,%.3f\n", e.query_id.c_str(),
                          e.ref_id.c_str(), s.q_start, s.q_end, s.r_start, s.r_end);
            os << buf;
        }
    }
    return os.str();
}

std::vector<DatasetEntry> annotations_from_csv(const std::string& text) {
    std::vector<DatasetEntry> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 6) throw DataError("bad annotation line: " + line);
        align::SegmentMatch s;
        s.q_start = std::stod(fields[2]);
        s.q_end = std::stod(fields[3]);
        s.r_start = std::stod(fields[4]);
        s.r_end = std::stod(fields[5]);
        s.score = 1.0;
        auto it = std::find_if(out.begin(), out.end(), [&](const DatasetEntry& e) {
            return e.query_id == fields[0] && e.ref_id == fields[1];
        });
        if (it == out.end()) {
            DatasetEntry e;
            e.query_id = fields[0];
            e.ref_id = fields[1];
            e.segments.push_back(s);
            out.push_back(std::move(e));
        } else {
            it->segments.push_back(s);
        }
    }
    return out;
}

DatasetFiles write_dataset(const Dataset& ds, const DatasetConfig& cfg,
                           const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    DatasetFiles files;
    files.queries_path = (fs::path(out_dir) / "queries.sgaf").string();
    files.gallery_path = (fs::path(out_dir) / "gallery.sgaf").string();
    files.annotations_path = (fs::path(out_dir) / "annotations.csv").string();
    files.manifest_path = (fs::path(out_dir) / "manifest.json").string();

    features::write_sgaf(ds.queries, files.queries_path);
    features::write_sgaf(ds.gallery, files.gallery_path);
    {
        std::ofstream os(files.annotations_path, std::ios::binary | std::ios::trunc);
        os << annotations_to_csv(ds.entries);
    }

    nlohmann::json j;
    j["config"] = {{"dim", cfg.video.dim},
                   {"min_len", cfg.video.min_len},
                   {"max_len", cfg.video.max_len},
                   {"basis_fps", cfg.video.basis_fps},
                   {"alpha", cfg.video.alpha},
                   {"mean_shot_len", cfg.video.mean_shot_len},
                   {"noise", cfg.video.noise},
                   {"low_quality_frac", cfg.video.low_quality_frac},
                   {"low_quality_noise", cfg.video.low_quality_noise},
                   {"shared_shot_prob", cfg.video.shared_shot_prob},
                   {"shared_pool_size", cfg.video.shared_pool_size},
                   {"pool_seed", cfg.video.pool_seed},
                   {"n_pairs", cfg.n_pairs},
                   {"n_distractors", cfg.n_distractors},
                   {"segments_min", cfg.segments_min},
                   {"segments_max", cfg.segments_max},
                   {"spatial_sigma", cfg.spatial_sigma},
                   {"src_len_min", cfg.src_len_min},
                   {"src_len_max", cfg.src_len_max},
                   {"seed", cfg.seed}};
    j["files"] = {fs::path(files.queries_path).filename().string(),
                  fs::path(files.gallery_path).filename().string(),
                  fs::path(files.annotations_path).filename().string()};
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& e : ds.entries) {
        nlohmann::json p;
        p["query_id"] = e.query_id;
        p["ref_id"] = e.ref_id;
        p["tags"] = e.tags;
        nlohmann::json segs = nlohmann::json::array();
        for (const auto& s : e.segments)
            segs.push_back({s.q_start, s.q_end, s.r_start, s.r_end});
        p["segments"] = segs;
        pairs.push_back(p);
    }
    j["pairs"] = pairs;
    nlohmann::json lq = nlohmann::json::object();
    for (const auto& [id, flags] : ds.low_quality) lq[id] = flags;
    j["low_quality"] = lq;

    std::string config_dump = j["config"].dump();
    j["config_hash"] = binio::fnv1a(config_dump.data(), config_dump.size());

    std::ofstream os(files.manifest_path, std::ios::binary | std::ios::trunc);
    os << j.dump(2) << "\n";
    if (!os) throw DataError("write failed for manifest");
    return files;
}

} // namespace segsim::synth
