#include "segsim/ssan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "segsim/binio.hpp"
#include "segsim/rng.hpp"

namespace segsim::ssan {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
constexpr double kEps = 1e-7;

} // namespace

PairSample prepare_pair(const features::FeatureSequence& q, const features::FeatureSequence& r,
                        const simmap::SimilarityMap& s,
                        const std::vector<std::uint8_t>& labels_q,
                        const std::vector<std::uint8_t>& labels_r,
                        const std::vector<align::SegmentMatch>& gt_segments,
                        int uniform_interval, int tile_size) {
    PairSample ps;
    ps.query_id = s.query_id;
    ps.ref_id = s.ref_id;
    ps.rows = s.rows;
    ps.cols = s.cols;
    ps.row_fps = s.row_fps;
    ps.col_fps = s.col_fps;
    ps.tiles = simmap::prepare_detector_input(s, tile_size, true);
    ps.labels_q = labels_q;
    ps.labels_r = labels_r;

    ps.phi_q.resize(q.frame_count());
    for (int i = 0; i < q.frame_count(); ++i) ps.phi_q[i] = keyframe::novelty_descriptor(q, i);
    ps.phi_r.resize(r.frame_count());
    for (int i = 0; i < r.frame_count(); ++i) ps.phi_r[i] = keyframe::novelty_descriptor(r, i);

    std::vector<std::uint8_t> zq(s.rows, 0), zr(s.cols, 0);
    ps.umask_q = keyframe::sparse_uniform_interpolate(zq, uniform_interval);
    ps.umask_r = keyframe::sparse_uniform_interpolate(zr, uniform_interval);

    for (const align::SegmentMatch& g : gt_segments) {
        spd::Box b;
        b.x1 = g.r_start * s.col_fps;
        b.x2 = g.r_end * s.col_fps;
        b.y1 = g.q_start * s.row_fps;
        b.y2 = g.q_end * s.row_fps;
        ps.gt.push_back(b);
    }
    ps.tile_gt.resize(ps.tiles.size());
    for (std::size_t t = 0; t < ps.tiles.size(); ++t) {
        const simmap::Tile& tile = ps.tiles[t];
        for (const spd::Box& g : ps.gt) {
            spd::Box local;
            local.x1 = std::max(g.x1 - tile.col_offset, 0.0);
            local.y1 = std::max(g.y1 - tile.row_offset, 0.0);
            local.x2 = std::min(g.x2 - tile.col_offset, static_cast<double>(tile.size));
            local.y2 = std::min(g.y2 - tile.row_offset, static_cast<double>(tile.size));
            if (local.x2 - local.x1 >= 2.0 && local.y2 - local.y1 >= 2.0)
                ps.tile_gt[t].push_back(local);
        }
    }
    return ps;
}

EffectiveScores effective_scores(const SsanParams& p, const PairSample& s) {
    EffectiveScores es;
    auto score_one = [&](const std::vector<std::array<double, 3>>& phi,
                         const std::vector<std::uint8_t>& umask, std::vector<double>& scores,
                         std::vector<double>& eff) {
        scores.resize(phi.size());
        eff.resize(phi.size());
        for (std::size_t i = 0; i < phi.size(); ++i) {
            double logit = p.scorer.bias;
            for (int k = 0; k < 3; ++k) logit += p.scorer.w[k] * phi[i][k];
            scores[i] = sigmoid(logit);
            eff[i] = std::max(scores[i], static_cast<double>(umask[i]));
        }
    };
    score_one(s.phi_q, s.umask_q, es.scores_q, es.eff_q);
    score_one(s.phi_r, s.umask_r, es.scores_r, es.eff_r);
    return es;
}

namespace {

// Fused tile: eff_q[row] * eff_r[col] * base (padding cells stay 0).
spd::Tensor fuse_tile(const simmap::Tile& tile, const PairSample& s,
                      const std::vector<double>& eff_q, const std::vector<double>& eff_r) {
    spd::Tensor t = spd::Tensor::zeros(1, tile.size, tile.size);
    int h = std::min(tile.size, s.rows - tile.row_offset);
    int w = std::min(tile.size, s.cols - tile.col_offset);
    for (int y = 0; y < h; ++y) {
        const double* src = tile.data.data() + static_cast<std::size_t>(y) * tile.size;
        double* dst = t.v.data() + static_cast<std::size_t>(y) * tile.size;
        double rq = eff_q[tile.row_offset + y];
        for (int x = 0; x < w; ++x) dst[x] = rq * (eff_r[tile.col_offset + x] * src[x]);
    }
    return t;
}

} // namespace

spd::PairDetections ssan_forward(const SsanParams& p, const PairSample& s,
                                 const spd::DetectOptions& opt) {
    EffectiveScores es = effective_scores(p, s);
    spd::PairDetections out;
    std::vector<spd::Detection> all;
    for (const simmap::Tile& tile : s.tiles) {
        spd::Tensor fused = fuse_tile(tile, s, es.eff_q, es.eff_r);
        spd::Tensor preds = spd::forward(p.detector, fused, nullptr);
        std::vector<spd::Detection> dets =
            spd::decode(preds, tile.col_offset, tile.row_offset, p.detector.cfg,
                        opt.score_threshold);
        for (spd::Detection& d : dets) {
            d.box.x1 = std::clamp(d.box.x1, 0.0, static_cast<double>(s.cols));
            d.box.x2 = std::clamp(d.box.x2, 0.0, static_cast<double>(s.cols));
            d.box.y1 = std::clamp(d.box.y1, 0.0, static_cast<double>(s.rows));
            d.box.y2 = std::clamp(d.box.y2, 0.0, static_cast<double>(s.rows));
            if (d.box.x2 - d.box.x1 > 1e-6 && d.box.y2 - d.box.y1 > 1e-6) all.push_back(d);
        }
    }
    out.cells = spd::nms(std::move(all), opt.nms_iou);
    for (const spd::Detection& d : out.cells) {
        align::SegmentMatch sm;
        sm.q_start = d.box.y1 / s.row_fps;
        sm.q_end = d.box.y2 / s.row_fps;
        sm.r_start = d.box.x1 / s.col_fps;
        sm.r_end = d.box.x2 / s.col_fps;
        sm.score = d.score;
        out.matches.push_back(sm);
        out.video_similarity = std::max(out.video_similarity, d.score);
    }
    return out;
}

namespace {

double ske_term(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    double acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        double p = std::clamp(scores[i], kEps, 1.0 - kEps);
        acc += labels[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    return scores.empty() ? 0.0 : acc / static_cast<double>(scores.size());
}

} // namespace

spd::TrainingStats ssan_loss(const SsanParams& p, const PairSample& s) {
    EffectiveScores es = effective_scores(p, s);
    spd::TrainingStats st;
    st.l_ske = ske_term(es.scores_q, s.labels_q) + ske_term(es.scores_r, s.labels_r);
    const double n_tiles = static_cast<double>(s.tiles.size());
    for (std::size_t t = 0; t < s.tiles.size(); ++t) {
        spd::Tensor fused = fuse_tile(s.tiles[t], s, es.eff_q, es.eff_r);
        spd::Tensor preds = spd::forward(p.detector, fused, nullptr);
        spd::TrainingStats ts = spd::spd_loss(preds, s.tile_gt[t], p.detector.cfg);
        st.l_bce += ts.l_bce / n_tiles;
        st.l_giou += ts.l_giou / n_tiles;
        st.l_spd += ts.l_spd / n_tiles;
    }
    st.l_ssan = st.l_ske + st.l_spd;
    return st;
}

spd::TrainingStats ssan_loss_grad(const SsanParams& p, const PairSample& s, SsanGrads& grads) {
    EffectiveScores es = effective_scores(p, s);
    spd::TrainingStats st;
    st.l_ske = ske_term(es.scores_q, s.labels_q) + ske_term(es.scores_r, s.labels_r);

    std::vector<double> d_eff_q(es.eff_q.size(), 0.0), d_eff_r(es.eff_r.size(), 0.0);
    const double n_tiles = static_cast<double>(s.tiles.size());
    for (std::size_t t = 0; t < s.tiles.size(); ++t) {
        const simmap::Tile& tile = s.tiles[t];
        spd::Tensor fused = fuse_tile(tile, s, es.eff_q, es.eff_r);
        spd::ForwardCache fc;
        spd::Tensor preds = spd::forward(p.detector, fused, &fc);
        spd::Tensor d_out;
        spd::TrainingStats ts = spd::spd_loss_grad(preds, s.tile_gt[t], p.detector.cfg, d_out);
        st.l_bce += ts.l_bce / n_tiles;
        st.l_giou += ts.l_giou / n_tiles;
        st.l_spd += ts.l_spd / n_tiles;
        for (double& v : d_out.v) v /= n_tiles;
        spd::Tensor d_input;
        spd::backward(p.detector, fc, d_out, grads.detector, &d_input);
        // Chain through the fusion: W = eff_q[i] * eff_r[j] * base.
        int h = std::min(tile.size, s.rows - tile.row_offset);
        int w = std::min(tile.size, s.cols - tile.col_offset);
        for (int y = 0; y < h; ++y) {
            const double* base = tile.data.data() + static_cast<std::size_t>(y) * tile.size;
            const double* din = d_input.v.data() + static_cast<std::size_t>(y) * tile.size;
            double rq = es.eff_q[tile.row_offset + y];
            double acc_q = 0.0;
            for (int x = 0; x < w; ++x) {
                double b = base[x];
                if (b == 0.0) continue;
                double er = es.eff_r[tile.col_offset + x];
                acc_q += din[x] * er * b;
                d_eff_r[tile.col_offset + x] += din[x] * rq * b;
            }
            d_eff_q[tile.row_offset + y] += acc_q;
        }
    }
    st.l_ssan = st.l_ske + st.l_spd;

    // Scorer gradient: SPD path through the max() gate plus the BCE terms.
    auto accumulate = [&](const std::vector<std::array<double, 3>>& phi,
                          const std::vector<std::uint8_t>& labels,
                          const std::vector<std::uint8_t>& umask,
                          const std::vector<double>& scores, const std::vector<double>& d_eff) {
        const double n = static_cast<double>(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) {
            double sc = scores[i];
            double d_score = 0.0;
            if (sc > umask[i]) d_score += d_eff[i]; // max() gate open
            if (std::clamp(sc, kEps, 1.0 - kEps) == sc) {
                // d(mean BCE)/d logit = (p - y)/n; fold into logit-space below.
                double d_logit_bce = (sc - labels[i]) / n;
                for (int k = 0; k < 3; ++k) grads.scorer[k] += d_logit_bce * phi[i][k];
                grads.scorer[3] += d_logit_bce;
            }
            double d_logit = d_score * sc * (1.0 - sc);
            for (int k = 0; k < 3; ++k) grads.scorer[k] += d_logit * phi[i][k];
            grads.scorer[3] += d_logit;
        }
    };
    accumulate(s.phi_q, s.labels_q, s.umask_q, es.scores_q, d_eff_q);
    accumulate(s.phi_r, s.labels_r, s.umask_r, es.scores_r, d_eff_r);
    return st;
}

SsanParams train_ssan(const std::vector<PairSample>& data, const SsanParams& init,
                      const SsanTrainHyper& hyper, std::vector<SsanTrainLog>* log) {
    if (data.empty()) throw DataError("train_ssan on empty dataset");
    SsanParams params = init;
    Rng rng(hyper.sgd.seed);
    std::vector<double*> det_ptrs = spd::param_ptrs(params.detector);
    std::vector<double> det_vel(det_ptrs.size(), 0.0);
    std::array<double, 4> scorer_vel{0, 0, 0, 0};

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < hyper.sgd.epochs; ++epoch) {
        double el_ske = 0.0, el_spd = 0.0;
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        for (std::size_t at = 0; at < order.size(); at += hyper.sgd.batch) {
            std::size_t n = std::min<std::size_t>(hyper.sgd.batch, order.size() - at);
            SsanGrads grads;
            grads.detector = spd::DetectorParams::zeros_like(params.detector);
            double batch_loss = 0.0;
            for (std::size_t bi = 0; bi < n; ++bi) {
                spd::TrainingStats st = ssan_loss_grad(params, data[order[at + bi]], grads);
                batch_loss += st.l_ssan;
                el_ske += st.l_ske;
                el_spd += st.l_spd;
            }
            if (!std::isfinite(batch_loss))
                throw TrainingDiverged("ssan loss went non-finite in epoch " +
                                       std::to_string(epoch));
            double inv = 1.0 / static_cast<double>(n);
            std::vector<double*> gp = spd::param_ptrs(grads.detector);
            for (std::size_t k = 0; k < det_ptrs.size(); ++k) {
                double g = *gp[k] * inv + hyper.sgd.weight_decay * *det_ptrs[k];
                double v = hyper.sgd.momentum * det_vel[k] + g;
                det_vel[k] = v;
                *det_ptrs[k] -= hyper.sgd.lr * (g + hyper.sgd.momentum * v);
            }
            double* sp[4] = {&params.scorer.w[0], &params.scorer.w[1], &params.scorer.w[2],
                             &params.scorer.bias};
            for (int k = 0; k < 4; ++k) {
                double g = grads.scorer[k] * inv; // no weight decay on the scorer
                double v = hyper.sgd.momentum * scorer_vel[k] + g;
                scorer_vel[k] = v;
                *sp[k] -= hyper.sgd.lr * hyper.scorer_lr_scale * (g + hyper.sgd.momentum * v);
            }
        }
        if (log) {
            SsanTrainLog entry;
            entry.epoch = epoch;
            entry.l_ske = el_ske / data.size();
            entry.l_spd = el_spd / data.size();
            entry.l_ssan = entry.l_ske + entry.l_spd;
            // Compression at the configured threshold over query videos.
            long long selected = 0, total = 0;
            for (const PairSample& s : data) {
                EffectiveScores es = effective_scores(params, s);
                std::vector<int> keys =
                    keyframe::quantize_scores(es.scores_q, hyper.quantize_threshold);
                std::vector<std::uint8_t> lab(es.scores_q.size(), 0);
                for (int k : keys) lab[k] = 1;
                for (std::size_t i = 0; i < lab.size(); ++i)
                    if (lab[i] || s.umask_q[i]) ++selected;
                total += static_cast<long long>(lab.size());
            }
            entry.compression_ratio = total > 0 ? static_cast<double>(selected) / total : 0.0;
            log->push_back(entry);
        }
    }
    return params;
}

double ssan_grad_check(const SsanParams& p, const PairSample& s, double h) {
    SsanGrads grads;
    grads.detector = spd::DetectorParams::zeros_like(p.detector);
    ssan_loss_grad(p, s, grads);

    SsanParams work = p;
    double* sp[4] = {&work.scorer.w[0], &work.scorer.w[1], &work.scorer.w[2],
                     &work.scorer.bias};
    double worst = 0.0;
    for (int k = 0; k < 4; ++k) {
        double orig = *sp[k];
        *sp[k] = orig + h;
        double up = ssan_loss(work, s).l_ssan;
        *sp[k] = orig - h;
        double down = ssan_loss(work, s).l_ssan;
        *sp[k] = orig;
        double numeric = (up - down) / (2.0 * h);
        double err = std::fabs(numeric - grads.scorer[k]) /
                     std::max({1.0, std::fabs(numeric), std::fabs(grads.scorer[k])});
        worst = std::max(worst, err);
    }
    return worst;
}

static constexpr char kMagic[4] = {'S', 'G', 'S', 'M'};

void save_sgsm(const SsanParams& p, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    binio::write_u32(os, 1);
    for (double w : p.scorer.w) binio::write_f64(os, w);
    binio::write_f64(os, p.scorer.bias);
    spd::write_detector_block(os, p.detector);
    if (!os) throw DataError("write failed for '" + path + "'");
}

SsanParams load_sgsm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open model file '" + path + "'");
    char magic[4];
    binio::read_exact(is, magic, 4, "SGSM magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad magic in '" + path + "': not an SGSM file");
    std::uint32_t version = binio::read_u32(is, "SGSM version");
    if (version != 1) throw DataError("unsupported SGSM version");
    SsanParams p;
    for (double& w : p.scorer.w) w = binio::read_f64(is, "scorer weight");
    p.scorer.bias = binio::read_f64(is, "scorer bias");
    p.detector = spd::read_detector_block(is);
    return p;
}

} // namespace segsim::ssan
