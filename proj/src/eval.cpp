#include "segsim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "segsim/errors.hpp"

namespace segsim::eval {

namespace {

struct Cell {
    int q = 0; // query second
    int r = 0; // ref second
    auto operator<=>(const Cell&) const = default;
};

// Rasterizes one segment to per-second cells along its linear time map.
std::vector<Cell> rasterize(const align::SegmentMatch& s) {
    std::vector<Cell> cells;
    if (!(s.q_end > s.q_start) || !(s.r_end > s.r_start)) return cells;
    int a0 = static_cast<int>(std::floor(s.q_start));
    int a1 = static_cast<int>(std::ceil(s.q_end));
    double slope = (s.r_end - s.r_start) / (s.q_end - s.q_start);
    for (int a = a0; a < a1; ++a) {
        double mid = std::min(std::max(a + 0.5, s.q_start), s.q_end);
        double r = s.r_start + (mid - s.q_start) * slope;
        r = std::min(r, s.r_end - 1e-9);
        cells.push_back({a, static_cast<int>(std::floor(r))});
    }
    return cells;
}

bool covers(const align::SegmentMatch& s, const Cell& c) {
    bool q_ok = (c.q + 1) > s.q_start && c.q < s.q_end;
    bool r_ok = (c.r + 1) > s.r_start && c.r < s.r_end;
    return q_ok && r_ok;
}

bool covered_by_any(const std::vector<align::SegmentMatch>& segs, const Cell& c) {
    for (const auto& s : segs)
        if (covers(s, c)) return true;
    return false;
}

} // namespace

EvalReport segment_f1(const SegmentSet& preds, const SegmentSet& gts, double score_threshold) {
    EvalReport rep;
    long long pred_total = 0, pred_correct = 0, gt_total = 0, gt_covered = 0;

    std::set<PairKey> all_pairs;
    for (const auto& [k, v] : preds) all_pairs.insert(k);
    for (const auto& [k, v] : gts) all_pairs.insert(k);

    double macro_sum = 0.0;
    int macro_n = 0;
    for (const PairKey& key : all_pairs) {
        PairBreakdown pb;
        std::vector<align::SegmentMatch> kept;
        if (auto it = preds.find(key); it != preds.end())
            for (const auto& s : it->second)
                if (s.score >= score_threshold) kept.push_back(s);
        const std::vector<align::SegmentMatch>* gt = nullptr;
        if (auto it = gts.find(key); it != gts.end()) gt = &it->second;

        std::set<Cell> pred_cells;
        for (const auto& s : kept)
            for (const Cell& c : rasterize(s)) pred_cells.insert(c);
        for (const Cell& c : pred_cells) {
            ++pb.pred_cells;
            if (gt && covered_by_any(*gt, c)) ++pb.correct_cells;
        }
        if (gt) {
            std::set<Cell> gt_cells;
            for (const auto& s : *gt)
                for (const Cell& c : rasterize(s)) gt_cells.insert(c);
            for (const Cell& c : gt_cells) {
                ++pb.gt_cells;
                if (covered_by_any(kept, c)) ++pb.covered_cells;
            }
        }
        double p = pb.pred_cells > 0 ? static_cast<double>(pb.correct_cells) / pb.pred_cells : 0.0;
        double r = pb.gt_cells > 0 ? static_cast<double>(pb.covered_cells) / pb.gt_cells : 0.0;
        pb.f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        pred_total += pb.pred_cells;
        pred_correct += pb.correct_cells;
        gt_total += pb.gt_cells;
        gt_covered += pb.covered_cells;
        if (pb.gt_cells > 0) {
            macro_sum += pb.f1;
            ++macro_n;
        }
        rep.per_pair.emplace(key, pb);
    }

    rep.precision = pred_total > 0 ? static_cast<double>(pred_correct) / pred_total : 0.0;
    rep.recall = gt_total > 0 ? static_cast<double>(gt_covered) / gt_total : 0.0;
    rep.f1 = (rep.precision + rep.recall) > 0.0
                 ? 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall)
                 : 0.0;
    rep.macro_f1 = macro_n > 0 ? macro_sum / macro_n : 0.0;
    rep.best_threshold = score_threshold;
    return rep;
}

SweepResult sweep_f1(const SegmentSet& preds, const SegmentSet& gts) {
    std::set<double> scores;
    for (const auto& [k, v] : preds)
        for (const auto& s : v) scores.insert(s.score);
    if (scores.empty()) scores.insert(0.0);

    SweepResult out;
    double best_f1 = -1.0;
    // Descending thresholds so the curve runs from low recall to high recall.
    for (auto it = scores.rbegin(); it != scores.rend(); ++it) {
        EvalReport r = segment_f1(preds, gts, *it);
        out.curve.emplace_back(r.precision, r.recall);
        out.thresholds.push_back(*it);
        if (r.f1 > best_f1) {
            best_f1 = r.f1;
            out.best = r;
        }
    }
    return out;
}

double map_eval(const std::map<std::string, std::vector<std::pair<std::string, double>>>& rankings,
                const std::map<std::string, std::vector<std::string>>& relevant,
                int* skipped) {
    double ap_sum = 0.0;
    int n = 0, skip = 0;
    for (const auto& [qid, ranked] : rankings) {
        auto rel_it = relevant.find(qid);
        if (rel_it == relevant.end() || rel_it->second.empty()) {
            ++skip;
            continue;
        }
        std::set<std::string> rel(rel_it->second.begin(), rel_it->second.end());
        // Stable rank order: score desc, id asc.
        std::vector<std::pair<std::string, double>> sorted = ranked;
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        int found = 0;
        double ap = 0.0;
        for (std::size_t rank = 0; rank < sorted.size(); ++rank) {
            if (rel.count(sorted[rank].first)) {
                ++found;
                ap += static_cast<double>(found) / static_cast<double>(rank + 1);
            }
        }
        ap /= static_cast<double>(rel.size());
        ap_sum += ap;
        ++n;
    }
    if (skipped) *skipped = skip;
    return n > 0 ? ap_sum / n : 0.0;
}

namespace {

struct Image {
    int w = 0, h = 0;
    std::vector<unsigned char> px; // rgb

    void set(int x, int y, unsigned char r, unsigned char g, unsigned char b) {
        if (x < 0 || y < 0 || x >= w || y >= h) return;
        std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
        px[i] = r;
        px[i + 1] = g;
        px[i + 2] = b;
    }

    void rect(int x1, int y1, int x2, int y2, unsigned char r, unsigned char g,
              unsigned char b) {
        for (int x = x1; x <= x2; ++x) {
            set(x, y1, r, g, b);
            set(x, y2, r, g, b);
        }
        for (int y = y1; y <= y2; ++y) {
            set(x1, y, r, g, b);
            set(x2, y, r, g, b);
        }
    }
};

} // namespace

void dump_map_image(const simmap::SimilarityMap& m,
                    const std::vector<align::SegmentMatch>& gt_boxes,
                    const std::vector<align::SegmentMatch>& pred_boxes,
                    const std::string& path) {
    simmap::SimilarityMap d = m.densified();
    Image img;
    img.w = d.cols;
    img.h = d.rows;
    img.px.resize(static_cast<std::size_t>(img.w) * img.h * 3);
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            double v = std::clamp(
                static_cast<double>(d.values[static_cast<std::size_t>(y) * d.cols + x]), 0.0, 1.0);
            unsigned char g = static_cast<unsigned char>(std::lround(v * 255.0));
            img.set(x, y, g, g, g);
        }
    }
    auto draw = [&](const align::SegmentMatch& s, unsigned char r, unsigned char g,
                    unsigned char b) {
        int y1 = std::clamp(static_cast<int>(std::floor(s.q_start * d.row_fps)), 0, img.h - 1);
        int y2 = std::clamp(static_cast<int>(std::ceil(s.q_end * d.row_fps)) - 1, 0, img.h - 1);
        int x1 = std::clamp(static_cast<int>(std::floor(s.r_start * d.col_fps)), 0, img.w - 1);
        int x2 = std::clamp(static_cast<int>(std::ceil(s.r_end * d.col_fps)) - 1, 0, img.w - 1);
        img.rect(x1, y1, x2, y2, r, g, b);
    };
    for (const auto& s : gt_boxes) draw(s, 0, 255, 0);
    for (const auto& s : pred_boxes) draw(s, 255, 0, 0);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.px.data()),
             static_cast<std::streamsize>(img.px.size()));
    if (!os) throw DataError("write failed for '" + path + "'");
}

std::string report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    j["macro_f1"] = r.macro_f1;
    j["map"] = r.mAP;
    j["best_threshold"] = r.best_threshold;
    j["compression_ratio"] = r.compression_ratio;
    j["skipped_queries"] = r.skipped_queries;
    nlohmann::json pr = nlohmann::json::array();
    for (const auto& [p, rec] : r.pr_points) pr.push_back({p, rec});
    j["pr_points"] = pr;
    nlohmann::json pairs = nlohmann::json::object();
    for (const auto& [key, pb] : r.per_pair) {
        pairs[key.first + "|" + key.second] = {{"pred_cells", pb.pred_cells},
                                               {"correct_cells", pb.correct_cells},
                                               {"gt_cells", pb.gt_cells},
                                               {"covered_cells", pb.covered_cells},
                                               {"f1", pb.f1}};
    }
    j["per_pair"] = pairs;
    return j.dump(2);
}

} // namespace segsim::eval
