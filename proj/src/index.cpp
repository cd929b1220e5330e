#include "segsim/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "segsim/binio.hpp"
#include "segsim/rng.hpp"

namespace segsim::index {

bool hit_less(const Hit& a, const Hit& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.ref.video_id != b.ref.video_id) return a.ref.video_id < b.ref.video_id;
    return a.ref.frame_index < b.ref.frame_index;
}

FlatIndex build_flat(const features::FeatureStore& store, const KeyframeSets& keys) {
    FlatIndex idx;
    idx.dim = store.dim();
    for (const auto& [vid, frames] : keys) {
        const features::FeatureSequence& seq = store.at(vid); // throws on unknown id
        if (frames.empty()) throw DataError("empty keyframe set for video '" + vid + "'");
        std::vector<int> sorted = frames;
        std::sort(sorted.begin(), sorted.end());
        for (int f : sorted) {
            if (f < 0 || f >= seq.frame_count())
                throw DataError("keyframe index out of range for video '" + vid + "'");
            auto v = seq.frame(f);
            idx.vectors.insert(idx.vectors.end(), v.begin(), v.end());
            idx.refs.push_back({vid, f, seq.timestamp(f)});
            idx.fps_by_row.push_back(seq.basis_fps);
        }
    }
    return idx;
}

namespace {

// Keeps the topn best hits; final order follows hit_less exactly.
void topn_select(std::vector<Hit>& hits, int topn) {
    if (static_cast<int>(hits.size()) > topn) {
        std::nth_element(hits.begin(), hits.begin() + topn, hits.end(), hit_less);
        hits.resize(topn);
    }
    std::sort(hits.begin(), hits.end(), hit_less);
}

} // namespace

std::vector<Hit> search_flat(const FlatIndex& index, std::span<const float> q, int topn) {
    if (index.rows() == 0) throw DataError("search on empty index");
    if (static_cast<int>(q.size()) != index.dim) throw DataError("query dim mismatch");
    std::vector<Hit> hits;
    hits.reserve(index.rows());
    for (std::size_t r = 0; r < index.rows(); ++r) {
        double s = features::dot(q, index.row(r));
        hits.push_back({index.refs[r], static_cast<float>(s)});
    }
    topn_select(hits, topn);
    return hits;
}

IVFIndex build_ivf(const features::FeatureStore& store, const KeyframeSets& keys, int k_c,
                   int iters, std::uint64_t seed) {
    IVFIndex idx;
    idx.base = build_flat(store, keys);
    const int dim = idx.base.dim;
    const int rows = static_cast<int>(idx.base.rows());
    if (k_c < 1 || k_c > rows)
        throw ConfigError("k_c must be in [1, rows]; got " + std::to_string(k_c) + " for " +
                          std::to_string(rows) + " rows");
    idx.k_c = k_c;

    // Farthest-point init: seed picks the first centroid, the rest maximize
    // distance to their nearest chosen centroid (deterministic thereafter).
    Rng rng(seed);
    std::vector<int> chosen;
    chosen.push_back(rng.uniform_int(0, rows - 1));
    std::vector<double> best_sim(rows, -2.0);
    auto update_best = [&](int center_row) {
        for (int r = 0; r < rows; ++r) {
            double s = features::dot(idx.base.row(r), idx.base.row(center_row));
            best_sim[r] = std::max(best_sim[r], s);
        }
    };
    update_best(chosen[0]);
    while (static_cast<int>(chosen.size()) < k_c) {
        int far = -1;
        double far_sim = 2.0;
        for (int r = 0; r < rows; ++r) {
            if (best_sim[r] < far_sim) {
                far_sim = best_sim[r];
                far = r;
            }
        }
        chosen.push_back(far);
        update_best(far);
    }

    std::vector<double> cent(static_cast<std::size_t>(k_c) * dim);
    for (int c = 0; c < k_c; ++c) {
        auto v = idx.base.row(chosen[c]);
        for (int d = 0; d < dim; ++d) cent[static_cast<std::size_t>(c) * dim + d] = v[d];
    }

    std::vector<int> assign(rows, 0);
    for (int it = 0; it < iters; ++it) {
        // Assign to the nearest centroid by cosine; ties pick the lower index.
        for (int r = 0; r < rows; ++r) {
            auto v = idx.base.row(r);
            int best = 0;
            double best_s = -2.0;
            for (int c = 0; c < k_c; ++c) {
                double s = 0.0;
                const double* cd = cent.data() + static_cast<std::size_t>(c) * dim;
                for (int d = 0; d < dim; ++d) s += cd[d] * v[d];
                if (s > best_s) {
                    best_s = s;
                    best = c;
                }
            }
            assign[r] = best;
        }
        // Spherical update: centroid = normalized mean of its members.
        std::vector<double> sum(static_cast<std::size_t>(k_c) * dim, 0.0);
        std::vector<int> count(k_c, 0);
        for (int r = 0; r < rows; ++r) {
            auto v = idx.base.row(r);
            double* s = sum.data() + static_cast<std::size_t>(assign[r]) * dim;
            for (int d = 0; d < dim; ++d) s[d] += v[d];
            ++count[assign[r]];
        }
        for (int c = 0; c < k_c; ++c) {
            if (count[c] == 0) continue; // keep the previous centroid
            double* s = sum.data() + static_cast<std::size_t>(c) * dim;
            double norm = 0.0;
            for (int d = 0; d < dim; ++d) norm += s[d] * s[d];
            norm = std::sqrt(norm);
            if (norm < 1e-12) continue;
            double* cd = cent.data() + static_cast<std::size_t>(c) * dim;
            for (int d = 0; d < dim; ++d) cd[d] = s[d] / norm;
        }
    }

    // Final assignment defines the posting lists.
    idx.postings.assign(k_c, {});
    for (int r = 0; r < rows; ++r) {
        auto v = idx.base.row(r);
        int best = 0;
        double best_s = -2.0;
        for (int c = 0; c < k_c; ++c) {
            double s = 0.0;
            const double* cd = cent.data() + static_cast<std::size_t>(c) * dim;
            for (int d = 0; d < dim; ++d) s += cd[d] * v[d];
            if (s > best_s) {
                best_s = s;
                best = c;
            }
        }
        idx.postings[best].push_back(static_cast<std::uint32_t>(r));
    }
    idx.centroids.resize(cent.size());
    for (std::size_t i = 0; i < cent.size(); ++i)
        idx.centroids[i] = static_cast<float>(cent[i]);
    idx.trained = true;
    return idx;
}

std::vector<Hit> search_ivf(const IVFIndex& index, std::span<const float> q, int topn,
                            int nprobe) {
    if (!index.trained) throw DataError("search on untrained IVF index");
    if (nprobe < 1 || nprobe > index.k_c)
        throw ConfigError("nprobe must be in [1, k_c]");
    if (static_cast<int>(q.size()) != index.base.dim) throw DataError("query dim mismatch");

    const int dim = index.base.dim;
    std::vector<std::pair<double, int>> ranked(index.k_c);
    for (int c = 0; c < index.k_c; ++c) {
        double s = 0.0;
        const float* cd = index.centroids.data() + static_cast<std::size_t>(c) * dim;
        for (int d = 0; d < dim; ++d) s += static_cast<double>(cd[d]) * q[d];
        ranked[c] = {s, c};
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });

    std::vector<Hit> hits;
    for (int p = 0; p < nprobe; ++p) {
        for (std::uint32_t r : index.postings[ranked[p].second]) {
            double s = features::dot(q, index.base.row(r));
            hits.push_back({index.base.refs[r], static_cast<float>(s)});
        }
    }
    if (hits.empty()) return hits;
    topn_select(hits, topn);
    return hits;
}

namespace {

template <typename SearchFn>
std::vector<CandidateGroup> group_hits(const QueryPlan& plan,
                                       const features::FeatureStore& store,
                                       const GroupOptions& opt, SearchFn&& search) {
    if (plan.keyframe_indices.empty()) throw DataError("query plan has no keyframes");
    const features::FeatureSequence& q = store.at(plan.query_video_id);
    std::map<std::string, CandidateGroup> groups;
    for (int kf : plan.keyframe_indices) {
        if (kf < 0 || kf >= q.frame_count())
            throw DataError("plan keyframe out of range for '" + plan.query_video_id + "'");
        std::vector<Hit> hits = search(q.frame(kf), plan.topn);
        for (Hit& h : hits) {
            if (h.score < opt.score_floor) continue;
            if (!opt.allow_self && h.ref.video_id == plan.query_video_id) continue;
            auto [it, fresh] = groups.try_emplace(h.ref.video_id);
            if (fresh) it->second.ref_video_id = h.ref.video_id;
            it->second.hits.emplace_back(kf, std::move(h));
        }
    }
    std::vector<CandidateGroup> out;
    out.reserve(groups.size());
    for (auto& [id, g] : groups) out.push_back(std::move(g));
    return out;
}

} // namespace

std::vector<CandidateGroup> plan_and_group(const QueryPlan& plan,
                                           const features::FeatureStore& store,
                                           const FlatIndex& index, const GroupOptions& opt) {
    return group_hits(plan, store, opt, [&](std::span<const float> q, int topn) {
        return search_flat(index, q, topn);
    });
}

std::vector<CandidateGroup> plan_and_group(const QueryPlan& plan,
                                           const features::FeatureStore& store,
                                           const IVFIndex& index, int nprobe,
                                           const GroupOptions& opt) {
    return group_hits(plan, store, opt, [&](std::span<const float> q, int topn) {
        return search_ivf(index, q, topn, nprobe);
    });
}

simmap::SimilarityMap sparse_map_from_group(const CandidateGroup& group, const QueryPlan&,
                                            const features::FeatureSequence& query,
                                            const features::FeatureSequence& ref) {
    if (group.hits.empty()) throw DataError("sparse map from empty group");
    simmap::SimilarityMap m;
    m.query_id = query.video_id;
    m.ref_id = ref.video_id;
    m.rows = query.frame_count();
    m.cols = ref.frame_count();
    m.row_fps = query.basis_fps;
    m.col_fps = ref.basis_fps;
    m.is_sparse = true;
    std::map<std::pair<int, int>, float> cells;
    for (const auto& [qf, hit] : group.hits) {
        auto key = std::make_pair(qf, hit.ref.frame_index);
        auto it = cells.find(key);
        if (it == cells.end())
            cells.emplace(key, hit.score);
        else
            it->second = std::max(it->second, hit.score);
    }
    m.cells.reserve(cells.size());
    for (const auto& [key, v] : cells) m.cells.push_back({key.first, key.second, v});
    return m;
}

static constexpr char kMagic[4] = {'S', 'G', 'I', 'X'};

namespace {

void write_base(std::ostream& os, const FlatIndex& idx, std::uint32_t kind) {
    os.write(kMagic, 4);
    binio::write_u32(os, 1);
    binio::write_u32(os, kind);
    binio::write_u32(os, static_cast<std::uint32_t>(idx.dim));
    binio::write_u64(os, idx.rows());
    for (std::size_t r = 0; r < idx.rows(); ++r) {
        binio::write_str(os, idx.refs[r].video_id);
        binio::write_u32(os, static_cast<std::uint32_t>(idx.refs[r].frame_index));
        binio::write_f64(os, idx.refs[r].timestamp);
        binio::write_f32(os, idx.fps_by_row[r]);
    }
    os.write(reinterpret_cast<const char*>(idx.vectors.data()),
             static_cast<std::streamsize>(idx.vectors.size() * sizeof(float)));
}

FlatIndex read_base(std::istream& is, int dim, std::uint64_t rows) {
    FlatIndex idx;
    idx.dim = dim;
    idx.refs.resize(rows);
    idx.fps_by_row.resize(rows);
    for (std::uint64_t r = 0; r < rows; ++r) {
        idx.refs[r].video_id = binio::read_str(is, "ref video_id");
        idx.refs[r].frame_index = static_cast<int>(binio::read_u32(is, "ref frame_index"));
        idx.refs[r].timestamp = binio::read_f64(is, "ref timestamp");
        idx.fps_by_row[r] = binio::read_f32(is, "ref fps");
    }
    idx.vectors.resize(rows * dim);
    if (!idx.vectors.empty())
        binio::read_exact(is, idx.vectors.data(), idx.vectors.size() * sizeof(float), "vectors");
    return idx;
}

} // namespace

void save_flat(const FlatIndex& index, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_base(os, index, 0);
    if (!os) throw DataError("write failed for '" + path + "'");
}

void save_ivf(const IVFIndex& index, const std::string& path) {
    if (!index.trained) throw DataError("cannot save untrained IVF index");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_base(os, index.base, 1);
    binio::write_u32(os, static_cast<std::uint32_t>(index.k_c));
    os.write(reinterpret_cast<const char*>(index.centroids.data()),
             static_cast<std::streamsize>(index.centroids.size() * sizeof(float)));
    for (const auto& list : index.postings) {
        binio::write_u64(os, list.size());
        os.write(reinterpret_cast<const char*>(list.data()),
                 static_cast<std::streamsize>(list.size() * sizeof(std::uint32_t)));
    }
    if (!os) throw DataError("write failed for '" + path + "'");
}

LoadedIndex load_index(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open index file '" + path + "'");
    char magic[4];
    binio::read_exact(is, magic, 4, "SGIX magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad magic in '" + path + "': not an SGIX file");
    std::uint32_t version = binio::read_u32(is, "SGIX version");
    if (version != 1) throw DataError("unsupported SGIX version");
    LoadedIndex out;
    out.kind = static_cast<int>(binio::read_u32(is, "kind"));
    int dim = static_cast<int>(binio::read_u32(is, "dim"));
    std::uint64_t rows = binio::read_u64(is, "rows");
    if (out.kind == 0) {
        out.flat = read_base(is, dim, rows);
    } else if (out.kind == 1) {
        out.ivf.base = read_base(is, dim, rows);
        out.ivf.k_c = static_cast<int>(binio::read_u32(is, "k_c"));
        out.ivf.centroids.resize(static_cast<std::size_t>(out.ivf.k_c) * dim);
        binio::read_exact(is, out.ivf.centroids.data(),
                          out.ivf.centroids.size() * sizeof(float), "centroids");
        out.ivf.postings.resize(out.ivf.k_c);
        for (auto& list : out.ivf.postings) {
            std::uint64_t n = binio::read_u64(is, "posting size");
            list.resize(n);
            if (n > 0)
                binio::read_exact(is, list.data(), n * sizeof(std::uint32_t), "posting list");
        }
        out.ivf.trained = true;
    } else {
        throw DataError("unknown index kind " + std::to_string(out.kind));
    }
    return out;
}

} // namespace segsim::index
