#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "segsim/features.hpp"
#include "segsim/simmap.hpp"

namespace segsim::index {

struct FrameRef {
    std::string video_id;
    int frame_index = 0;
    double timestamp = 0.0;
};

struct Hit {
    FrameRef ref;
    float score = 0.0f;
};

// Hits sort by score descending, ties by (video_id, frame_index) ascending.
bool hit_less(const Hit& a, const Hit& b);

// Exact index over keyframe features. Rows are laid out deterministically:
// videos by id ascending, frames ascending within a video.
struct FlatIndex {
    int dim = 0;
    std::vector<float> vectors; // rows * dim
    std::vector<FrameRef> refs;
    std::vector<float> fps_by_row; // basis fps of the owning video

    std::size_t rows() const { return refs.size(); }
    std::span<const float> row(std::size_t r) const {
        return {vectors.data() + r * dim, static_cast<std::size_t>(dim)};
    }
};

// Coarse inverted-file index: spherical k-means centroids with complete
// posting lists. No sub-quantization; rows keep their exact vectors.
struct IVFIndex {
    FlatIndex base;
    int k_c = 0;
    std::vector<float> centroids; // k_c * dim
    std::vector<std::vector<std::uint32_t>> postings;
    bool trained = false;
};

using KeyframeSets = std::map<std::string, std::vector<int>>;

FlatIndex build_flat(const features::FeatureStore& store, const KeyframeSets& keys);

std::vector<Hit> search_flat(const FlatIndex& index, std::span<const float> q, int topn);

IVFIndex build_ivf(const features::FeatureStore& store, const KeyframeSets& keys, int k_c,
                   int iters, std::uint64_t seed);

std::vector<Hit> search_ivf(const IVFIndex& index, std::span<const float> q, int topn,
                            int nprobe);

struct QueryPlan {
    std::string query_video_id;
    std::vector<int> keyframe_indices;
    int topn = 50;
};

struct CandidateGroup {
    std::string ref_video_id;
    std::vector<std::pair<int, Hit>> hits; // (query frame index, hit)
};

struct GroupOptions {
    bool allow_self = false;
    float score_floor = 0.5f; // hits below are dropped before grouping
};

// Searches every plan keyframe and buckets hits by reference video; groups
// come back sorted by ref_video_id. Group count is bounded by sum(M_i).
std::vector<CandidateGroup> plan_and_group(const QueryPlan& plan,
                                           const features::FeatureStore& store,
                                           const FlatIndex& index, const GroupOptions& opt);
std::vector<CandidateGroup> plan_and_group(const QueryPlan& plan,
                                           const features::FeatureStore& store,
                                           const IVFIndex& index, int nprobe,
                                           const GroupOptions& opt);

// Merges one group's hits into a sparse map; duplicate cells keep the max.
simmap::SimilarityMap sparse_map_from_group(const CandidateGroup& group, const QueryPlan& plan,
                                            const features::FeatureSequence& query,
                                            const features::FeatureSequence& ref);

// SGIX file: magic "SGIX", version u32 = 1, kind u32 (0 flat, 1 ivf), dim u32,
// row count u64, refs table (video_id, frame_index u32, timestamp f64), raw
// vectors f32; IVF adds k_c u32, centroids f32 and posting lists.
void save_flat(const FlatIndex& index, const std::string& path);
void save_ivf(const IVFIndex& index, const std::string& path);

struct LoadedIndex {
    int kind = 0; // 0 flat, 1 ivf
    FlatIndex flat;
    IVFIndex ivf;
};

LoadedIndex load_index(const std::string& path);

} // namespace segsim::index
