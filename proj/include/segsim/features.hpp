#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "segsim/errors.hpp"

namespace segsim::features {

// Ordered list of L2-normalized frame embeddings for one video, sampled on a
// uniform basis-frame grid. Timestamp of frame i is i / basis_fps.
struct FeatureSequence {
    std::string video_id;
    float basis_fps = 8.0f;
    int dim = 0;
    std::vector<float> data; // frame_count * dim, row-major

    int frame_count() const {
        return dim > 0 ? static_cast<int>(data.size()) / dim : 0;
    }
    std::span<const float> frame(int i) const {
        return {data.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
    std::span<float> frame(int i) {
        return {data.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
    }
    double timestamp(int i) const { return static_cast<double>(i) / basis_fps; }

    // Normalizes each frame to unit L2 norm. Frames already within 1e-6 of
    // unit norm are left untouched so re-ingest round-trips bitwise. Throws
    // DataError on a zero vector, naming the frame.
    void l2_normalize();
};

struct FeatureStore {
    std::map<std::string, FeatureSequence> sequences; // keyed by video_id

    std::size_t total_frames() const;
    bool contains(const std::string& id) const { return sequences.count(id) != 0; }
    const FeatureSequence& at(const std::string& id) const;
    void add(FeatureSequence seq); // throws DataError on duplicate id or dim mismatch
    int dim() const { return sequences.empty() ? 0 : sequences.begin()->second.dim; }
};

// Cosine similarity with strict left-to-right accumulation, so the result is
// exactly symmetric and deterministic. Throws DataError on dim mismatch or a
// zero vector.
double cosine_sim(std::span<const float> a, std::span<const float> b);

// Raw dot product, left-to-right. No normalization, no zero check.
double dot(std::span<const float> a, std::span<const float> b);

// SGAF feature file (little-endian): magic "SGAF", version u32 = 1, then
// repeated records: video_id (u16 length + UTF-8 bytes), basis_fps f32,
// dim u32, frame_count u32, frame_count x dim f32 row-major.
FeatureStore ingest(const std::string& path);
void write_sgaf(const FeatureStore& store, const std::string& path);

} // namespace segsim::features
