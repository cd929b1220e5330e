#include "segsim/features.hpp"

#include <cmath>
#include <fstream>

#include "segsim/binio.hpp"

namespace segsim::features {

void FeatureSequence::l2_normalize() {
    const int n = frame_count();
    for (int i = 0; i < n; ++i) {
        auto f = frame(i);
        double sq = 0.0;
        for (float x : f) sq += static_cast<double>(x) * x;
        double norm = std::sqrt(sq);
        if (norm < 1e-12)
            throw DataError("zero-norm vector in video '" + video_id + "' at frame " +
                            std::to_string(i));
        if (std::fabs(norm - 1.0) <= 1e-6) continue; // already normalized
        for (float& x : f) x = static_cast<float>(x / norm);
    }
}

std::size_t FeatureStore::total_frames() const {
    std::size_t n = 0;
    for (const auto& [id, seq] : sequences) n += static_cast<std::size_t>(seq.frame_count());
    return n;
}

const FeatureSequence& FeatureStore::at(const std::string& id) const {
    auto it = sequences.find(id);
    if (it == sequences.end()) throw DataError("unknown video_id '" + id + "'");
    return it->second;
}

void FeatureStore::add(FeatureSequence seq) {
    if (sequences.count(seq.video_id))
        throw DataError("duplicate video_id '" + seq.video_id + "'");
    if (!sequences.empty() && seq.dim != dim())
        throw DataError("dim mismatch: video '" + seq.video_id + "' has dim " +
                        std::to_string(seq.dim) + ", store has dim " + std::to_string(dim()));
    sequences.emplace(seq.video_id, std::move(seq));
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size())
        throw DataError("dim mismatch: " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

double cosine_sim(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size())
        throw DataError("dim mismatch: " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    if (na < 1e-24 || nb < 1e-24) throw DataError("cosine_sim on zero vector");
    return num / (std::sqrt(na) * std::sqrt(nb));
}

static constexpr char kMagic[4] = {'S', 'G', 'A', 'F'};

FeatureStore ingest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open feature file '" + path + "'");

    char magic[4];
    binio::read_exact(is, magic, 4, "SGAF magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad magic in '" + path + "': not an SGAF file");
    std::uint32_t version = binio::read_u32(is, "SGAF version");
    if (version != 1)
        throw DataError("unsupported SGAF version " + std::to_string(version));

    FeatureStore store;
    while (true) {
        is.peek();
        if (is.eof()) break;
        FeatureSequence seq;
        seq.video_id = binio::read_str(is, "video_id");
        float fps = binio::read_f32(is, "basis_fps");
        if (!(fps > 0.0f))
            throw DataError("non-positive basis_fps for video '" + seq.video_id + "'");
        seq.basis_fps = fps;
        std::uint32_t dim = binio::read_u32(is, "dim");
        std::uint32_t frames = binio::read_u32(is, "frame_count");
        if (dim == 0) throw DataError("zero dim for video '" + seq.video_id + "'");
        seq.dim = static_cast<int>(dim);
        seq.data.resize(static_cast<std::size_t>(dim) * frames);
        if (!seq.data.empty())
            binio::read_exact(is, seq.data.data(), seq.data.size() * sizeof(float), "vectors");
        seq.l2_normalize();
        store.add(std::move(seq));
    }
    return store;
}

void write_sgaf(const FeatureStore& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    binio::write_u32(os, 1);
    for (const auto& [id, seq] : store.sequences) {
        binio::write_str(os, id);
        binio::write_f32(os, seq.basis_fps);
        binio::write_u32(os, static_cast<std::uint32_t>(seq.dim));
        binio::write_u32(os, static_cast<std::uint32_t>(seq.frame_count()));
        os.write(reinterpret_cast<const char*>(seq.data.data()),
                 static_cast<std::streamsize>(seq.data.size() * sizeof(float)));
    }
    if (!os) throw DataError("write failed for '" + path + "'");
}

} // namespace segsim::features
