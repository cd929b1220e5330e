#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "segsim/align.hpp"
#include "segsim/simmap.hpp"

namespace segsim::spd {

// Channel-major planar tensor, v[(c*h + y)*w + x], doubles throughout.
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    static Tensor zeros(int c, int h, int w) {
        Tensor t;
        t.c = c;
        t.h = h;
        t.w = w;
        t.v.assign(static_cast<std::size_t>(c) * h * w, 0.0);
        return t;
    }
    double& at(int ci, int y, int x) {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    double at(int ci, int y, int x) const {
        return v[(static_cast<std::size_t>(ci) * h + y) * w + x];
    }
    double* plane(int ci) { return v.data() + static_cast<std::size_t>(ci) * h * w; }
    const double* plane(int ci) const { return v.data() + static_cast<std::size_t>(ci) * h * w; }
};

// 3 conv+relu+maxpool stages (stride 2 each) and a 1x1 head with 5 outputs
// per cell: objectness logit + (tx, ty, tw, th). Total stride 8.
struct DetectorConfig {
    int input_size = 128;
    std::array<int, 4> channels{1, 8, 16, 16};
    double giou_weight = 1.0; // balance between BCE and GIoU terms

    static constexpr int kStride = 8;
    static constexpr int kHeadOutputs = 5;
    int grid() const { return input_size / kStride; }
    void validate() const;
};

struct Conv {
    int in_c = 0, out_c = 0, k = 3;
    std::vector<double> w; // out_c * in_c * k * k
    std::vector<double> b; // out_c

    static Conv shaped(int in_c, int out_c, int k);
    double& wat(int oc, int ic, int ky, int kx) {
        return w[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
    }
    double wat(int oc, int ic, int ky, int kx) const {
        return w[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
    }
};

struct DetectorParams {
    DetectorConfig cfg;
    Conv s1, s2, s3, head;

    static DetectorParams he_init(const DetectorConfig& cfg, std::uint64_t seed);
    static DetectorParams zeros_like(const DetectorParams& other);
};

std::size_t param_count(const DetectorParams& p);
std::vector<double*> param_ptrs(DetectorParams& p);

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double area() const;
};

double box_iou(const Box& a, const Box& b);

// Generalized IoU: IoU - (|C| - |A u B|) / |C| with C the smallest enclosing
// box. Zero-area boxes contribute area 0; the result stays defined.
double giou(const Box& a, const Box& b);
std::array<double, 4> giou_grad_a(const Box& a, const Box& b);

struct Detection {
    Box box; // x = ref axis (cols), y = query axis (rows), map-cell coords
    double score = 0.0;
};

struct ForwardCache {
    Tensor x0, z1, p1, z2, p2, z3, p3, out;
    std::vector<int> am1, am2, am3; // maxpool argmax, flat input offsets
};

// Inference pass; fill `cache` when a backward pass will follow. The tile must
// be 1 x G x G.
Tensor forward(const DetectorParams& p, const Tensor& tile, ForwardCache* cache = nullptr);

// Backward from d(out); accumulates parameter grads into `grads` and,
// optionally, the gradient w.r.t. the input tile (used by the joint network).
void backward(const DetectorParams& p, const ForwardCache& cache, const Tensor& d_out,
              DetectorParams& grads, Tensor* d_input = nullptr);

// Anchor-free decoding for cell (gx, gy) at stride S:
//   center = ((gx + 0.5 + tanh(tx)) * S, (gy + 0.5 + tanh(ty)) * S),
//   size   = (S * exp(tw), S * exp(th)), clamped to the tile.
Detection decode_cell(const Tensor& preds, int gy, int gx, const DetectorConfig& cfg);
std::vector<Detection> decode(const Tensor& preds, double col_offset, double row_offset,
                              const DetectorConfig& cfg, double score_threshold = 0.0);

// Inverse of decode_cell for a box representable at the given cell.
std::array<double, 4> encode_cell(const Box& box, int gy, int gx, const DetectorConfig& cfg);

struct TrainingStats {
    double l_bce = 0.0;
    double l_giou = 0.0;
    double l_spd = 0.0;
    double l_ske = 0.0;
    double l_ssan = 0.0;
};

// BCE over all cells (positives are cells whose center lies inside a gt box,
// assigned to the gt with the nearest center) plus mean (1 - giou) over
// positive cells. gt boxes are in tile coordinates.
TrainingStats spd_loss(const Tensor& preds, const std::vector<Box>& gt,
                       const DetectorConfig& cfg);
TrainingStats spd_loss_grad(const Tensor& preds, const std::vector<Box>& gt,
                            const DetectorConfig& cfg, Tensor& d_preds);

struct TrainSample {
    Tensor tile;
    std::vector<Box> gt;
};

struct TrainHyper {
    double lr = 0.01;
    double momentum = 0.937; // Nesterov
    double weight_decay = 0.0005;
    int epochs = 10;
    int batch = 8;
    std::uint64_t seed = 1;
};

struct TrainLogEntry {
    int step = 0;
    double l_spd = 0.0, l_bce = 0.0, l_giou = 0.0;
};

// SGD with Nesterov momentum; deterministic given seed. Throws
// TrainingDiverged when the loss goes non-finite.
DetectorParams train_spd(const std::vector<TrainSample>& data, const DetectorConfig& cfg,
                         const TrainHyper& hyper, std::vector<TrainLogEntry>* log = nullptr);

// Continues training from existing params (same update rule).
void train_spd_inplace(DetectorParams& params, const std::vector<TrainSample>& data,
                       const TrainHyper& hyper, std::vector<TrainLogEntry>* log = nullptr);

// Max relative error (unit-floored) between analytic and central-difference
// gradients of l_spd over every detector parameter.
double grad_check(const DetectorParams& params, const TrainSample& sample, double h = 1e-5);

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold = 0.5);

struct DetectOptions {
    double score_threshold = 0.1;
    double nms_iou = 0.5;
    bool clamp_negative = true;
};

struct PairDetections {
    std::vector<align::SegmentMatch> matches;
    double video_similarity = 0.0;
    std::vector<Detection> cells; // post-NMS detections in map-cell coords
};

// Tiles the map, runs the detector, merges detections with global NMS and
// converts boxes to seconds. When `backmap` is given (drop-mode keyframe
// submatrix), cell coordinates are projected back to original frames first.
PairDetections detect_pair(const DetectorParams& p, const simmap::SimilarityMap& m,
                           const DetectOptions& opt,
                           const simmap::KeyframeSubmatrix* backmap = nullptr);

// SGDM model file: magic, version u32 = 1, config block, f32 tensors.
void save_sgdm(const DetectorParams& p, const std::string& path);
DetectorParams load_sgdm(const std::string& path);
void write_detector_block(std::ostream& os, const DetectorParams& p);
DetectorParams read_detector_block(std::istream& is);

} // namespace segsim::spd
