#include "segsim/spd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "segsim/binio.hpp"
#include "segsim/errors.hpp"
#include "segsim/rng.hpp"

namespace segsim::spd {

void DetectorConfig::validate() const {
    if (input_size <= 0 || input_size % kStride != 0)
        throw ConfigError("detector input size must be a positive multiple of " +
                          std::to_string(kStride));
    if (channels[0] != 1) throw ConfigError("detector input must have 1 channel");
    for (int c : channels)
        if (c <= 0) throw ConfigError("detector channels must be positive");
}

Conv Conv::shaped(int in_c, int out_c, int k) {
    Conv c;
    c.in_c = in_c;
    c.out_c = out_c;
    c.k = k;
    c.w.assign(static_cast<std::size_t>(out_c) * in_c * k * k, 0.0);
    c.b.assign(out_c, 0.0);
    return c;
}

DetectorParams DetectorParams::he_init(const DetectorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DetectorParams p;
    p.cfg = cfg;
    p.s1 = Conv::shaped(cfg.channels[0], cfg.channels[1], 3);
    p.s2 = Conv::shaped(cfg.channels[1], cfg.channels[2], 3);
    p.s3 = Conv::shaped(cfg.channels[2], cfg.channels[3], 3);
    p.head = Conv::shaped(cfg.channels[3], DetectorConfig::kHeadOutputs, 1);
    Rng rng(seed);
    for (Conv* c : {&p.s1, &p.s2, &p.s3, &p.head}) {
        double limit = std::sqrt(6.0 / (static_cast<double>(c->in_c) * c->k * c->k));
        for (double& w : c->w) w = rng.uniform(-limit, limit);
    }
    return p;
}

DetectorParams DetectorParams::zeros_like(const DetectorParams& other) {
    DetectorParams p;
    p.cfg = other.cfg;
    p.s1 = Conv::shaped(other.s1.in_c, other.s1.out_c, other.s1.k);
    p.s2 = Conv::shaped(other.s2.in_c, other.s2.out_c, other.s2.k);
    p.s3 = Conv::shaped(other.s3.in_c, other.s3.out_c, other.s3.k);
    p.head = Conv::shaped(other.head.in_c, other.head.out_c, other.head.k);
    return p;
}

std::size_t param_count(const DetectorParams& p) {
    std::size_t n = 0;
    for (const Conv* c : {&p.s1, &p.s2, &p.s3, &p.head}) n += c->w.size() + c->b.size();
    return n;
}

std::vector<double*> param_ptrs(DetectorParams& p) {
    std::vector<double*> out;
    out.reserve(param_count(p));
    for (Conv* c : {&p.s1, &p.s2, &p.s3, &p.head}) {
        for (double& w : c->w) out.push_back(&w);
        for (double& b : c->b) out.push_back(&b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// layers

namespace {

void conv3x3_forward(const Conv& c, const Tensor& in, Tensor& out) {
    const int h = in.h, w = in.w;
    for (int oc = 0; oc < c.out_c; ++oc) {
        double* dst = out.plane(oc);
        std::fill(dst, dst + static_cast<std::size_t>(h) * w, c.b[oc]);
    }
    for (int oc = 0; oc < c.out_c; ++oc) {
        double* dst = out.plane(oc);
        for (int ic = 0; ic < c.in_c; ++ic) {
            const double* src = in.plane(ic);
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const double wv = c.wat(oc, ic, ky, kx);
                    if (wv == 0.0) continue;
                    const int dy = ky - 1, dx = kx - 1;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int y = y0; y < y1; ++y) {
                        const double* s = src + static_cast<std::size_t>(y + dy) * w + dx;
                        double* d = dst + static_cast<std::size_t>(y) * w;
                        for (int x = x0; x < x1; ++x) d[x] += wv * s[x];
                    }
                }
            }
        }
    }
}

// d_out is already gated by the activation; produces weight/bias grads and,
// if requested, the input gradient (accumulated, caller zeroes).
void conv3x3_backward(const Conv& c, const Tensor& in, const Tensor& d_out, Conv& d_c,
                      Tensor* d_in) {
    const int h = in.h, w = in.w;
    for (int oc = 0; oc < c.out_c; ++oc) {
        const double* dz = d_out.plane(oc);
        double acc = 0.0;
        for (std::size_t i = 0; i < static_cast<std::size_t>(h) * w; ++i) acc += dz[i];
        d_c.b[oc] += acc;
        for (int ic = 0; ic < c.in_c; ++ic) {
            const double* src = in.plane(ic);
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    const int dy = ky - 1, dx = kx - 1;
                    const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    double wg = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* s = src + static_cast<std::size_t>(y + dy) * w + dx;
                        const double* d = dz + static_cast<std::size_t>(y) * w;
                        for (int x = x0; x < x1; ++x) wg += d[x] * s[x];
                    }
                    d_c.wat(oc, ic, ky, kx) += wg;
                    if (d_in) {
                        const double wv = c.wat(oc, ic, ky, kx);
                        if (wv == 0.0) continue;
                        double* di = d_in->plane(ic);
                        for (int y = y0; y < y1; ++y) {
                            double* t = di + static_cast<std::size_t>(y + dy) * w + dx;
                            const double* d = dz + static_cast<std::size_t>(y) * w;
                            for (int x = x0; x < x1; ++x) t[x] += wv * d[x];
                        }
                    }
                }
            }
        }
    }
}

// ReLU applied on top of the pre-activation z, then 2x2/2 max pooling.
// argmax stores the flat offset (within the plane) of each pooled winner.
void relu_maxpool_forward(const Tensor& z, Tensor& out, std::vector<int>& argmax) {
    const int c = z.c, h = z.h, w = z.w;
    const int oh = h / 2, ow = w / 2;
    argmax.assign(static_cast<std::size_t>(c) * oh * ow, 0);
    for (int ci = 0; ci < c; ++ci) {
        const double* src = z.plane(ci);
        double* dst = out.plane(ci);
        int* am = argmax.data() + static_cast<std::size_t>(ci) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int x = 0; x < ow; ++x) {
                int base = 2 * y * w + 2 * x;
                int best = base;
                double bv = src[base];
                for (int q = 0; q < 4; ++q) {
                    int off = base + (q >> 1) * w + (q & 1);
                    if (src[off] > bv) {
                        bv = src[off];
                        best = off;
                    }
                }
                dst[y * ow + x] = bv > 0.0 ? bv : 0.0;
                am[y * ow + x] = best;
            }
        }
    }
}

// Backward through pool+relu: gradient goes to the argmax cell when its
// pre-activation was positive.
void relu_maxpool_backward(const Tensor& z, const Tensor& d_out,
                           const std::vector<int>& argmax, Tensor& d_z) {
    const int c = z.c;
    const int oh = d_out.h, ow = d_out.w;
    for (int ci = 0; ci < c; ++ci) {
        const double* src = z.plane(ci);
        const double* dd = d_out.plane(ci);
        double* dz = d_z.plane(ci);
        const int* am = argmax.data() + static_cast<std::size_t>(ci) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) {
            int off = am[i];
            if (src[off] > 0.0) dz[off] += dd[i];
        }
    }
}

void conv1x1_forward(const Conv& c, const Tensor& in, Tensor& out) {
    const std::size_t n = static_cast<std::size_t>(in.h) * in.w;
    for (int oc = 0; oc < c.out_c; ++oc) {
        double* dst = out.plane(oc);
        std::fill(dst, dst + n, c.b[oc]);
        for (int ic = 0; ic < c.in_c; ++ic) {
            const double wv = c.w[static_cast<std::size_t>(oc) * c.in_c + ic];
            const double* src = in.plane(ic);
            for (std::size_t i = 0; i < n; ++i) dst[i] += wv * src[i];
        }
    }
}

void conv1x1_backward(const Conv& c, const Tensor& in, const Tensor& d_out, Conv& d_c,
                      Tensor& d_in) {
    const std::size_t n = static_cast<std::size_t>(in.h) * in.w;
    for (int oc = 0; oc < c.out_c; ++oc) {
        const double* dz = d_out.plane(oc);
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += dz[i];
        d_c.b[oc] += acc;
        for (int ic = 0; ic < c.in_c; ++ic) {
            const double* src = in.plane(ic);
            double* di = d_in.plane(ic);
            const double wv = c.w[static_cast<std::size_t>(oc) * c.in_c + ic];
            double wg = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                wg += dz[i] * src[i];
                di[i] += wv * dz[i];
            }
            d_c.w[static_cast<std::size_t>(oc) * c.in_c + ic] += wg;
        }
    }
}

} // namespace

Tensor forward(const DetectorParams& p, const Tensor& tile, ForwardCache* cache) {
    const int g = p.cfg.input_size;
    if (tile.c != 1 || tile.h != g || tile.w != g)
        throw DataError("detector tile shape mismatch: expected 1x" + std::to_string(g) + "x" +
                        std::to_string(g));
    ForwardCache local;
    ForwardCache& fc = cache ? *cache : local;
    fc.x0 = tile;

    fc.z1 = Tensor::zeros(p.s1.out_c, g, g);
    conv3x3_forward(p.s1, fc.x0, fc.z1);
    fc.p1 = Tensor::zeros(p.s1.out_c, g / 2, g / 2);
    relu_maxpool_forward(fc.z1, fc.p1, fc.am1);

    fc.z2 = Tensor::zeros(p.s2.out_c, g / 2, g / 2);
    conv3x3_forward(p.s2, fc.p1, fc.z2);
    fc.p2 = Tensor::zeros(p.s2.out_c, g / 4, g / 4);
    relu_maxpool_forward(fc.z2, fc.p2, fc.am2);

    fc.z3 = Tensor::zeros(p.s3.out_c, g / 4, g / 4);
    conv3x3_forward(p.s3, fc.p2, fc.z3);
    fc.p3 = Tensor::zeros(p.s3.out_c, g / 8, g / 8);
    relu_maxpool_forward(fc.z3, fc.p3, fc.am3);

    fc.out = Tensor::zeros(DetectorConfig::kHeadOutputs, g / 8, g / 8);
    conv1x1_forward(p.head, fc.p3, fc.out);
    return fc.out;
}

void backward(const DetectorParams& p, const ForwardCache& fc, const Tensor& d_out,
              DetectorParams& grads, Tensor* d_input) {
    Tensor d_p3 = Tensor::zeros(fc.p3.c, fc.p3.h, fc.p3.w);
    conv1x1_backward(p.head, fc.p3, d_out, grads.head, d_p3);

    Tensor d_z3 = Tensor::zeros(fc.z3.c, fc.z3.h, fc.z3.w);
    relu_maxpool_backward(fc.z3, d_p3, fc.am3, d_z3);
    Tensor d_p2 = Tensor::zeros(fc.p2.c, fc.p2.h, fc.p2.w);
    conv3x3_backward(p.s3, fc.p2, d_z3, grads.s3, &d_p2);

    Tensor d_z2 = Tensor::zeros(fc.z2.c, fc.z2.h, fc.z2.w);
    relu_maxpool_backward(fc.z2, d_p2, fc.am2, d_z2);
    Tensor d_p1 = Tensor::zeros(fc.p1.c, fc.p1.h, fc.p1.w);
    conv3x3_backward(p.s2, fc.p1, d_z2, grads.s2, &d_p1);

    Tensor d_z1 = Tensor::zeros(fc.z1.c, fc.z1.h, fc.z1.w);
    relu_maxpool_backward(fc.z1, d_p1, fc.am1, d_z1);
    if (d_input) {
        *d_input = Tensor::zeros(fc.x0.c, fc.x0.h, fc.x0.w);
        conv3x3_backward(p.s1, fc.x0, d_z1, grads.s1, d_input);
    } else {
        conv3x3_backward(p.s1, fc.x0, d_z1, grads.s1, nullptr);
    }
}

// ---------------------------------------------------------------------------
// boxes

double Box::area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }

double box_iou(const Box& a, const Box& b) {
    double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    double inter = std::max(0.0, iw) * std::max(0.0, ih);
    double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
    double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    double inter = std::max(0.0, iw) * std::max(0.0, ih);
    double uni = a.area() + b.area() - inter;
    double iou = uni > 0.0 ? inter / uni : 0.0;
    double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    double enc = std::max(0.0, cw) * std::max(0.0, ch);
    if (enc <= 0.0) return iou;
    return iou - (enc - uni) / enc;
}

std::array<double, 4> giou_grad_a(const Box& a, const Box& b) {
    // d/d(a.x1, a.y1, a.x2, a.y2); zero where max/min picks b's edge.
    double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    bool overlap = iw > 0.0 && ih > 0.0;
    double inter = overlap ? iw * ih : 0.0;

    double aw = a.x2 - a.x1, ah = a.y2 - a.y1;
    bool valid_a = aw > 0.0 && ah > 0.0;
    double area_a = valid_a ? aw * ah : 0.0;
    double area_b = b.area();
    double uni = area_a + area_b - inter;

    double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
    double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
    double enc = cw * ch;

    std::array<double, 4> dI{0, 0, 0, 0};
    if (overlap) {
        if (a.x1 >= b.x1) dI[0] = -ih;
        if (a.y1 >= b.y1) dI[1] = -iw;
        if (a.x2 <= b.x2) dI[2] = ih;
        if (a.y2 <= b.y2) dI[3] = iw;
    }
    std::array<double, 4> dA{0, 0, 0, 0};
    if (valid_a) {
        dA[0] = -ah;
        dA[1] = -aw;
        dA[2] = ah;
        dA[3] = aw;
    }
    std::array<double, 4> dC{0, 0, 0, 0};
    if (a.x1 <= b.x1) dC[0] = -ch;
    if (a.y1 <= b.y1) dC[1] = -cw;
    if (a.x2 >= b.x2) dC[2] = ch;
    if (a.y2 >= b.y2) dC[3] = cw;

    // GIoU = I/U - (C-U)/C; d[(C-U)/C] = (U*C_k - U_k*C) / C^2.
    std::array<double, 4> g{0, 0, 0, 0};
    for (int k = 0; k < 4; ++k) {
        double dU = dA[k] - dI[k];
        if (uni > 0.0) g[k] += (dI[k] * uni - inter * dU) / (uni * uni);
        if (enc > 0.0) g[k] -= (uni * dC[k] - dU * enc) / (enc * enc);
    }
    return g;
}

// ---------------------------------------------------------------------------
// decode / encode

namespace {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
} // namespace

Detection decode_cell(const Tensor& preds, int gy, int gx, const DetectorConfig& cfg) {
    const double s = DetectorConfig::kStride;
    const double g = cfg.input_size;
    double tx = preds.at(1, gy, gx), ty = preds.at(2, gy, gx);
    double tw = preds.at(3, gy, gx), th = preds.at(4, gy, gx);
    double cx = (gx + 0.5 + std::tanh(tx)) * s;
    double cy = (gy + 0.5 + std::tanh(ty)) * s;
    double w = s * std::exp(tw);
    double h = s * std::exp(th);
    Detection d;
    d.box.x1 = std::clamp(cx - w / 2.0, 0.0, g);
    d.box.y1 = std::clamp(cy - h / 2.0, 0.0, g);
    d.box.x2 = std::clamp(cx + w / 2.0, 0.0, g);
    d.box.y2 = std::clamp(cy + h / 2.0, 0.0, g);
    d.score = sigmoid(preds.at(0, gy, gx));
    return d;
}

std::vector<Detection> decode(const Tensor& preds, double col_offset, double row_offset,
                              const DetectorConfig& cfg, double score_threshold) {
    std::vector<Detection> out;
    for (int gy = 0; gy < preds.h; ++gy) {
        for (int gx = 0; gx < preds.w; ++gx) {
            Detection d = decode_cell(preds, gy, gx, cfg);
            if (d.score < score_threshold) continue;
            d.box.x1 += col_offset;
            d.box.x2 += col_offset;
            d.box.y1 += row_offset;
            d.box.y2 += row_offset;
            if (d.box.x2 > d.box.x1 && d.box.y2 > d.box.y1) out.push_back(d);
        }
    }
    return out;
}

std::array<double, 4> encode_cell(const Box& box, int gy, int gx, const DetectorConfig&) {
    const double s = DetectorConfig::kStride;
    double cx = (box.x1 + box.x2) / 2.0, cy = (box.y1 + box.y2) / 2.0;
    double w = box.x2 - box.x1, h = box.y2 - box.y1;
    auto atanh_clamped = [](double v) {
        v = std::clamp(v, -1.0 + 1e-9, 1.0 - 1e-9);
        return 0.5 * std::log((1.0 + v) / (1.0 - v));
    };
    return {atanh_clamped(cx / s - gx - 0.5), atanh_clamped(cy / s - gy - 0.5),
            std::log(std::max(w, 1e-9) / s), std::log(std::max(h, 1e-9) / s)};
}

// ---------------------------------------------------------------------------
// losses

namespace {

// Cell (gy,gx) -> index of the assigned gt box, or -1.
std::vector<int> assign_cells(const Tensor& preds, const std::vector<Box>& gt) {
    const double s = DetectorConfig::kStride;
    std::vector<int> assign(static_cast<std::size_t>(preds.h) * preds.w, -1);
    for (int gy = 0; gy < preds.h; ++gy) {
        for (int gx = 0; gx < preds.w; ++gx) {
            double cx = (gx + 0.5) * s, cy = (gy + 0.5) * s;
            int best = -1;
            double best_d = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < gt.size(); ++k) {
                const Box& g = gt[k];
                if (cx < g.x1 || cx > g.x2 || cy < g.y1 || cy > g.y2) continue;
                double gcx = (g.x1 + g.x2) / 2.0, gcy = (g.y1 + g.y2) / 2.0;
                double d = (cx - gcx) * (cx - gcx) + (cy - gcy) * (cy - gcy);
                if (d < best_d) { // ties keep the smaller gt index
                    best_d = d;
                    best = static_cast<int>(k);
                }
            }
            assign[static_cast<std::size_t>(gy) * preds.w + gx] = best;
        }
    }
    return assign;
}

inline double bce_with_logit(double logit, double target) {
    // max(l,0) - l*t + log(1 + exp(-|l|))
    return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::fabs(logit)));
}

} // namespace

TrainingStats spd_loss(const Tensor& preds, const std::vector<Box>& gt,
                       const DetectorConfig& cfg) {
    std::vector<int> assign = assign_cells(preds, gt);
    const int cells = preds.h * preds.w;
    TrainingStats st;
    int n_pos = 0;
    for (int i = 0; i < cells; ++i)
        if (assign[i] >= 0) ++n_pos;
    for (int gy = 0; gy < preds.h; ++gy) {
        for (int gx = 0; gx < preds.w; ++gx) {
            int a = assign[static_cast<std::size_t>(gy) * preds.w + gx];
            st.l_bce += bce_with_logit(preds.at(0, gy, gx), a >= 0 ? 1.0 : 0.0);
            if (a >= 0) {
                Detection d = decode_cell(preds, gy, gx, cfg);
                st.l_giou += (1.0 - giou(d.box, gt[a])) / n_pos;
            }
        }
    }
    st.l_bce /= cells;
    st.l_giou *= cfg.giou_weight;
    st.l_spd = st.l_bce + st.l_giou;
    return st;
}

TrainingStats spd_loss_grad(const Tensor& preds, const std::vector<Box>& gt,
                            const DetectorConfig& cfg, Tensor& d_preds) {
    d_preds = Tensor::zeros(preds.c, preds.h, preds.w);
    std::vector<int> assign = assign_cells(preds, gt);
    const int cells = preds.h * preds.w;
    int n_pos = 0;
    for (int i = 0; i < cells; ++i)
        if (assign[i] >= 0) ++n_pos;

    const double s = DetectorConfig::kStride;
    const double g_lim = cfg.input_size;
    TrainingStats st;
    for (int gy = 0; gy < preds.h; ++gy) {
        for (int gx = 0; gx < preds.w; ++gx) {
            int a = assign[static_cast<std::size_t>(gy) * preds.w + gx];
            double target = a >= 0 ? 1.0 : 0.0;
            double logit = preds.at(0, gy, gx);
            st.l_bce += bce_with_logit(logit, target);
            d_preds.at(0, gy, gx) = (sigmoid(logit) - target) / cells;
            if (a < 0) continue;

            double tx = preds.at(1, gy, gx), ty = preds.at(2, gy, gx);
            double tw = preds.at(3, gy, gx), th = preds.at(4, gy, gx);
            double cx = (gx + 0.5 + std::tanh(tx)) * s;
            double cy = (gy + 0.5 + std::tanh(ty)) * s;
            double w = s * std::exp(tw), h = s * std::exp(th);
            double x1p = cx - w / 2.0, x2p = cx + w / 2.0;
            double y1p = cy - h / 2.0, y2p = cy + h / 2.0;
            Box box{std::clamp(x1p, 0.0, g_lim), std::clamp(y1p, 0.0, g_lim),
                    std::clamp(x2p, 0.0, g_lim), std::clamp(y2p, 0.0, g_lim)};
            st.l_giou += (1.0 - giou(box, gt[a])) / n_pos;

            std::array<double, 4> gg = giou_grad_a(box, gt[a]);
            // d l_giou / d box = -gg / n_pos, weighted
            double scale = -cfg.giou_weight / n_pos;
            double gx1 = scale * gg[0] * ((x1p > 0.0 && x1p < g_lim) ? 1.0 : 0.0);
            double gy1 = scale * gg[1] * ((y1p > 0.0 && y1p < g_lim) ? 1.0 : 0.0);
            double gx2 = scale * gg[2] * ((x2p > 0.0 && x2p < g_lim) ? 1.0 : 0.0);
            double gy2 = scale * gg[3] * ((y2p > 0.0 && y2p < g_lim) ? 1.0 : 0.0);

            double dcx_dtx = s * (1.0 - std::tanh(tx) * std::tanh(tx));
            double dcy_dty = s * (1.0 - std::tanh(ty) * std::tanh(ty));
            d_preds.at(1, gy, gx) = (gx1 + gx2) * dcx_dtx;
            d_preds.at(2, gy, gx) = (gy1 + gy2) * dcy_dty;
            d_preds.at(3, gy, gx) = (-gx1 / 2.0 + gx2 / 2.0) * w;
            d_preds.at(4, gy, gx) = (-gy1 / 2.0 + gy2 / 2.0) * h;
        }
    }
    st.l_bce /= cells;
    st.l_giou *= cfg.giou_weight;
    st.l_spd = st.l_bce + st.l_giou;
    return st;
}

// ---------------------------------------------------------------------------
// training

namespace {

struct SgdState {
    std::vector<double> velocity;
};

void sgd_step(std::vector<double*>& params, std::vector<double*>& grads, SgdState& st,
              const TrainHyper& h) {
    if (st.velocity.empty()) st.velocity.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        double g = *grads[i] + h.weight_decay * *params[i];
        double v = h.momentum * st.velocity[i] + g;
        st.velocity[i] = v;
        *params[i] -= h.lr * (g + h.momentum * v);
    }
}

} // namespace

void train_spd_inplace(DetectorParams& params, const std::vector<TrainSample>& data,
                       const TrainHyper& hyper, std::vector<TrainLogEntry>* log) {
    if (data.empty()) throw DataError("train_spd on empty dataset");
    Rng rng(hyper.seed);
    SgdState sgd;
    std::vector<double*> pp = param_ptrs(params);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    int step = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        // Fisher-Yates with the run RNG; deterministic.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i) - 1)]);
        for (std::size_t at = 0; at < order.size(); at += hyper.batch) {
            std::size_t n = std::min<std::size_t>(hyper.batch, order.size() - at);
            DetectorParams grads = DetectorParams::zeros_like(params);
            TrainingStats acc;
            for (std::size_t bi = 0; bi < n; ++bi) {
                const TrainSample& sample = data[order[at + bi]];
                ForwardCache fc;
                Tensor out = forward(params, sample.tile, &fc);
                Tensor d_out;
                TrainingStats st = spd_loss_grad(out, sample.gt, params.cfg, d_out);
                // Mean over the batch.
                for (double& v : d_out.v) v /= static_cast<double>(n);
                backward(params, fc, d_out, grads, nullptr);
                acc.l_bce += st.l_bce / n;
                acc.l_giou += st.l_giou / n;
                acc.l_spd += st.l_spd / n;
            }
            if (!std::isfinite(acc.l_spd))
                throw TrainingDiverged("spd loss went non-finite at step " +
                                       std::to_string(step));
            std::vector<double*> gp = param_ptrs(grads);
            sgd_step(pp, gp, sgd, hyper);
            if (log) log->push_back({step, acc.l_spd, acc.l_bce, acc.l_giou});
            ++step;
        }
    }
}

DetectorParams train_spd(const std::vector<TrainSample>& data, const DetectorConfig& cfg,
                         const TrainHyper& hyper, std::vector<TrainLogEntry>* log) {
    DetectorParams params = DetectorParams::he_init(cfg, hyper.seed);
    train_spd_inplace(params, data, hyper, log);
    return params;
}

double grad_check(const DetectorParams& params, const TrainSample& sample, double h) {
    DetectorParams work = params;
    DetectorParams grads = DetectorParams::zeros_like(params);
    {
        ForwardCache fc;
        Tensor out = forward(work, sample.tile, &fc);
        Tensor d_out;
        spd_loss_grad(out, sample.gt, work.cfg, d_out);
        backward(work, fc, d_out, grads, nullptr);
    }
    std::vector<double*> pp = param_ptrs(work);
    std::vector<double*> gp = param_ptrs(grads);
    auto loss_at = [&]() {
        Tensor out = forward(work, sample.tile, nullptr);
        return spd_loss(out, sample.gt, work.cfg).l_spd;
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < pp.size(); ++i) {
        double orig = *pp[i];
        *pp[i] = orig + h;
        double up = loss_at();
        *pp[i] = orig - h;
        double down = loss_at();
        *pp[i] = orig;
        double numeric = (up - down) / (2.0 * h);
        double analytic = *gp[i];
        double err = std::fabs(numeric - analytic) /
                     std::max({1.0, std::fabs(numeric), std::fabs(analytic)});
        worst = std::max(worst, err);
    }
    return worst;
}

// ---------------------------------------------------------------------------
// detection

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
        if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
        if (a.box.x2 != b.box.x2) return a.box.x2 < b.box.x2;
        return a.box.y2 < b.box.y2;
    });
    std::vector<Detection> kept;
    std::vector<char> dead(dets.size(), 0);
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dead[i]) continue;
        kept.push_back(dets[i]);
        for (std::size_t j = i + 1; j < dets.size(); ++j) {
            if (dead[j]) continue;
            if (box_iou(dets[i].box, dets[j].box) > iou_threshold) dead[j] = 1;
        }
    }
    return kept;
}

PairDetections detect_pair(const DetectorParams& p, const simmap::SimilarityMap& m,
                           const DetectOptions& opt,
                           const simmap::KeyframeSubmatrix* backmap) {
    PairDetections out;
    if (m.rows == 0 || m.cols == 0) return out;
    std::vector<simmap::Tile> tiles =
        simmap::prepare_detector_input(m, p.cfg.input_size, opt.clamp_negative);
    std::vector<Detection> all;
    Tensor tile = Tensor::zeros(1, p.cfg.input_size, p.cfg.input_size);
    for (const simmap::Tile& t : tiles) {
        tile.v = t.data;
        Tensor preds = forward(p, tile, nullptr);
        std::vector<Detection> dets =
            decode(preds, t.col_offset, t.row_offset, p.cfg, opt.score_threshold);
        for (Detection& d : dets) {
            // Clip to the source map; drop slivers.
            d.box.x1 = std::clamp(d.box.x1, 0.0, static_cast<double>(m.cols));
            d.box.x2 = std::clamp(d.box.x2, 0.0, static_cast<double>(m.cols));
            d.box.y1 = std::clamp(d.box.y1, 0.0, static_cast<double>(m.rows));
            d.box.y2 = std::clamp(d.box.y2, 0.0, static_cast<double>(m.rows));
            if (d.box.x2 - d.box.x1 > 1e-6 && d.box.y2 - d.box.y1 > 1e-6) all.push_back(d);
        }
    }
    out.cells = nms(std::move(all), opt.nms_iou);
    for (const Detection& d : out.cells) {
        double x1 = d.box.x1, x2 = d.box.x2, y1 = d.box.y1, y2 = d.box.y2;
        if (backmap) {
            x1 = backmap->back_col(x1);
            x2 = backmap->back_col(x2);
            y1 = backmap->back_row(y1);
            y2 = backmap->back_row(y2);
        }
        align::SegmentMatch sm;
        sm.q_start = y1 / m.row_fps;
        sm.q_end = y2 / m.row_fps;
        sm.r_start = x1 / m.col_fps;
        sm.r_end = x2 / m.col_fps;
        sm.score = d.score;
        out.matches.push_back(sm);
        out.video_similarity = std::max(out.video_similarity, d.score);
    }
    return out;
}

// ---------------------------------------------------------------------------
// model io

static constexpr char kMagic[4] = {'S', 'G', 'D', 'M'};

namespace {

void write_conv(std::ostream& os, const Conv& c) {
    binio::write_u32(os, static_cast<std::uint32_t>(c.in_c));
    binio::write_u32(os, static_cast<std::uint32_t>(c.out_c));
    binio::write_u32(os, static_cast<std::uint32_t>(c.k));
    for (double w : c.w) binio::write_f32(os, static_cast<float>(w));
    for (double b : c.b) binio::write_f32(os, static_cast<float>(b));
}

Conv read_conv(std::istream& is) {
    int in_c = static_cast<int>(binio::read_u32(is, "conv in_c"));
    int out_c = static_cast<int>(binio::read_u32(is, "conv out_c"));
    int k = static_cast<int>(binio::read_u32(is, "conv k"));
    Conv c = Conv::shaped(in_c, out_c, k);
    for (double& w : c.w) w = binio::read_f32(is, "conv weight");
    for (double& b : c.b) b = binio::read_f32(is, "conv bias");
    return c;
}

} // namespace

void write_detector_block(std::ostream& os, const DetectorParams& p) {
    binio::write_u32(os, static_cast<std::uint32_t>(p.cfg.input_size));
    for (int c : p.cfg.channels) binio::write_u32(os, static_cast<std::uint32_t>(c));
    binio::write_f64(os, p.cfg.giou_weight);
    write_conv(os, p.s1);
    write_conv(os, p.s2);
    write_conv(os, p.s3);
    write_conv(os, p.head);
}

DetectorParams read_detector_block(std::istream& is) {
    DetectorParams p;
    p.cfg.input_size = static_cast<int>(binio::read_u32(is, "input_size"));
    for (int i = 0; i < 4; ++i)
        p.cfg.channels[i] = static_cast<int>(binio::read_u32(is, "channels"));
    p.cfg.giou_weight = binio::read_f64(is, "giou_weight");
    p.cfg.validate();
    p.s1 = read_conv(is);
    p.s2 = read_conv(is);
    p.s3 = read_conv(is);
    p.head = read_conv(is);
    return p;
}

void save_sgdm(const DetectorParams& p, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    binio::write_u32(os, 1);
    write_detector_block(os, p);
    if (!os) throw DataError("write failed for '" + path + "'");
}

DetectorParams load_sgdm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open model file '" + path + "'");
    char magic[4];
    binio::read_exact(is, magic, 4, "SGDM magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad magic in '" + path + "': not an SGDM file");
    std::uint32_t version = binio::read_u32(is, "SGDM version");
    if (version != 1) throw DataError("unsupported SGDM version");
    return read_detector_block(is);
}

} // namespace segsim::spd
