#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "segsim/rng.hpp"
#include "segsim/spd.hpp"
#include "test_util.hpp"

using namespace segsim;

namespace {

spd::DetectorConfig tiny_config() {
    spd::DetectorConfig cfg;
    cfg.input_size = 16;
    cfg.channels = {1, 2, 2, 2};
    return cfg;
}

spd::Tensor random_tile(int g, std::uint64_t seed) {
    spd::Tensor t = spd::Tensor::zeros(1, g, g);
    Rng rng(seed);
    for (double& v : t.v) v = rng.uniform();
    return t;
}

// Naive per-output-pixel convolution, independent of the shifted-accumulate
// implementation in the library.
spd::Tensor naive_conv3x3(const spd::Conv& c, const spd::Tensor& in) {
    spd::Tensor out = spd::Tensor::zeros(c.out_c, in.h, in.w);
    for (int oc = 0; oc < c.out_c; ++oc)
        for (int y = 0; y < in.h; ++y)
            for (int x = 0; x < in.w; ++x) {
                double acc = c.b[oc];
                for (int ic = 0; ic < c.in_c; ++ic)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int yy = y + ky - 1, xx = x + kx - 1;
                            if (yy < 0 || xx < 0 || yy >= in.h || xx >= in.w) continue;
                            acc += c.wat(oc, ic, ky, kx) * in.at(ic, yy, xx);
                        }
                out.at(oc, y, x) = acc;
            }
    return out;
}

spd::Tensor naive_relu_pool(const spd::Tensor& z) {
    spd::Tensor out = spd::Tensor::zeros(z.c, z.h / 2, z.w / 2);
    for (int c = 0; c < z.c; ++c)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) {
                double m = z.at(c, 2 * y, 2 * x);
                m = std::max(m, z.at(c, 2 * y, 2 * x + 1));
                m = std::max(m, z.at(c, 2 * y + 1, 2 * x));
                m = std::max(m, z.at(c, 2 * y + 1, 2 * x + 1));
                out.at(c, y, x) = std::max(0.0, m);
            }
    return out;
}

} // namespace

TEST_CASE("forward: bias at zero input, determinism, naive conv oracle") {
    spd::DetectorConfig cfg = tiny_config();
    spd::DetectorParams zero = spd::DetectorParams::he_init(cfg, 1);
    for (spd::Conv* c : {&zero.s1, &zero.s2, &zero.s3, &zero.head})
        for (double& w : c->w) w = 0.0;
    zero.head.b = {0.5, -0.25, 1.0, 0.0, 2.0};
    spd::Tensor tile = spd::Tensor::zeros(1, 16, 16);
    spd::Tensor out = spd::forward(zero, tile);
    for (int gy = 0; gy < out.h; ++gy)
        for (int gx = 0; gx < out.w; ++gx) {
            CHECK(out.at(0, gy, gx) == 0.5);
            CHECK(out.at(1, gy, gx) == -0.25);
            CHECK(out.at(4, gy, gx) == 2.0);
        }

    spd::DetectorParams p = spd::DetectorParams::he_init(cfg, 99);
    spd::Tensor t = random_tile(16, 3);
    spd::Tensor a = spd::forward(p, t);
    spd::Tensor b = spd::forward(p, t);
    for (std::size_t i = 0; i < a.v.size(); ++i) CHECK(a.v[i] == b.v[i]); // bitwise

    // Full pipeline against the naive stage-by-stage computation.
    spd::Tensor n1 = naive_relu_pool(naive_conv3x3(p.s1, t));
    spd::Tensor n2 = naive_relu_pool(naive_conv3x3(p.s2, n1));
    spd::Tensor n3 = naive_relu_pool(naive_conv3x3(p.s3, n2));
    spd::Tensor head = spd::Tensor::zeros(5, n3.h, n3.w);
    for (int oc = 0; oc < 5; ++oc)
        for (int y = 0; y < n3.h; ++y)
            for (int x = 0; x < n3.w; ++x) {
                double acc = p.head.b[oc];
                for (int ic = 0; ic < p.head.in_c; ++ic)
                    acc += p.head.w[static_cast<std::size_t>(oc) * p.head.in_c + ic] *
                           n3.at(ic, y, x);
                head.at(oc, y, x) = acc;
            }
    REQUIRE(a.h == head.h);
    REQUIRE(a.w == head.w);
    for (std::size_t i = 0; i < a.v.size(); ++i)
        CHECK(a.v[i] == doctest::Approx(head.v[i]).epsilon(1e-5));

    spd::Tensor wrong = spd::Tensor::zeros(1, 8, 8);
    CHECK_THROWS_AS((void)spd::forward(p, wrong), DataError);
}

TEST_CASE("decode: neutral cell, analytic width, encode round trip") {
    spd::DetectorConfig cfg = tiny_config();
    spd::Tensor preds = spd::Tensor::zeros(5, 2, 2);
    spd::Detection d = spd::decode_cell(preds, 0, 0, cfg);
    CHECK(d.box.x1 == doctest::Approx(0.0));
    CHECK(d.box.y1 == doctest::Approx(0.0));
    CHECK(d.box.x2 == doctest::Approx(8.0));
    CHECK(d.box.y2 == doctest::Approx(8.0));
    CHECK(d.score == doctest::Approx(0.5));

    // tw = ln 2 doubles the width; check on a 32-px tile at an interior cell
    // where the 16-px box survives the clamp.
    spd::DetectorConfig big = cfg;
    big.input_size = 32;
    spd::Tensor wide_preds = spd::Tensor::zeros(5, 4, 4);
    wide_preds.at(3, 1, 1) = std::log(2.0); // tw
    spd::Detection wide = spd::decode_cell(wide_preds, 1, 1, big);
    CHECK(wide.box.x2 - wide.box.x1 == doctest::Approx(16.0).epsilon(1e-9));

    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        int gy = rng.uniform_int(0, 1), gx = rng.uniform_int(0, 1);
        spd::Tensor pr = spd::Tensor::zeros(5, 2, 2);
        pr.at(1, gy, gx) = rng.uniform(-0.8, 0.8);
        pr.at(2, gy, gx) = rng.uniform(-0.8, 0.8);
        pr.at(3, gy, gx) = rng.uniform(-0.4, 0.4);
        pr.at(4, gy, gx) = rng.uniform(-0.4, 0.4);
        spd::Detection dec = spd::decode_cell(pr, gy, gx, cfg);
        // Only interior boxes are exactly invertible (clamping loses info).
        if (dec.box.x1 <= 0.0 || dec.box.y1 <= 0.0 || dec.box.x2 >= cfg.input_size ||
            dec.box.y2 >= cfg.input_size)
            continue;
        auto enc = spd::encode_cell(dec.box, gy, gx, cfg);
        CHECK(enc[0] == doctest::Approx(pr.at(1, gy, gx)).epsilon(1e-6));
        CHECK(enc[1] == doctest::Approx(pr.at(2, gy, gx)).epsilon(1e-6));
        CHECK(enc[2] == doctest::Approx(pr.at(3, gy, gx)).epsilon(1e-6));
        CHECK(enc[3] == doctest::Approx(pr.at(4, gy, gx)).epsilon(1e-6));
    }
}

TEST_CASE("giou analytics") {
    spd::Box a{0, 0, 1, 1};
    CHECK(spd::giou(a, a) == 1.0);

    spd::Box b{2, 2, 3, 3};
    CHECK(spd::giou(a, b) == doctest::Approx(-7.0 / 9.0).epsilon(1e-12));

    spd::Box c{0, 0, 2, 2}, d{1, 1, 3, 3};
    CHECK(spd::giou(c, d) == doctest::Approx(1.0 / 7.0 - 2.0 / 9.0).epsilon(1e-12));

    // symmetry, giou <= iou <= 1
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        auto rand_box = [&]() {
            double x1 = rng.uniform(0, 10), y1 = rng.uniform(0, 10);
            return spd::Box{x1, y1, x1 + rng.uniform(0.1, 5), y1 + rng.uniform(0.1, 5)};
        };
        spd::Box u = rand_box(), v = rand_box();
        CHECK(spd::giou(u, v) == spd::giou(v, u));
        CHECK(spd::giou(u, v) <= spd::box_iou(u, v) + 1e-12);
        CHECK(spd::box_iou(u, v) <= 1.0);
        CHECK(spd::giou(u, v) > -1.0);
    }

    // degenerate zero-area box stays defined
    spd::Box degenerate{1, 1, 1, 1};
    CHECK(std::isfinite(spd::giou(degenerate, a)));
}

TEST_CASE("giou_grad_a matches finite differences") {
    Rng rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        spd::Box a{rng.uniform(0, 4), rng.uniform(0, 4), 0, 0};
        a.x2 = a.x1 + rng.uniform(0.5, 4);
        a.y2 = a.y1 + rng.uniform(0.5, 4);
        spd::Box b{rng.uniform(0, 4), rng.uniform(0, 4), 0, 0};
        b.x2 = b.x1 + rng.uniform(0.5, 4);
        b.y2 = b.y1 + rng.uniform(0.5, 4);
        auto g = spd::giou_grad_a(a, b);
        double* coords[4] = {&a.x1, &a.y1, &a.x2, &a.y2};
        const double h = 1e-6;
        for (int k = 0; k < 4; ++k) {
            double orig = *coords[k];
            *coords[k] = orig + h;
            double up = spd::giou(a, b);
            *coords[k] = orig - h;
            double down = spd::giou(a, b);
            *coords[k] = orig;
            double numeric = (up - down) / (2 * h);
            CHECK(std::fabs(numeric - g[k]) < 1e-4);
        }
    }
}

TEST_CASE("spd_loss: saturated negatives, perfect prediction, scalar oracle") {
    spd::DetectorConfig cfg = tiny_config();

    // No gt, all logits -20: loss ~ 0.
    spd::Tensor preds = spd::Tensor::zeros(5, 2, 2);
    for (int gy = 0; gy < 2; ++gy)
        for (int gx = 0; gx < 2; ++gx) preds.at(0, gy, gx) = -20.0;
    spd::TrainingStats st = spd::spd_loss(preds, {}, cfg);
    CHECK(st.l_spd < 1e-8);
    CHECK(st.l_giou == 0.0);

    // Single gt covering the whole tile, perfect predictions.
    spd::Box whole{0, 0, 16, 16};
    spd::Tensor perfect = spd::Tensor::zeros(5, 2, 2);
    for (int gy = 0; gy < 2; ++gy)
        for (int gx = 0; gx < 2; ++gx) {
            auto t = spd::encode_cell(whole, gy, gx, cfg);
            perfect.at(0, gy, gx) = 30.0;
            perfect.at(1, gy, gx) = t[0];
            perfect.at(2, gy, gx) = t[1];
            perfect.at(3, gy, gx) = t[2];
            perfect.at(4, gy, gx) = t[3];
        }
    spd::TrainingStats st2 = spd::spd_loss(perfect, {whole}, cfg);
    CHECK(st2.l_giou <= 1e-6);
    CHECK(st2.l_bce <= 1e-8);

    // Random case vs a scalar re-computation of the published definition.
    Rng rng(37);
    spd::Tensor rp = spd::Tensor::zeros(5, 2, 2);
    for (double& v : rp.v) v = rng.uniform(-1.0, 1.0);
    std::vector<spd::Box> gt{{1.0, 2.0, 9.0, 11.0}};
    spd::TrainingStats st3 = spd::spd_loss(rp, gt, cfg);

    double bce = 0.0, gi = 0.0;
    int n_pos = 0;
    for (int gy = 0; gy < 2; ++gy)
        for (int gx = 0; gx < 2; ++gx) {
            double cx = (gx + 0.5) * 8.0, cy = (gy + 0.5) * 8.0;
            bool pos = cx >= gt[0].x1 && cx <= gt[0].x2 && cy >= gt[0].y1 && cy <= gt[0].y2;
            double logit = rp.at(0, gy, gx);
            double p = 1.0 / (1.0 + std::exp(-logit));
            bce += pos ? -std::log(p) : -std::log(1.0 - p);
            if (pos) ++n_pos;
        }
    bce /= 4.0;
    for (int gy = 0; gy < 2; ++gy)
        for (int gx = 0; gx < 2; ++gx) {
            double cx = (gx + 0.5) * 8.0, cy = (gy + 0.5) * 8.0;
            if (!(cx >= gt[0].x1 && cx <= gt[0].x2 && cy >= gt[0].y1 && cy <= gt[0].y2))
                continue;
            spd::Detection dec = spd::decode_cell(rp, gy, gx, cfg);
            gi += (1.0 - spd::giou(dec.box, gt[0])) / n_pos;
        }
    CHECK(st3.l_bce == doctest::Approx(bce).epsilon(1e-8));
    CHECK(st3.l_giou == doctest::Approx(gi).epsilon(1e-8));
    CHECK(st3.l_spd == st3.l_bce + st3.l_giou); // exact decomposition
}

TEST_CASE("grad_check: full detector below 1e-4") {
    spd::DetectorConfig cfg = tiny_config();
    spd::DetectorParams p = spd::DetectorParams::he_init(cfg, 2024);
    spd::TrainSample sample;
    sample.tile = random_tile(16, 5);
    sample.gt = {{2.0, 3.0, 12.0, 13.0}};
    double err = spd::grad_check(p, sample);
    CHECK(err < 1e-4);
}

TEST_CASE("grad_check: no positive cells leaves box branch dead") {
    spd::DetectorConfig cfg = tiny_config();
    spd::DetectorParams p = spd::DetectorParams::he_init(cfg, 77);
    spd::TrainSample sample;
    sample.tile = random_tile(16, 6);
    sample.gt = {}; // nothing to regress
    spd::ForwardCache fc;
    spd::Tensor out = spd::forward(p, sample.tile, &fc);
    spd::Tensor d_out;
    spd::spd_loss_grad(out, sample.gt, cfg, d_out);
    for (int gy = 0; gy < d_out.h; ++gy)
        for (int gx = 0; gx < d_out.w; ++gx)
            for (int ch = 1; ch < 5; ++ch) CHECK(d_out.at(ch, gy, gx) == 0.0);
    CHECK(spd::grad_check(p, sample) < 1e-4);
}

TEST_CASE("nms: duplicates, disjoint boxes, quadratic reference") {
    std::vector<spd::Detection> two{{{0, 0, 4, 4}, 0.9}, {{0, 0, 4, 4}, 0.8}};
    CHECK(spd::nms(two, 0.5).size() == 1);

    std::vector<spd::Detection> apart{{{0, 0, 4, 4}, 0.9}, {{8, 8, 12, 12}, 0.8}};
    CHECK(spd::nms(apart, 0.5).size() == 2);

    Rng rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<spd::Detection> dets;
        for (int i = 0; i < 25; ++i) {
            spd::Box b;
            b.x1 = rng.uniform(0, 20);
            b.y1 = rng.uniform(0, 20);
            b.x2 = b.x1 + rng.uniform(1, 8);
            b.y2 = b.y1 + rng.uniform(1, 8);
            dets.push_back({b, rng.uniform()});
        }
        auto got = spd::nms(dets, 0.5);
        // Quadratic reference with the same ordering contract.
        auto sorted = dets;
        std::sort(sorted.begin(), sorted.end(),
                  [](const spd::Detection& a, const spd::Detection& b) {
                      if (a.score != b.score) return a.score > b.score;
                      if (a.box.x1 != b.box.x1) return a.box.x1 < b.box.x1;
                      if (a.box.y1 != b.box.y1) return a.box.y1 < b.box.y1;
                      if (a.box.x2 != b.box.x2) return a.box.x2 < b.box.x2;
                      return a.box.y2 < b.box.y2;
                  });
        std::vector<spd::Detection> expect;
        for (const auto& d : sorted) {
            bool keep = true;
            for (const auto& k : expect)
                if (spd::box_iou(d.box, k.box) > 0.5) keep = false;
            if (keep) expect.push_back(d);
        }
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].score == expect[i].score);
            CHECK(got[i].box.x1 == expect[i].box.x1);
        }
    }
}

TEST_CASE("train_spd: zero lr no-op, same-seed determinism, divergence error") {
    spd::DetectorConfig cfg = tiny_config();
    std::vector<spd::TrainSample> data;
    for (int i = 0; i < 4; ++i) {
        spd::TrainSample s;
        s.tile = random_tile(16, 100 + i);
        s.gt = {{2.0, 2.0, 10.0, 10.0}};
        data.push_back(std::move(s));
    }

    spd::TrainHyper frozen;
    frozen.lr = 0.0;
    frozen.weight_decay = 0.0;
    frozen.epochs = 2;
    frozen.seed = 5;
    spd::DetectorParams init = spd::DetectorParams::he_init(cfg, 5);
    spd::DetectorParams after = spd::train_spd(data, cfg, frozen);
    auto pa = spd::param_ptrs(init);
    auto pb = spd::param_ptrs(after);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);

    spd::TrainHyper hyper;
    hyper.epochs = 3;
    hyper.seed = 9;
    spd::DetectorParams a = spd::train_spd(data, cfg, hyper);
    spd::DetectorParams b = spd::train_spd(data, cfg, hyper);
    auto qa = spd::param_ptrs(a);
    auto qb = spd::param_ptrs(b);
    for (std::size_t i = 0; i < qa.size(); ++i) CHECK(*qa[i] == *qb[i]);

    spd::TrainHyper crazy;
    crazy.lr = 1e18;
    crazy.epochs = 60;
    crazy.seed = 1;
    CHECK_THROWS_AS((void)spd::train_spd(data, cfg, crazy), TrainingDiverged);
}

TEST_CASE("train_spd: 8-sample overfit drops l_spd below 0.1 within 500 steps" *
          doctest::timeout(600)) {
    spd::DetectorConfig cfg;
    cfg.input_size = 32;
    cfg.channels = {1, 8, 16, 16};
    Rng rng(63);
    std::vector<spd::TrainSample> data;
    for (int i = 0; i < 8; ++i) {
        spd::TrainSample s;
        s.tile = spd::Tensor::zeros(1, 32, 32);
        // One strong cell-aligned diagonal block spanning two grid cells.
        int at = 8 * rng.uniform_int(0, 2);
        int len = 16;
        for (int k = 0; k < len; ++k)
            for (int w = -2; w <= 2; ++w) {
                int y = at + k, x = at + k + w;
                if (x < at || x >= at + len) continue;
                s.tile.at(0, y, x) = std::max(s.tile.at(0, y, x), rng.uniform(0.9, 1.0));
            }
        s.gt = {{static_cast<double>(at), static_cast<double>(at),
                 static_cast<double>(at + len), static_cast<double>(at + len)}};
        data.push_back(std::move(s));
    }
    spd::TrainHyper hyper;
    hyper.epochs = 500; // full-batch: one step per epoch
    hyper.batch = 8;
    hyper.seed = 11;
    std::vector<spd::TrainLogEntry> log;
    spd::DetectorParams p = spd::train_spd(data, cfg, hyper, &log);
    REQUIRE(!log.empty());
    CHECK(log.size() <= 500);
    CHECK(log.back().l_spd < 0.1);
}

TEST_CASE("detect_pair: empty map, translation consistency") {
    spd::DetectorConfig cfg = tiny_config();
    spd::DetectorParams p = spd::DetectorParams::he_init(cfg, 404);
    simmap::SimilarityMap empty;
    empty.rows = empty.cols = 0;
    spd::DetectOptions opt;
    auto out = spd::detect_pair(p, empty, opt);
    CHECK(out.matches.empty());
    CHECK(out.video_similarity == 0.0);
}

TEST_CASE("translation consistency: stride-sized shifts move detections one cell") {
    // Hand-built averaging detector: objectness tracks local density, boxes
    // stay at cell centers; a pattern shift by the total stride must shift
    // the peak cell by exactly one.
    spd::DetectorConfig cfg;
    cfg.input_size = 32;
    cfg.channels = {1, 2, 2, 2};
    spd::DetectorParams p = spd::DetectorParams::he_init(cfg, 1);
    for (spd::Conv* c : {&p.s1, &p.s2, &p.s3})
        for (int oc = 0; oc < c->out_c; ++oc)
            for (int ic = 0; ic < c->in_c; ++ic)
                for (int k = 0; k < 9; ++k)
                    c->w[(static_cast<std::size_t>(oc) * c->in_c + ic) * 9 + k] = 1.0 / 9.0;
    for (spd::Conv* c : {&p.s1, &p.s2, &p.s3}) std::fill(c->b.begin(), c->b.end(), 0.0);
    std::fill(p.head.w.begin(), p.head.w.end(), 0.0);
    std::fill(p.head.b.begin(), p.head.b.end(), 0.0);
    p.head.w[0] = 4.0; // objectness from channel 0
    p.head.b[0] = -1.0;

    auto run = [&](int at) {
        spd::Tensor tile = spd::Tensor::zeros(1, 32, 32);
        for (int y = at; y < at + 6; ++y)
            for (int x = at; x < at + 6; ++x) tile.at(0, y, x) = 1.0;
        spd::Tensor out = spd::forward(p, tile);
        int best_gy = 0, best_gx = 0;
        double best = -1e30;
        for (int gy = 0; gy < out.h; ++gy)
            for (int gx = 0; gx < out.w; ++gx)
                if (out.at(0, gy, gx) > best) {
                    best = out.at(0, gy, gx);
                    best_gy = gy;
                    best_gx = gx;
                }
        return std::pair<int, int>{best_gy, best_gx};
    };
    auto [y0, x0] = run(5);
    auto [y1, x1] = run(5 + spd::DetectorConfig::kStride);
    CHECK(y1 == y0 + 1);
    CHECK(x1 == x0 + 1);
}

TEST_CASE("model io round trip preserves f32-quantized params") {
    spd::DetectorConfig cfg = tiny_config();
    spd::DetectorParams p = spd::DetectorParams::he_init(cfg, 2025);
    std::string path = testutil::temp_dir("sgdm") + "/model.sgdm";
    spd::save_sgdm(p, path);
    spd::DetectorParams q = spd::load_sgdm(path);
    CHECK(q.cfg.input_size == cfg.input_size);
    auto pa = spd::param_ptrs(p);
    auto pb = spd::param_ptrs(q);
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i)
        CHECK(*pb[i] == static_cast<double>(static_cast<float>(*pa[i])));
}
