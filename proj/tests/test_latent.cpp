// Copyright 2026 The segvar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "segvar/latent/transform.hpp"

using namespace segvar;

namespace {

latent::LatentConfig tiny_latent() {
  latent::LatentConfig c;
  c.num_classes = 2;
  c.grid_a = 2;
  c.size = 4;
  c.patch = 2;
  c.width = 8;
  c.layers = 1;
  c.heads = 2;
  return c;
}

vq::TokenizerConfig tiny_tok() {
  vq::TokenizerConfig c;
  c.input_size = 4;
  c.base_channels = 4;
  c.dim = 4;
  c.V = 8;
  c.scales = {1};
  return c;
}

// two vertical bars with background margins, categories 1 and 3
codec::InstanceMaskSet bars_8x8() {
  codec::InstanceMaskSet m;
  m.height = m.width = 8;
  m.task = codec::Task::instance;
  std::vector<uint8_t> a((size_t)64, 0), b((size_t)64, 0);
  for (int y = 1; y < 7; ++y) {
    for (int x = 0; x < 3; ++x) a[(size_t)(y * 8 + x)] = 1;
    for (int x = 5; x < 8; ++x) b[(size_t)(y * 8 + x)] = 1;
  }
  m.masks = {a, b};
  m.categories = {1, 3};
  return m;
}

}  // namespace

TEST_CASE("category_map and slot_map rasterize with painter order") {
  codec::InstanceMaskSet m;
  m.height = m.width = 4;
  std::vector<uint8_t> a((size_t)16, 0), b((size_t)16, 0);
  for (int i = 0; i < 8; ++i) a[(size_t)i] = 1;        // rows 0-1
  for (int i = 4; i < 12; ++i) b[(size_t)i] = 1;       // rows 1-2, overlaps row 1
  m.masks = {a, b};
  m.categories = {2, 1};

  const auto cats = latent::category_map(m, 3);
  CHECK(cats[0] == 2);
  CHECK(cats[5] == 1);   // overlap: the later instance wins
  CHECK(cats[15] == 0);  // background

  const auto slots = latent::slot_map(m, 2);
  const auto [ay, ax] = codec::centroid(a.data(), 4, 4);
  const auto [by, bx] = codec::centroid(b.data(), 4, 4);
  CHECK(slots[0] == codec::centroid_cell(ay, ax, 2, 4, 4));
  CHECK(slots[5] == codec::centroid_cell(by, bx, 2, 4, 4));
  CHECK(slots[15] == -1);

  codec::InstanceMaskSet bad = m;
  bad.categories = {2, 9};
  CHECK_THROWS((void)latent::category_map(bad, 3));
}

TEST_CASE("tokenizer input layout is S then M_c") {
  const int n = 6;
  std::vector<float> s((size_t)n * 3), mc((size_t)n * 3), out((size_t)n * 6);
  for (size_t i = 0; i < s.size(); ++i) {
    s[i] = 0.01f * (float)i;
    mc[i] = 1.0f - 0.01f * (float)i;
  }
  latent::make_tokenizer_input(s.data(), mc.data(), n, out.data());
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      CHECK(out[(size_t)(i * 6 + c)] == s[(size_t)(i * 3 + c)]);
      CHECK(out[(size_t)(i * 6 + 3 + c)] == mc[(size_t)(i * 3 + c)]);
    }

  std::vector<int> cats = {0, 2, 1};
  std::vector<float> oh(3 * 3);
  latent::write_onehot(cats.data(), 3, 2, oh.data());
  CHECK(oh[0] == 1.0f);
  CHECK(oh[5] == 1.0f);
  CHECK(oh[7] == 1.0f);
  CHECK(oh[1] + oh[2] + oh[3] + oh[4] + oh[6] + oh[8] == 0.0f);
}

TEST_CASE("colormap float conversion round-trips through a 6-channel grid") {
  const auto m = bars_8x8();
  const auto grid = codec::build_grid_colormap(2, codec::build_palette({0, 51, 102, 153, 204, 255}));
  const codec::ImageU8 mc = codec::encode_colormap(m, grid);

  std::vector<float> mc01((size_t)64 * 3), s((size_t)64 * 3, 0.5f), six((size_t)64 * 6);
  latent::colormap_to_float(mc, mc01.data());
  latent::make_tokenizer_input(s.data(), mc01.data(), 64, six.data());
  const codec::ImageU8 back = latent::colormap_from_six(six.data(), 8, 8);
  CHECK(back.data == mc.data);
}

TEST_CASE("patch transformer: shapes, determinism, zero head") {
  Rng rng(3);
  latent::PatchTransformer net;
  net.init("t", 4, 2, 2, 3, 8, 1, 2, rng);
  CHECK(net.tokens == 4);

  Rng xr(4);
  Tensor x({2, 4, 4, 2});
  for (int64_t i = 0; i < x.numel(); ++i) x.ptr()[i] = xr.uniform();
  const Tensor y1 = net.forward(x.ptr(), 2);
  const Tensor y2 = net.forward(x.ptr(), 2);
  CHECK(y1.shape == std::vector<int64_t>{2, 4, 4, 3});
  CHECK(std::memcmp(y1.ptr(), y2.ptr(), (size_t)y1.numel() * sizeof(float)) == 0);

  nn::init_const(net.proj_out.w, 0.0f);
  nn::init_const(net.proj_out.b, 0.0f);
  const Tensor y0 = net.forward(x.ptr(), 2);
  for (int64_t i = 0; i < y0.numel(); ++i) CHECK(y0.ptr()[i] == 0.0f);

  CHECK_THROWS(net.init("t", 5, 2, 2, 3, 8, 1, 2, rng));  // patch must divide
}

TEST_CASE("patch transformer: gradients match finite differences") {
  Rng rng(3);
  latent::PatchTransformer net;
  net.init("t", 4, 2, 2, 3, 8, 1, 2, rng);
  // inflate the residual stream well above eps so the layernorm curvature
  // stays out of the finite differences
  for (Tensor* t : {&net.proj_in.w.w, &net.proj_in.b.w, &net.pos.w})
    for (int64_t i = 0; i < t->numel(); ++i) t->ptr()[i] *= 8.0f;
  const int B = 2;
  Rng xr(4);
  Tensor x({(int64_t)B, 4, 4, 2}), r({(int64_t)B, 4, 4, 3});
  for (int64_t i = 0; i < x.numel(); ++i) x.ptr()[i] = xr.uniform() - 0.5f;
  for (int64_t i = 0; i < r.numel(); ++i) r.ptr()[i] = xr.uniform() - 0.5f;

  auto loss = [&]() {
    const Tensor y = net.forward(x.ptr(), B);
    double s = 0;
    for (int64_t i = 0; i < y.numel(); ++i) s += (double)y.ptr()[i] * (double)r.ptr()[i];
    return s;
  };

  std::vector<nn::Param*> ps;
  net.collect(ps);
  for (auto* p : ps) std::fill(p->g.data.begin(), p->g.data.end(), 0.0f);
  (void)net.forward(x.ptr(), B);
  Tensor dx({x.numel()});
  net.backward(x.ptr(), r.ptr(), B, dx.ptr());

  const float eps = 1e-2f;
  double worst = 0;
  auto fd_check = [&](float* w, double got) {
    const float keep = *w;
    *w = keep + eps;
    const double lp = loss();
    *w = keep - eps;
    const double lm = loss();
    *w = keep;
    const double fd = (lp - lm) / (2.0 * (double)eps);
    const double tol = 5e-4 + 1e-2 * std::abs(fd);
    worst = std::max(worst, std::abs(got - fd) / tol);
    CHECK(std::abs(got - fd) <= tol);
  };
  for (auto* p : ps) {
    const int64_t stride = std::max<int64_t>(1, p->numel() / 4);
    for (int64_t i = 0; i < p->numel(); i += stride)
      fd_check(p->w.ptr() + i, (double)p->g.ptr()[i]);
  }
  for (int64_t i = 0; i < x.numel(); i += 7) fd_check(x.ptr() + i, (double)dx.ptr()[i]);
  MESSAGE("patch transformer gradcheck worst |g-fd|/tol = " << worst);
}

TEST_CASE("latent encoder: sigmoid range and zero-head constant") {
  const auto cfg = tiny_latent();
  Rng rng(5);
  latent::LatentEncoder enc;
  enc.init(cfg, rng);

  std::vector<int> cats((size_t)16, 1);
  Tensor onehot({16, cfg.cat_channels()});
  latent::write_onehot(cats.data(), 16, cfg.num_classes, onehot.ptr());
  const Tensor s = enc.forward(onehot.ptr(), 1);
  CHECK(s.shape == std::vector<int64_t>{1, 4, 4, 3});
  for (int64_t i = 0; i < s.numel(); ++i) {
    CHECK(s.ptr()[i] > 0.0f);
    CHECK(s.ptr()[i] < 1.0f);
  }

  nn::init_const(enc.net.proj_out.w, 0.0f);
  nn::init_const(enc.net.proj_out.b, 0.0f);
  const Tensor s0 = enc.forward(onehot.ptr(), 1);
  for (int64_t i = 0; i < s0.numel(); ++i) CHECK(s0.ptr()[i] == 0.5f);
}

TEST_CASE("seglat_from_mask shape and determinism") {
  auto cfg = tiny_latent();
  cfg.num_classes = 3;
  cfg.size = 8;
  Rng rng(5);
  latent::LatentEncoder enc;
  enc.init(cfg, rng);
  const auto m = bars_8x8();
  const Tensor s1 = latent::seglat_from_mask(enc, m);
  const Tensor s2 = latent::seglat_from_mask(enc, m);
  CHECK(s1.shape == std::vector<int64_t>{1, 8, 8, 3});
  CHECK(std::memcmp(s1.ptr(), s2.ptr(), (size_t)s1.numel() * sizeof(float)) == 0);
}

TEST_CASE("decode_mask_logits: semantic argmax with shift invariance") {
  latent::LatentConfig cfg;
  cfg.num_classes = 3;
  cfg.grid_a = 2;
  cfg.size = 8;
  latent::MaskLogits ml;
  ml.height = ml.width = 8;
  ml.num_classes = 3;
  ml.slots = 4;
  ml.cat = Tensor({64, 4});
  ml.slot = Tensor({64, 4});
  for (int i = 0; i < 64; ++i) ml.cat.ptr()[i * 4 + (i < 32 ? 2 : 0)] = 10.0f;

  const auto grid = codec::build_grid_colormap(2, codec::build_palette({0, 51, 102, 153, 204, 255}));
  codec::ImageU8 mc(8, 8, 3);  // black; unused by the semantic path
  const auto hard = latent::decode_mask_logits(ml, mc, codec::Task::semantic, grid);
  REQUIRE(hard.masks.size() == 1);
  CHECK(hard.categories[0] == 2);
  CHECK(hard.task == codec::Task::semantic);
  for (int i = 0; i < 64; ++i) CHECK(hard.masks[0][(size_t)i] == (i < 32 ? 1 : 0));

  // adding a constant per pixel never changes the argmax
  latent::MaskLogits shifted = ml;
  shifted.cat = ml.cat;
  for (int i = 0; i < 64; ++i)
    for (int c = 0; c < 4; ++c) shifted.cat.ptr()[i * 4 + c] += 7.0f;
  const auto hard2 = latent::decode_mask_logits(shifted, mc, codec::Task::semantic, grid);
  REQUIRE(hard2.masks.size() == 1);
  CHECK(hard2.masks[0] == hard.masks[0]);

  // all-background logits -> empty set
  latent::MaskLogits bg = ml;
  bg.cat = Tensor({64, 4});
  const auto none = latent::decode_mask_logits(bg, mc, codec::Task::semantic, grid);
  CHECK(none.masks.empty());
}

TEST_CASE("decode_mask_logits: instance identities from colormap, pixels from slots") {
  const auto gt = bars_8x8();
  const auto grid = codec::build_grid_colormap(2, codec::build_palette({0, 51, 102, 153, 204, 255}));
  const codec::ImageU8 mc = codec::encode_colormap(gt, grid);

  latent::MaskLogits ml;
  ml.height = ml.width = 8;
  ml.num_classes = 3;
  ml.slots = 4;
  ml.cat = Tensor({64, 4});
  ml.slot = Tensor({64, 4});
  const auto cats = latent::category_map(gt, 3);
  const auto slots = latent::slot_map(gt, 2);
  for (int i = 0; i < 64; ++i) {
    ml.cat.ptr()[i * 4 + cats[(size_t)i]] = 10.0f;
    if (slots[(size_t)i] >= 0) ml.slot.ptr()[i * 4 + slots[(size_t)i]] = 10.0f;
  }

  const auto hard = latent::decode_mask_logits(ml, mc, codec::Task::instance, grid);
  REQUIRE(hard.masks.size() == 2);
  CHECK(hard.masks[0] == gt.masks[0]);
  CHECK(hard.masks[1] == gt.masks[1]);
  CHECK(hard.categories == gt.categories);

  // majority vote tolerates a mislabeled pixel
  latent::MaskLogits noisy = ml;
  noisy.cat = ml.cat;
  noisy.cat.ptr()[(1 * 8 + 0) * 4 + 1] = 0.0f;
  noisy.cat.ptr()[(1 * 8 + 0) * 4 + 3] = 10.0f;
  const auto hard2 = latent::decode_mask_logits(noisy, mc, codec::Task::instance, grid);
  REQUIRE(hard2.categories.size() == 2);
  CHECK(hard2.categories == gt.categories);

  // background-argmax pixels never join an instance
  latent::MaskLogits fgless = ml;
  fgless.cat = Tensor({64, 4});  // argmax 0 everywhere
  const auto hard3 = latent::decode_mask_logits(fgless, mc, codec::Task::instance, grid);
  CHECK(hard3.masks.empty());

  // an all-background colormap yields no instances, whatever the logits say
  codec::ImageU8 black(8, 8, 3);
  const auto hard4 = latent::decode_mask_logits(ml, black, codec::Task::panoptic, grid);
  CHECK(hard4.masks.empty());
}

TEST_CASE("stage 2: loss values on a zeroed recovery head") {
  const auto lc = tiny_latent();
  Rng rng(5);
  latent::LatentEncoder enc;
  latent::LatentDecoder dec;
  vq::Tokenizer tok;
  enc.init(lc, rng);
  dec.init(lc, rng);
  tok.init(tiny_tok(), rng);
  nn::init_const(dec.net.proj_out.w, 0.0f);
  nn::init_const(dec.net.proj_out.b, 0.0f);

  const int B = 2;
  const int64_t n = 16;
  Rng xr(9);
  std::vector<int> cats((size_t)(B * n)), slot_t((size_t)(B * n));
  for (auto& c : cats) c = (int)xr.uniform_int(lc.num_classes + 1);
  for (auto& s : slot_t) s = (int)xr.uniform_int(lc.slot_channels() + 1) - 1;
  slot_t[0] = 1;  // ensure coverage
  Tensor onehot({B * n, lc.cat_channels()}), mc01({B * n, 3});
  latent::write_onehot(cats.data(), B * n, lc.num_classes, onehot.ptr());
  for (int64_t i = 0; i < mc01.numel(); ++i) mc01.ptr()[i] = xr.uniform();

  latent::Stage2Graph graph(tok, enc, dec);
  const auto out = graph.forward(onehot.ptr(), mc01.ptr(), cats.data(), slot_t.data(), B);

  // uniform logits: CE is exactly ln of each head's arity
  const double want = std::log((double)lc.cat_channels()) + std::log((double)lc.slot_channels());
  CHECK(out.recovery == doctest::Approx(want).epsilon(1e-12));
  CHECK(out.total == out.recon + out.recovery);

  // recon term equals an independent recompute
  double mse = 0;
  for (int64_t i = 0; i < out.xhat.numel(); ++i) {
    const double d = (double)out.xhat.ptr()[i] - (double)out.six.ptr()[i];
    mse += d * d;
  }
  mse /= (double)out.xhat.numel();
  CHECK(out.recon == doctest::Approx(mse).epsilon(1e-6));

  // posterior tokens follow the schedule
  REQUIRE(out.tokens.size() == 1);
  CHECK(out.tokens[0].size() == (size_t)B);

  // semantic batches skip the slot term
  const auto sem = graph.forward(onehot.ptr(), mc01.ptr(), cats.data(), nullptr, B);
  CHECK(sem.recovery == doctest::Approx(std::log((double)lc.cat_channels())).epsilon(1e-12));

  // determinism
  const auto again = graph.forward(onehot.ptr(), mc01.ptr(), cats.data(), slot_t.data(), B);
  CHECK(again.total == out.total);
}

namespace {

// stage-2 loss with the quantizer's contribution frozen at the base point:
// st = feat + delta0. Finite differences on this surrogate equal the
// straight-through gradients of the real graph.
double stage2_surrogate(vq::Tokenizer& tok, latent::LatentEncoder& enc,
                        latent::LatentDecoder& dec, const float* onehot, const float* mc01,
                        const std::vector<int>& cat_t, const std::vector<int>& slot_t, int B,
                        const Tensor& delta0) {
  const auto& lc = enc.cfg;
  const int64_t n = (int64_t)lc.size * lc.size;
  const Tensor s = enc.forward(onehot, B);
  Tensor six({(int64_t)B * n, 6});
  latent::make_tokenizer_input(s.ptr(), mc01, B * n, six.ptr());
  const Tensor feat = tok.encode(vq::Branch::seglat, six.ptr(), B);
  Tensor st(feat.shape);
  for (int64_t i = 0; i < feat.numel(); ++i) st.ptr()[i] = feat.ptr()[i] + delta0.ptr()[i];
  const Tensor xhat = tok.decode(vq::Branch::seglat, st.ptr(), B);
  const Tensor logits = dec.forward(xhat.ptr(), B);

  double recon = 0;
  for (int64_t i = 0; i < xhat.numel(); ++i) {
    const double d = (double)xhat.ptr()[i] - (double)six.ptr()[i];
    recon += d * d;
  }
  recon /= (double)xhat.numel();

  const int cc = lc.cat_channels(), sc = lc.slot_channels(), C = cc + sc;
  int64_t covered = 0;
  for (const int t : slot_t) covered += t >= 0;
  double cat = 0, slot = 0;
  for (int64_t i = 0; i < (int64_t)B * n; ++i) {
    const float* l = logits.ptr() + i * C;
    double mx = l[0];
    for (int v = 1; v < cc; ++v) mx = std::max(mx, (double)l[v]);
    double z = 0;
    for (int v = 0; v < cc; ++v) z += std::exp((double)l[v] - mx);
    cat += mx + std::log(z) - (double)l[cat_t[(size_t)i]];
    if (slot_t[(size_t)i] >= 0) {
      const float* ls = l + cc;
      double mxs = ls[0];
      for (int v = 1; v < sc; ++v) mxs = std::max(mxs, (double)ls[v]);
      double zs = 0;
      for (int v = 0; v < sc; ++v) zs += std::exp((double)ls[v] - mxs);
      slot += mxs + std::log(zs) - (double)ls[slot_t[(size_t)i]];
    }
  }
  return recon + cat / (double)(B * n) + (covered ? slot / (double)covered : 0.0);
}

}  // namespace

TEST_CASE("stage 2: straight-through gradients match the frozen surrogate") {
  const auto lc = tiny_latent();
  Rng rng(5);
  latent::LatentEncoder enc;
  latent::LatentDecoder dec;
  vq::Tokenizer tok;
  enc.init(lc, rng);
  dec.init(lc, rng);
  tok.init(tiny_tok(), rng);
  for (int64_t i = 0; i < tok.dec_lat.d4.b.w.numel(); ++i)
    tok.dec_lat.d4.b.w.ptr()[i] = 0.5f;  // keep outputs off the clamp rails

  const int B = 2;
  const int64_t n = 16;
  const int base = tok.cfg.base_size();
  Rng xr(9);
  std::vector<int> cats((size_t)(B * n)), slot_t((size_t)(B * n));
  for (auto& c : cats) c = (int)xr.uniform_int(lc.num_classes + 1);
  for (auto& s : slot_t) s = (int)xr.uniform_int(lc.slot_channels() + 1) - 1;
  slot_t[3] = 0;
  Tensor onehot({B * n, lc.cat_channels()}), mc01({B * n, 3});
  latent::write_onehot(cats.data(), B * n, lc.num_classes, onehot.ptr());
  for (int64_t i = 0; i < mc01.numel(); ++i) mc01.ptr()[i] = xr.uniform();

  // freeze the quantizer residual at the base point
  const Tensor s0 = enc.forward(onehot.ptr(), B);
  Tensor six0({(int64_t)B * n, 6});
  latent::make_tokenizer_input(s0.ptr(), mc01.ptr(), B * n, six0.ptr());
  const Tensor feat0 = tok.encode(vq::Branch::seglat, six0.ptr(), B);
  const auto qr0 = tok.quant.quantize(feat0.ptr(), B, base, base, tok.schedule);
  Tensor delta0(feat0.shape);
  for (int64_t i = 0; i < feat0.numel(); ++i)
    delta0.ptr()[i] = qr0.recon.ptr()[i] - feat0.ptr()[i];

  auto surrogate = [&]() {
    return stage2_surrogate(tok, enc, dec, onehot.ptr(), mc01.ptr(), cats, slot_t, B, delta0);
  };

  std::vector<nn::Param*> ps;
  enc.collect(ps);
  dec.collect(ps);
  tok.enc_lat.collect(ps);
  tok.dec_lat.collect(ps);
  for (auto* p : ps) std::fill(p->g.data.begin(), p->g.data.end(), 0.0f);

  latent::Stage2Graph graph(tok, enc, dec);
  const auto out = graph.forward(onehot.ptr(), mc01.ptr(), cats.data(), slot_t.data(), B);
  graph.backward();
  CHECK(out.total == doctest::Approx(surrogate()).epsilon(1e-5));

  std::vector<Tensor> grads;
  grads.reserve(ps.size());
  for (auto* p : ps) grads.push_back(p->g);

  const float eps = 5e-3f;
  double worst = 0;
  for (size_t pi = 0; pi < ps.size(); ++pi) {
    nn::Param* p = ps[pi];
    const int64_t stride = std::max<int64_t>(1, p->numel() / 3);
    for (int64_t i = 0; i < p->numel(); i += stride) {
      float* w = p->w.ptr() + i;
      const float keep = *w;
      *w = keep + eps;
      const double lp = surrogate();
      *w = keep - eps;
      const double lm = surrogate();
      *w = keep;
      const double fd = (lp - lm) / (2.0 * (double)eps);
      const double got = (double)grads[pi].ptr()[i];
      const double tol = 2e-3 + 2e-2 * std::max(std::abs(fd), std::abs(got));
      worst = std::max(worst, std::abs(got - fd) / tol);
      CHECK(std::abs(got - fd) <= tol);
    }
  }
  MESSAGE("stage-2 gradcheck worst |g-fd|/tol = " << worst);
}

TEST_CASE("stage 2: parameter round trip through save/load") {
  const auto lc = tiny_latent();
  Rng r1(5), r2(6);
  latent::LatentEncoder a, b;
  a.init(lc, r1);
  b.init(lc, r2);
  std::vector<nn::Param*> pa, pb;
  a.collect(pa);
  b.collect(pb);
  CHECK(nn::hash_params(pa) != nn::hash_params(pb));
  const char* path = "latent_roundtrip.bin";
  {
    BinWriter w(path);
    nn::save_params(w, pa);
  }
  {
    BinReader r(path);
    nn::load_params(r, pb);
  }
  std::remove(path);
  CHECK(nn::hash_params(pa) == nn::hash_params(pb));
}
