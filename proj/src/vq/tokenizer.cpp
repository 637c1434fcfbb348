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

#include "segvar/vq/tokenizer.hpp"

#include <cmath>
#include <cstring>

#include "segvar/core/error.hpp"
#include "segvar/simd/simd.hpp"

namespace segvar::vq {

ScaleSchedule make_schedule(const std::vector<int>& sides, int base_size) {
  check(!sides.empty(), "scale schedule is empty");
  ScaleSchedule s;
  int prev = 0;
  for (int side : sides) {
    check(side >= 1, "scale side must be >= 1");
    check(side * side > prev, "scale areas must be strictly increasing");
    prev = side * side;
    s.sizes.emplace_back(side, side);
  }
  check(sides.back() == base_size, "last scale must match the base feature size");
  return s;
}

// ---------------------------------------------------------------------------
// EncoderStack

namespace {

float conv_std(int k, int cin) { return std::sqrt(2.0f / (float)(k * k * cin)); }

}  // namespace

void EncoderStack::init(const std::string& name, int cin, int base, int dim, Rng& rng) {
  c1.init(name + ".c1", cin, base, 3, 1, 1, rng, conv_std(3, cin));
  c2.init(name + ".c2", base, 2 * base, 3, 2, 1, rng, conv_std(3, base));
  c3.init(name + ".c3", 2 * base, 2 * base, 3, 2, 1, rng, conv_std(3, 2 * base));
  c4.init(name + ".c4", 2 * base, dim, 3, 1, 1, rng, conv_std(3, 2 * base));
}

void EncoderStack::forward(const float* x, int B, int H, int W, float* feat) {
  const int base = (int)c1.w.w.dim(0);
  const int h2 = H / 2, w2 = W / 2, h4 = H / 4, w4 = W / 4;
  a1_ = Tensor({B, H, W, base});
  c1.forward(x, B, H, W, a1_.ptr());
  s1_ = Tensor({B, H, W, base});
  simd::silu(a1_.numel(), a1_.ptr(), s1_.ptr());
  a2_ = Tensor({B, h2, w2, 2 * base});
  c2.forward(s1_.ptr(), B, H, W, a2_.ptr());
  s2_ = Tensor({B, h2, w2, 2 * base});
  simd::silu(a2_.numel(), a2_.ptr(), s2_.ptr());
  a3_ = Tensor({B, h4, w4, 2 * base});
  c3.forward(s2_.ptr(), B, h2, w2, a3_.ptr());
  s3_ = Tensor({B, h4, w4, 2 * base});
  simd::silu(a3_.numel(), a3_.ptr(), s3_.ptr());
  c4.forward(s3_.ptr(), B, h4, w4, feat);
}

void EncoderStack::backward(const float* x, const float* dfeat, int B, int H, int W, float* dx) {
  const int h2 = H / 2, w2 = W / 2, h4 = H / 4, w4 = W / 4;
  Tensor ds3(s3_.shape);
  c4.backward(s3_.ptr(), dfeat, B, h4, w4, ds3.ptr(), false);
  Tensor da3(a3_.shape);
  simd::silu_backward(a3_.numel(), a3_.ptr(), ds3.ptr(), da3.ptr());
  Tensor ds2(s2_.shape);
  c3.backward(s2_.ptr(), da3.ptr(), B, h2, w2, ds2.ptr(), false);
  Tensor da2(a2_.shape);
  simd::silu_backward(a2_.numel(), a2_.ptr(), ds2.ptr(), da2.ptr());
  Tensor ds1(s1_.shape);
  c2.backward(s1_.ptr(), da2.ptr(), B, H, W, ds1.ptr(), false);
  Tensor da1(a1_.shape);
  simd::silu_backward(a1_.numel(), a1_.ptr(), ds1.ptr(), da1.ptr());
  c1.backward(x, da1.ptr(), B, H, W, dx, false);
}

void EncoderStack::collect(std::vector<nn::Param*>& out) {
  c1.collect(out);
  c2.collect(out);
  c3.collect(out);
  c4.collect(out);
}

// ---------------------------------------------------------------------------
// DecoderStack

void DecoderStack::init(const std::string& name, int dim, int base, int cout, Rng& rng) {
  d1.init(name + ".d1", dim, 2 * base, 3, 1, 1, rng, conv_std(3, dim));
  d2.init(name + ".d2", 2 * base, 2 * base, 3, 1, 1, rng, conv_std(3, 2 * base));
  d3.init(name + ".d3", 2 * base, base, 3, 1, 1, rng, conv_std(3, 2 * base));
  d4.init(name + ".d4", base, cout, 3, 1, 1, rng, conv_std(3, base));
}

void DecoderStack::forward(const float* feat, int B, int h, int w, float* out) {
  const int c2 = (int)d1.w.w.dim(0);  // 2*base
  const int base = (int)d3.w.w.dim(0);
  const int cout = (int)d4.w.w.dim(0);
  const int h2 = 2 * h, w2 = 2 * w, h4 = 4 * h, w4 = 4 * w;
  b1_ = Tensor({B, h, w, c2});
  d1.forward(feat, B, h, w, b1_.ptr());
  t1_ = Tensor({B, h, w, c2});
  simd::silu(b1_.numel(), b1_.ptr(), t1_.ptr());
  u1_ = Tensor({B, h2, w2, c2});
  nn::upsample_nearest(t1_.ptr(), B, h, w, c2, h2, w2, u1_.ptr());
  b2_ = Tensor({B, h2, w2, c2});
  d2.forward(u1_.ptr(), B, h2, w2, b2_.ptr());
  t2_ = Tensor({B, h2, w2, c2});
  simd::silu(b2_.numel(), b2_.ptr(), t2_.ptr());
  u2_ = Tensor({B, h4, w4, c2});
  nn::upsample_nearest(t2_.ptr(), B, h2, w2, c2, h4, w4, u2_.ptr());
  b3_ = Tensor({B, h4, w4, base});
  d3.forward(u2_.ptr(), B, h4, w4, b3_.ptr());
  t3_ = Tensor({B, h4, w4, base});
  simd::silu(b3_.numel(), b3_.ptr(), t3_.ptr());
  pre_ = Tensor({B, h4, w4, cout});
  d4.forward(t3_.ptr(), B, h4, w4, pre_.ptr());
  nn::clamp01(pre_.ptr(), pre_.numel(), out);
}

void DecoderStack::backward(const float* feat, const float* dout, int B, int h, int w,
                            float* dfeat) {
  const int c2 = (int)d1.w.w.dim(0);
  const int h2 = 2 * h, w2 = 2 * w, h4 = 4 * h, w4 = 4 * w;
  Tensor dpre(pre_.shape);
  nn::clamp01_backward(pre_.ptr(), dout, pre_.numel(), dpre.ptr(), false);
  Tensor dt3(t3_.shape);
  d4.backward(t3_.ptr(), dpre.ptr(), B, h4, w4, dt3.ptr(), false);
  Tensor db3(b3_.shape);
  simd::silu_backward(b3_.numel(), b3_.ptr(), dt3.ptr(), db3.ptr());
  Tensor du2(u2_.shape);
  d3.backward(u2_.ptr(), db3.ptr(), B, h4, w4, du2.ptr(), false);
  Tensor dt2(t2_.shape);
  nn::upsample_nearest_backward(du2.ptr(), B, h2, w2, c2, h4, w4, dt2.ptr());
  Tensor db2(b2_.shape);
  simd::silu_backward(b2_.numel(), b2_.ptr(), dt2.ptr(), db2.ptr());
  Tensor du1(u1_.shape);
  d2.backward(u1_.ptr(), db2.ptr(), B, h2, w2, du1.ptr(), false);
  Tensor dt1(t1_.shape);
  nn::upsample_nearest_backward(du1.ptr(), B, h, w, c2, h2, w2, dt1.ptr());
  Tensor db1(b1_.shape);
  simd::silu_backward(b1_.numel(), b1_.ptr(), dt1.ptr(), db1.ptr());
  d1.backward(feat, db1.ptr(), B, h, w, dfeat, false);
}

void DecoderStack::collect(std::vector<nn::Param*>& out) {
  d1.collect(out);
  d2.collect(out);
  d3.collect(out);
  d4.collect(out);
}

// ---------------------------------------------------------------------------
// PyramidQuantizer

void PyramidQuantizer::init(int V, int dim, Rng& rng, float init_std) {
  check(V >= 2, "codebook needs at least two entries");
  codebook.init_shape("quant.codebook", {V, dim});
  nn::init_normal(codebook, rng, init_std);
  // Zero row: guarantees monotone refinement (a residual's nearest code is
  // never worse than adding nothing) and a deterministic all-zero example.
  std::memset(codebook.w.ptr(), 0, (size_t)dim * sizeof(float));
}

// Writes the nearest-codebook index of each row into idx. Distance is
// ||r - c||^2 = ||r||^2 - 2<r,c> + ||c||^2; the row norm is constant per row
// so argmin over (||c||^2 - 2<r,c>) suffices. Ties go to the lowest index.
static void nearest_rows(const float* rows, int n, const nn::Param& codebook, int* idx) {
  const int V = (int)codebook.w.dim(0);
  const int dim = (int)codebook.w.dim(1);
  std::vector<float> cnorm((size_t)V);
  for (int v = 0; v < V; ++v) {
    const float* c = codebook.w.ptr() + (int64_t)v * dim;
    cnorm[(size_t)v] = simd::dot(dim, c, c);
  }
  Tensor scores({n, V});
  simd::gemm(false, true, n, V, dim, 1.0f, rows, dim, codebook.w.ptr(), dim, 0.0f, scores.ptr(),
             V);
  float* s = scores.ptr();
  for (int64_t i = 0; i < (int64_t)n * V; ++i) {
    s[i] = cnorm[(size_t)(i % V)] - 2.0f * s[i];
  }
  simd::argmin_rows(n, V, s, idx);
}

QuantizeResult PyramidQuantizer::quantize(const float* feat, int B, int H, int W,
                                          const ScaleSchedule& sched,
                                          std::vector<float>* residual_rows) const {
  const int d = dim();
  const int Hb = H, Wb = W;
  for (auto [h, w] : sched.sizes) {
    check(h >= 1 && w >= 1 && Hb % h == 0 && Wb % w == 0,
          "scale sizes must divide the feature map size");
  }
  QuantizeResult out;
  out.recon = Tensor({B, Hb, Wb, d});
  Tensor r({B, Hb, Wb, d});
  std::memcpy(r.ptr(), feat, (size_t)r.numel() * sizeof(float));
  out.tokens.resize((size_t)sched.K());
  for (int k = 0; k < sched.K(); ++k) {
    auto [h, w] = sched.sizes[(size_t)k];
    const int n = B * h * w;
    Tensor down({B, h, w, d});
    nn::downsample_area(r.ptr(), B, Hb, Wb, d, h, w, down.ptr());
    if (residual_rows) {
      residual_rows->insert(residual_rows->end(), down.ptr(), down.ptr() + down.numel());
    }
    auto& tk = out.tokens[(size_t)k];
    tk.resize((size_t)n);
    nearest_rows(down.ptr(), n, codebook, tk.data());
    Tensor q({B, h, w, d});
    for (int i = 0; i < n; ++i) {
      std::memcpy(q.ptr() + (int64_t)i * d, codebook.w.ptr() + (int64_t)tk[(size_t)i] * d,
                  (size_t)d * sizeof(float));
    }
    Tensor up({B, Hb, Wb, d});
    nn::upsample_nearest(q.ptr(), B, h, w, d, Hb, Wb, up.ptr());
    simd::axpby(up.numel(), 1.0f, up.ptr(), 1.0f, out.recon.ptr());
    simd::axpby(up.numel(), -1.0f, up.ptr(), 1.0f, r.ptr());
  }
  return out;
}

Tensor PyramidQuantizer::dequantize(const TokenPyramid& tokens, int B, int H, int W,
                                    const ScaleSchedule& sched, int n_scales) const {
  const int d = dim();
  const int Hb = H, Wb = W;
  const int upto = n_scales < 0 ? sched.K() : n_scales;
  check(upto <= (int)tokens.size() && upto <= sched.K(), "n_scales out of range");
  Tensor recon({B, Hb, Wb, d});
  for (int k = 0; k < upto; ++k) {
    auto [h, w] = sched.sizes[(size_t)k];
    const int n = B * h * w;
    check((int)tokens[(size_t)k].size() == n, "token grid size mismatch");
    Tensor q({B, h, w, d});
    for (int i = 0; i < n; ++i) {
      const int t = tokens[(size_t)k][(size_t)i];
      check(t >= 0 && t < V(), "token id out of range");
      std::memcpy(q.ptr() + (int64_t)i * d, codebook.w.ptr() + (int64_t)t * d,
                  (size_t)d * sizeof(float));
    }
    Tensor up({B, Hb, Wb, d});
    nn::upsample_nearest(q.ptr(), B, h, w, d, Hb, Wb, up.ptr());
    simd::axpby(up.numel(), 1.0f, up.ptr(), 1.0f, recon.ptr());
  }
  return recon;
}

void PyramidQuantizer::backward_codebook(const TokenPyramid& tokens, const float* drecon, int B,
                                         int H, int W, const ScaleSchedule& sched) {
  const int d = dim();
  const int Hb = H, Wb = W;
  for (int k = 0; k < sched.K(); ++k) {
    auto [h, w] = sched.sizes[(size_t)k];
    const int n = B * h * w;
    Tensor dq({B, h, w, d});
    nn::upsample_nearest_backward(drecon, B, h, w, d, Hb, Wb, dq.ptr());
    for (int i = 0; i < n; ++i) {
      const int t = tokens[(size_t)k][(size_t)i];
      simd::axpby(d, 1.0f, dq.ptr() + (int64_t)i * d, 1.0f,
                  codebook.g.ptr() + (int64_t)t * d);
    }
  }
}

int PyramidQuantizer::reseed_dead(const std::vector<int64_t>& counts,
                                  const std::vector<float>& reservoir, Rng& rng) {
  const int d = dim();
  check((int)counts.size() == V(), "usage counts size mismatch");
  check(reservoir.size() % (size_t)d == 0, "reservoir is not a whole number of rows");
  const int64_t rows = (int64_t)(reservoir.size() / (size_t)d);
  if (rows == 0) return 0;
  int reseeded = 0;
  for (int v = 0; v < V(); ++v) {
    if (counts[(size_t)v] != 0) continue;
    const int64_t r = rng.uniform_int(rows);
    std::memcpy(codebook.w.ptr() + (int64_t)v * d, reservoir.data() + r * d,
                (size_t)d * sizeof(float));
    ++reseeded;
  }
  return reseeded;
}

// ---------------------------------------------------------------------------
// Tokenizer

void Tokenizer::init(const TokenizerConfig& c, Rng& rng) {
  cfg = c;
  check(cfg.input_size % 4 == 0, "input size must be divisible by the encoder stride");
  schedule = make_schedule(cfg.scales, cfg.base_size());
  enc_img.init("enc_img", cfg.img_channels, cfg.base_channels, cfg.dim, rng);
  enc_lat.init("enc_lat", cfg.lat_channels, cfg.base_channels, cfg.dim, rng);
  dec_img.init("dec_img", cfg.dim, cfg.base_channels, cfg.img_channels, rng);
  dec_lat.init("dec_lat", cfg.dim, cfg.base_channels, cfg.lat_channels, rng);
  quant.init(cfg.V, cfg.dim, rng);
}

Tensor Tokenizer::encode(Branch br, const float* x, int B) {
  const int hw = cfg.input_size, b = cfg.base_size();
  Tensor feat({B, b, b, cfg.dim});
  (br == Branch::image ? enc_img : enc_lat).forward(x, B, hw, hw, feat.ptr());
  return feat;
}

Tensor Tokenizer::decode(Branch br, const float* feat, int B) {
  const int b = cfg.base_size();
  const int C = br == Branch::image ? cfg.img_channels : cfg.lat_channels;
  Tensor out({B, cfg.input_size, cfg.input_size, C});
  (br == Branch::image ? dec_img : dec_lat).forward(feat, B, b, b, out.ptr());
  return out;
}

TokenPyramid Tokenizer::tokenize(Branch br, const float* x, int B) {
  Tensor feat = encode(br, x, B);
  return quant.quantize(feat.ptr(), B, cfg.base_size(), cfg.base_size(), schedule).tokens;
}

Tensor Tokenizer::detokenize(Branch br, const TokenPyramid& tokens, int B) {
  Tensor feat = quant.dequantize(tokens, B, cfg.base_size(), cfg.base_size(), schedule);
  return decode(br, feat.ptr(), B);
}

TokenizerLossOut Tokenizer::loss_forward(Branch br, const float* x, int B,
                                         std::vector<float>* residual_rows) {
  Cache& c = cache(br);
  c.feat = encode(br, x, B);
  QuantizeResult qr =
      quant.quantize(c.feat.ptr(), B, cfg.base_size(), cfg.base_size(), schedule, residual_rows);
  c.tokens = std::move(qr.tokens);
  c.st = std::move(qr.recon);  // forward value of f + sg(q - f)
  c.xhat = decode(br, c.st.ptr(), B);

  TokenizerLossOut out;
  out.tokens = c.tokens;
  out.xhat = c.xhat;
  const int64_t nx = c.xhat.numel();
  const int64_t nf = c.feat.numel();
  const double dist = (double)simd::reduce_sq_diff(nf, c.feat.ptr(), c.st.ptr()) / (double)nf;
  out.recon = (double)simd::reduce_sq_diff(nx, c.xhat.ptr(), x) / (double)nx;
  out.commit = (double)cfg.beta * dist;
  out.codebook = dist;
  out.total = out.recon + out.commit + out.codebook;

  c.dxhat = Tensor(c.xhat.shape);
  float* d = c.dxhat.ptr();
  const float* xh = c.xhat.ptr();
  const float inv = 2.0f / (float)nx;
  for (int64_t i = 0; i < nx; ++i) d[i] = inv * (xh[i] - x[i]);
  return out;
}

void Tokenizer::loss_backward(Branch br, const float* x, int B) {
  Cache& c = cache(br);
  check(c.feat.numel() > 0, "loss_backward without a matching loss_forward");
  const int b = cfg.base_size();
  const int64_t nf = c.feat.numel();

  // Reconstruction path: dL/dxhat through the decoder; the straight-through
  // estimator passes the incoming gradient to the encoder features unchanged.
  Tensor dst(c.st.shape);
  (br == Branch::image ? dec_img : dec_lat)
      .backward(c.st.ptr(), c.dxhat.ptr(), B, b, b, dst.ptr());

  // Commitment term: d/df beta*||f - sg(q)||^2 / nf.
  Tensor dfeat = dst;
  {
    float* df = dfeat.ptr();
    const float* f = c.feat.ptr();
    const float* q = c.st.ptr();
    const float scale = 2.0f * cfg.beta / (float)nf;
    for (int64_t i = 0; i < nf; ++i) df[i] += scale * (f[i] - q[i]);
  }
  (br == Branch::image ? enc_img : enc_lat)
      .backward(x, dfeat.ptr(), B, cfg.input_size, cfg.input_size, nullptr);

  // Codebook term: d/dq ||sg(f) - q||^2 / nf, routed through the upsample
  // adjoints onto the assigned codebook rows.
  Tensor dq(c.st.shape);
  {
    float* d = dq.ptr();
    const float* f = c.feat.ptr();
    const float* q = c.st.ptr();
    const float scale = 2.0f / (float)nf;
    for (int64_t i = 0; i < nf; ++i) d[i] = scale * (q[i] - f[i]);
  }
  quant.backward_codebook(c.tokens, dq.ptr(), B, cfg.base_size(), cfg.base_size(), schedule);
}

void Tokenizer::collect(std::vector<nn::Param*>& out) {
  enc_img.collect(out);
  dec_img.collect(out);
  enc_lat.collect(out);
  dec_lat.collect(out);
  out.push_back(&quant.codebook);
}

void Tokenizer::save(BinWriter& w) {
  std::vector<nn::Param*> ps;
  collect(ps);
  nn::save_params(w, ps);
}

void Tokenizer::load(BinReader& r) {
  std::vector<nn::Param*> ps;
  collect(ps);
  nn::load_params(r, ps);
}

}  // namespace segvar::vq
