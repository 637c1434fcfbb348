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

#include "segvar/img/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "segvar/core/error.hpp"
#include "segvar/simd/simd.hpp"

namespace segvar::img {

namespace {

float conv_std(int k, int cin) { return std::sqrt(2.0f / (float)(k * k * cin)); }

// Row-wise cross entropy in doubles, mirroring the prior's objective.
// dlogits receives (softmax - onehot) * inv_count.
double ce_and_grad(const float* logits, const int* targets, int64_t rows, int V,
                   double inv_count, float* dlogits) {
  double total = 0;
  for (int64_t i = 0; i < rows; ++i) {
    const float* l = logits + i * V;
    float* d = dlogits + i * V;
    const int t = targets[i];
    check(t >= 0 && t < V, "teacher token out of range");
    double mx = l[0];
    for (int v = 1; v < V; ++v) mx = std::max(mx, (double)l[v]);
    double z = 0;
    for (int v = 0; v < V; ++v) z += std::exp((double)l[v] - mx);
    const double lse = mx + std::log(z);
    total += lse - (double)l[t];
    for (int v = 0; v < V; ++v) {
      const double p = std::exp((double)l[v] - lse);
      d[v] = (float)((p - (v == t ? 1.0 : 0.0)) * inv_count);
    }
  }
  return total * inv_count;
}

}  // namespace

void ResBlock::init(const std::string& name, int cin, int cout, int stride, Rng& rng) {
  proj_ = stride != 1 || cin != cout;
  c1.init(name + ".c1", cin, cout, 3, stride, 1, rng, conv_std(3, cin));
  c2.init(name + ".c2", cout, cout, 3, 1, 1, rng, conv_std(3, cout));
  if (proj_) skip.init(name + ".skip", cin, cout, 1, stride, 0, rng, conv_std(1, cin));
}

void ResBlock::forward(const float* x, int B, int H, int W, float* y) {
  const int h = out_h(H), w = out_w(W);
  const int64_t n = (int64_t)B * h * w * c1.cout;
  a1_ = Tensor({B, h, w, c1.cout});
  c1.forward(x, B, H, W, a1_.ptr());
  s1_ = Tensor({B, h, w, c1.cout});
  simd::silu(n, a1_.ptr(), s1_.ptr());
  c2.forward(s1_.ptr(), B, h, w, y);
  if (proj_) {
    Tensor sk({B, h, w, c1.cout});
    skip.forward(x, B, H, W, sk.ptr());
    simd::axpby(n, 1.0f, sk.ptr(), 1.0f, y);
  } else {
    simd::axpby(n, 1.0f, x, 1.0f, y);
  }
}

void ResBlock::backward(const float* x, const float* dy, int B, int H, int W, float* dx) {
  const int h = out_h(H), w = out_w(W);
  const int64_t n = (int64_t)B * h * w * c1.cout;
  Tensor ds1({B, h, w, c1.cout});
  c2.backward(s1_.ptr(), dy, B, h, w, ds1.ptr(), false);
  Tensor da1({B, h, w, c1.cout});
  simd::silu_backward(n, a1_.ptr(), ds1.ptr(), da1.ptr());
  c1.backward(x, da1.ptr(), B, H, W, dx, false);
  if (proj_) {
    skip.backward(x, dy, B, H, W, dx, /*accum_dx=*/dx != nullptr);
  } else if (dx) {
    simd::axpby(n, 1.0f, dy, 1.0f, dx);
  }
}

void ResBlock::collect(std::vector<nn::Param*>& out) {
  c1.collect(out);
  c2.collect(out);
  if (proj_) skip.collect(out);
}

void ImageEncoder::init(const EncoderConfig& c, Rng& rng) {
  cfg = c;
  check(cfg.V >= 2 && cfg.width >= 1 && cfg.fusion_layers >= 1, "invalid encoder config");
  check(cfg.width % cfg.heads == 0, "width must divide into heads");
  check(cfg.base_ch >= 1 && cfg.in_ch >= 1, "invalid encoder config");
  schedule = vq::make_schedule(cfg.scales, cfg.base_size());
  check(cfg.size == 4 * cfg.base_size(), "input size must be 4x the final scale");

  const float std = 0.02f;
  const int C = cfg.base_ch;
  b1.init("img.b1", cfg.in_ch, C, 1, rng);
  b2.init("img.b2", C, 2 * C, 2, rng);
  b3.init("img.b3", 2 * C, 2 * C, 2, rng);
  b4.init("img.b4", 2 * C, 2 * C, 1, rng);
  proj.init("img.proj", 2 * C, cfg.width, rng, std);
  const int base = cfg.base_size();
  fuse_pos.init_shape("img.fuse_pos", {(int64_t)base * base, cfg.width});
  nn::init_normal(fuse_pos, rng, std);
  blocks.resize((size_t)cfg.fusion_layers);
  for (int i = 0; i < cfg.fusion_layers; ++i)
    blocks[(size_t)i].init("img.block" + std::to_string(i), cfg.width, cfg.heads, rng, std);
  ln_f.init("img.ln_f", cfg.width);
  scale_pos.resize((size_t)schedule.K());
  for (int k = 0; k < schedule.K(); ++k) {
    auto [h, w] = schedule.sizes[(size_t)k];
    scale_pos[(size_t)k].init_shape("img.pos" + std::to_string(k), {(int64_t)h * w, cfg.width});
    nn::init_normal(scale_pos[(size_t)k], rng, std);
  }
  head.init("img.head", cfg.width, cfg.V, rng, std);
}

LatentLogits ImageEncoder::forward(const float* x, int B) {
  check(B >= 1, "batch must be positive");
  const int S = cfg.size, C = cfg.base_ch, W = cfg.width, base = cfg.base_size();
  const int T = base * base;
  const int64_t n = (int64_t)B * T;

  x1_ = Tensor({B, S, S, C});
  b1.forward(x, B, S, S, x1_.ptr());
  x2_ = Tensor({B, S / 2, S / 2, 2 * C});
  b2.forward(x1_.ptr(), B, S, S, x2_.ptr());
  x3_ = Tensor({B, base, base, 2 * C});
  b3.forward(x2_.ptr(), B, S / 2, S / 2, x3_.ptr());
  bb_ = Tensor({B, base, base, 2 * C});
  b4.forward(x3_.ptr(), B, base, base, bb_.ptr());

  layer_in_.assign((size_t)cfg.fusion_layers + 1, Tensor());
  layer_in_[0] = Tensor({n, W});
  proj.forward(bb_.ptr(), n, layer_in_[0].ptr());
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      simd::axpby(W, 1.0f, fuse_pos.w.ptr() + (int64_t)t * W, 1.0f,
                  layer_in_[0].ptr() + ((int64_t)b * T + t) * W);
  for (int i = 0; i < cfg.fusion_layers; ++i) {
    layer_in_[(size_t)i + 1] = Tensor({n, W});
    blocks[(size_t)i].forward(layer_in_[(size_t)i].ptr(), B, T, nullptr,
                              layer_in_[(size_t)i + 1].ptr());
  }
  ln_out_ = Tensor({n, W});
  ln_f.forward(layer_in_[(size_t)cfg.fusion_layers].ptr(), n, ln_out_.ptr());

  LatentLogits out;
  out.B = B;
  out.scales.resize((size_t)schedule.K());
  posed_.assign((size_t)schedule.K(), Tensor());
  for (int k = 0; k < schedule.K(); ++k) {
    auto [h, w] = schedule.sizes[(size_t)k];
    const int64_t nk = (int64_t)B * h * w;
    posed_[(size_t)k] = Tensor({nk, W});
    nn::downsample_area(ln_out_.ptr(), B, base, base, W, h, w, posed_[(size_t)k].ptr());
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < h * w; ++t)
        simd::axpby(W, 1.0f, scale_pos[(size_t)k].w.ptr() + (int64_t)t * W, 1.0f,
                    posed_[(size_t)k].ptr() + ((int64_t)b * h * w + t) * W);
    out.scales[(size_t)k] = Tensor({B, h, w, cfg.V});
    head.forward(posed_[(size_t)k].ptr(), nk, out.scales[(size_t)k].ptr());
  }
  last_b_ = B;
  return out;
}

float ImageEncoder::stage3_loss(const LatentLogits& logits, const vq::TokenPyramid& teacher) {
  const int K = schedule.K();
  check((int)logits.scales.size() == K, "logit scale count mismatch");
  check((int)teacher.size() == K, "teacher scale count mismatch");
  const int B = logits.B;
  const double inv_count = 1.0 / ((double)B * schedule.total_tokens());
  double total = 0;
  dlogits_.assign((size_t)K, Tensor());
  for (int k = 0; k < K; ++k) {
    auto [h, w] = schedule.sizes[(size_t)k];
    const int64_t nk = (int64_t)B * h * w;
    check(logits.scales[(size_t)k].numel() == nk * cfg.V, "logit shape mismatch");
    check((int64_t)teacher[(size_t)k].size() == nk, "teacher shape mismatch");
    dlogits_[(size_t)k] = Tensor({nk, cfg.V});
    total += ce_and_grad(logits.scales[(size_t)k].ptr(), teacher[(size_t)k].data(), nk, cfg.V,
                         inv_count, dlogits_[(size_t)k].ptr());
  }
  return (float)total;
}

void ImageEncoder::backward(const float* x, int B) {
  check(B == last_b_, "backward batch does not match the last forward");
  check((int)dlogits_.size() == schedule.K(), "stage3_loss must run before backward");
  const int S = cfg.size, C = cfg.base_ch, W = cfg.width, base = cfg.base_size();
  const int T = base * base;
  const int64_t n = (int64_t)B * T;

  Tensor dfused({n, W});
  for (int k = 0; k < schedule.K(); ++k) {
    auto [h, w] = schedule.sizes[(size_t)k];
    const int64_t nk = (int64_t)B * h * w;
    Tensor dposed({nk, W});
    head.backward(posed_[(size_t)k].ptr(), dlogits_[(size_t)k].ptr(), nk, dposed.ptr(), false);
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < h * w; ++t)
        simd::axpby(W, 1.0f, dposed.ptr() + ((int64_t)b * h * w + t) * W, 1.0f,
                    scale_pos[(size_t)k].g.ptr() + (int64_t)t * W);
    nn::downsample_area_backward(dposed.ptr(), B, base, base, W, h, w, dfused.ptr());
  }

  Tensor da({n, W}), db({n, W});
  ln_f.backward(layer_in_[(size_t)cfg.fusion_layers].ptr(), dfused.ptr(), n, da.ptr(), false);
  for (int i = cfg.fusion_layers - 1; i >= 0; --i) {
    blocks[(size_t)i].backward(layer_in_[(size_t)i].ptr(), da.ptr(), B, T, nullptr, db.ptr());
    std::swap(da, db);
  }
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      simd::axpby(W, 1.0f, da.ptr() + ((int64_t)b * T + t) * W, 1.0f,
                  fuse_pos.g.ptr() + (int64_t)t * W);
  Tensor dbb({B, base, base, 2 * C});
  proj.backward(bb_.ptr(), da.ptr(), n, dbb.ptr(), false);

  Tensor dx3({B, base, base, 2 * C});
  b4.backward(x3_.ptr(), dbb.ptr(), B, base, base, dx3.ptr());
  Tensor dx2({B, S / 2, S / 2, 2 * C});
  b3.backward(x2_.ptr(), dx3.ptr(), B, S / 2, S / 2, dx2.ptr());
  Tensor dx1({B, S, S, C});
  b2.backward(x1_.ptr(), dx2.ptr(), B, S, S, dx1.ptr());
  b1.backward(x, dx1.ptr(), B, S, S, nullptr);
}

void ImageEncoder::collect(std::vector<nn::Param*>& out) {
  b1.collect(out);
  b2.collect(out);
  b3.collect(out);
  b4.collect(out);
  proj.collect(out);
  out.push_back(&fuse_pos);
  for (auto& b : blocks) b.collect(out);
  ln_f.collect(out);
  for (auto& p : scale_pos) out.push_back(&p);
  head.collect(out);
}

void ImageEncoder::save(BinWriter& w) {
  std::vector<nn::Param*> ps;
  collect(ps);
  nn::save_params(w, ps);
}

void ImageEncoder::load(BinReader& r) {
  std::vector<nn::Param*> ps;
  collect(ps);
  nn::load_params(r, ps);
}

vq::TokenPyramid choose_tokens(const LatentLogits& lg, const vq::ScaleSchedule& sched,
                               bool sample, int top_k, float top_p, Rng& rng) {
  check(lg.B == 1, "choose_tokens is single-sample");
  check((int)lg.scales.size() == sched.K(), "logit scale count mismatch");
  vq::TokenPyramid tokens((size_t)sched.K());
  for (int k = 0; k < sched.K(); ++k) {
    auto [h, w] = sched.sizes[(size_t)k];
    const int V = (int)lg.scales[(size_t)k].shape.back();
    tokens[(size_t)k].resize((size_t)(h * w));
    for (int g = 0; g < h * w; ++g) {
      const float* row = lg.scales[(size_t)k].ptr() + (int64_t)g * V;
      if (sample) {
        const std::vector<float> probs = var::filter_topk_topp(row, V, top_k, top_p);
        tokens[(size_t)k][(size_t)g] = var::sample_index(probs, rng);
      } else {
        int best = 0;
        for (int v = 1; v < V; ++v)
          if (row[v] > row[best]) best = v;
        tokens[(size_t)k][(size_t)g] = best;
      }
    }
  }
  return tokens;
}

InferResult masks_from_tokens(vq::Tokenizer& tok, latent::LatentDecoder& dec,
                              vq::TokenPyramid tokens, codec::Task task,
                              const codec::GridColorMap& grid) {
  const int base = tok.schedule.sizes.back().first;
  const int size = 4 * base;
  check(dec.cfg.size == size, "decoder size does not match the tokenizer");
  Tensor feat = tok.quant.dequantize(tokens, 1, base, base, tok.schedule);
  Tensor six({size, size, 6});
  tok.dec_lat.forward(feat.ptr(), 1, base, base, six.ptr());
  auto [mlog, masks] = latent::mask_from_seglat(dec, six.ptr(), task, grid);
  InferResult r;
  r.masks = std::move(masks);
  r.logits = std::move(mlog);
  r.tokens = std::move(tokens);
  r.six = std::move(six);
  return r;
}

InferResult infer_masks(ImageEncoder& ienc, var::PriorModel& prior, vq::Tokenizer& tok,
                        latent::LatentDecoder& dec, const float* image, codec::Task task,
                        const InferParams& p, const codec::GridColorMap& grid, Rng& rng) {
  check(ienc.schedule.sizes == tok.schedule.sizes, "image encoder / tokenizer schedule mismatch");
  const int K = ienc.schedule.K();
  const int V = ienc.cfg.V;
  LatentLogits lg = ienc.forward(image, 1);

  vq::TokenPyramid tokens;
  if (p.mode == InferMode::direct) {
    tokens = choose_tokens(lg, ienc.schedule, p.sample, p.top_k, p.top_p, rng);
  } else {
    check(prior.schedule.sizes == tok.schedule.sizes, "prior / tokenizer schedule mismatch");
    check(prior.cfg.V == V, "prior / image encoder vocabulary mismatch");
    std::vector<Tensor> bias((size_t)K);
    for (int k = 0; k < K; ++k) {
      auto [h, w] = ienc.schedule.sizes[(size_t)k];
      bias[(size_t)k] = Tensor({(int64_t)h * w, V});
      simd::axpby((int64_t)h * w * V, p.prior_weight, lg.scales[(size_t)k].ptr(), 0.0f,
                  bias[(size_t)k].ptr());
    }
    var::ConditionTokens cond{p.cls, (int)task};
    tokens = prior.sample_pyramid(tok.quant, cond, nullptr, p.top_k, p.top_p, p.cfg_scale, rng,
                                  nullptr, &bias, p.ar_weight);
  }
  return masks_from_tokens(tok, dec, std::move(tokens), task, grid);
}

}  // namespace segvar::img
