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

#include "segvar/var/prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "segvar/core/error.hpp"
#include "segvar/simd/simd.hpp"

namespace segvar::var {

SeqLayout SeqLayout::build(const vq::ScaleSchedule& sched) {
  SeqLayout l;
  l.T = 2 + 2 * sched.total_tokens();
  l.block_of.assign((size_t)l.T, -1);
  l.stream_of.assign((size_t)l.T, -1);
  l.grid_of.assign((size_t)l.T, 0);
  l.prefix.assign((size_t)l.T, 2);  // condition tokens attend to themselves
  int p = 2;
  for (int k = 0; k < sched.K(); ++k) {
    auto [h, w] = sched.sizes[(size_t)k];
    const int n = h * w;
    l.block_start.push_back(p);
    l.block_end.push_back(p + 2 * n);
    for (int s = 0; s < 2; ++s) {
      for (int g = 0; g < n; ++g, ++p) {
        l.block_of[(size_t)p] = k;
        l.stream_of[(size_t)p] = s;
        l.grid_of[(size_t)p] = g;
        l.prefix[(size_t)p] = l.block_end.back();  // full within, causal across
      }
    }
  }
  check(p == l.T, "sequence layout length mismatch");
  return l;
}

std::vector<float> filter_topk_topp(const float* logits, int V, int top_k, float top_p) {
  check(top_k >= 1, "top_k must be >= 1");
  check(top_p > 0.0f && top_p <= 1.0f, "top_p must be in (0, 1]");
  if (top_k > V) top_k = V;

  std::vector<int> order((size_t)V);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  order.resize((size_t)top_k);

  // softmax over the kept set, in doubles
  double mx = logits[(size_t)order[0]];
  std::vector<double> q((size_t)top_k);
  double z = 0;
  for (int i = 0; i < top_k; ++i) {
    q[(size_t)i] = std::exp((double)logits[(size_t)order[(size_t)i]] - mx);
    z += q[(size_t)i];
  }
  for (auto& v : q) v /= z;

  // minimal prefix of the probability-sorted tokens with mass >= top_p
  int m = 0;
  double cum = 0;
  while (m < top_k) {
    cum += q[(size_t)m];
    ++m;
    if (cum >= (double)top_p) break;
  }
  std::vector<float> out((size_t)V, 0.0f);
  for (int i = 0; i < m; ++i) out[(size_t)order[(size_t)i]] = (float)(q[(size_t)i] / cum);
  return out;
}

int sample_index(const std::vector<float>& probs, Rng& rng) {
  int support = 0, only = -1;
  for (int i = 0; i < (int)probs.size(); ++i) {
    if (probs[(size_t)i] > 0.0f) {
      ++support;
      only = i;
    }
  }
  check(support >= 1, "empty sampling distribution");
  if (support == 1) return only;  // argmax path consumes no randomness
  const float u = rng.uniform();
  double cum = 0;
  for (int i = 0; i < (int)probs.size(); ++i) {
    cum += (double)probs[(size_t)i];
    if ((double)u < cum) return i;
  }
  return only;  // fp tail guard: last positive entry
}

// ---------------------------------------------------------------------------
// PriorModel

void PriorModel::init(const PriorConfig& c, Rng& rng) {
  cfg = c;
  check(cfg.V >= 2 && cfg.width >= 1 && cfg.layers >= 1, "invalid prior config");
  check(cfg.width % cfg.heads == 0, "width must divide into heads");
  check(cfg.num_classes >= 1 && cfg.content_dim >= 1, "invalid prior config");
  schedule = vq::make_schedule(cfg.scales, cfg.base_size());
  layout = SeqLayout::build(schedule);

  const float std = 0.02f;
  cls_emb.init("prior.cls_emb", cfg.num_classes + 2, cfg.width, rng, std);
  typ_emb.init("prior.typ_emb", 4, cfg.width, rng, std);
  start_emb.init_shape("prior.start_emb", {2, cfg.width});
  nn::init_normal(start_emb, rng, std);
  scale_emb.init_shape("prior.scale_emb", {schedule.K(), cfg.width});
  nn::init_normal(scale_emb, rng, std);
  stream_emb.init_shape("prior.stream_emb", {2, cfg.width});
  nn::init_normal(stream_emb, rng, std);
  pos_emb.resize((size_t)schedule.K());
  for (int k = 0; k < schedule.K(); ++k) {
    auto [h, w] = schedule.sizes[(size_t)k];
    pos_emb[(size_t)k].init_shape("prior.pos_emb" + std::to_string(k), {h * w, cfg.width});
    nn::init_normal(pos_emb[(size_t)k], rng, std);
  }
  content_proj.init("prior.content_proj", cfg.content_dim, cfg.width, rng, std);
  blocks.resize((size_t)cfg.layers);
  for (int i = 0; i < cfg.layers; ++i)
    blocks[(size_t)i].init("prior.block" + std::to_string(i), cfg.width, cfg.heads, rng, std);
  ln_f.init("prior.ln_f", cfg.width);
  head.init("prior.head", cfg.width, cfg.V, rng, std);
}

Tensor PriorModel::build_inputs(const vq::PyramidQuantizer& quant, const vq::TokenPyramid& img,
                                const vq::TokenPyramid& lat, const std::vector<int>& cls,
                                const std::vector<int>& typ, int B, int upto) {
  check(upto >= 1 && upto <= schedule.K(), "upto out of range");
  check((int)cls.size() == B && (int)typ.size() == B, "condition id count mismatch");
  for (int b = 0; b < B; ++b) {
    check(cls[(size_t)b] >= 0 && cls[(size_t)b] <= cls_empty(), "cls id out of range");
    check(typ[(size_t)b] >= 0 && typ[(size_t)b] <= typ_empty(), "typ id out of range");
  }
  const int L = layout.len(upto);
  const int W = cfg.width;
  const int base = cfg.base_size();
  Tensor x({(int64_t)B * L, W});

  // condition embeddings
  cls_ids_ = cls;
  typ_ids_ = typ;
  Tensor cbuf({B, W}), tbuf({B, W});
  cls_emb.forward(cls_ids_.data(), B, cbuf.ptr());
  typ_emb.forward(typ_ids_.data(), B, tbuf.ptr());
  for (int b = 0; b < B; ++b) {
    std::memcpy(x.ptr() + ((int64_t)b * L + 0) * W, cbuf.ptr() + (int64_t)b * W,
                (size_t)W * sizeof(float));
    std::memcpy(x.ptr() + ((int64_t)b * L + 1) * W, tbuf.ptr() + (int64_t)b * W,
                (size_t)W * sizeof(float));
  }

  // content rows: per block k >= 1, the coarser scales' reconstruction
  // resized to the block's grid (values are constants; no gradient reaches
  // the codebook from the prior)
  int64_t n_content = 0;
  for (int k = 1; k < upto; ++k) {
    auto [h, w] = schedule.sizes[(size_t)k];
    n_content += (int64_t)B * 2 * h * w;
  }
  content_rows_ = Tensor({std::max<int64_t>(n_content, 1), cfg.content_dim});
  content_at_.assign((size_t)n_content, 0);
  int64_t r = 0;
  for (int k = 1; k < upto; ++k) {
    auto [h, w] = schedule.sizes[(size_t)k];
    const int n = h * w;
    for (int s = 0; s < 2; ++s) {
      Tensor partial = quant.dequantize(s == 0 ? img : lat, B, base, base, schedule, k);
      Tensor down({B, h, w, cfg.content_dim});
      nn::downsample_area(partial.ptr(), B, base, base, cfg.content_dim, h, w, down.ptr());
      for (int b = 0; b < B; ++b) {
        for (int g = 0; g < n; ++g, ++r) {
          std::memcpy(content_rows_.ptr() + r * cfg.content_dim,
                      down.ptr() + ((int64_t)b * n + g) * cfg.content_dim,
                      (size_t)cfg.content_dim * sizeof(float));
          content_at_[(size_t)r] =
              (int64_t)b * L + layout.block_start[(size_t)k] + s * n + g;
        }
      }
    }
  }
  if (n_content > 0) {
    Tensor proj({n_content, W});
    content_proj.forward(content_rows_.ptr(), n_content, proj.ptr());
    for (int64_t i = 0; i < n_content; ++i) {
      simd::axpby(W, 1.0f, proj.ptr() + i * W, 1.0f, x.ptr() + content_at_[(size_t)i] * W);
    }
  }

  // additive start/scale/stream/position embeddings
  for (int b = 0; b < B; ++b) {
    for (int p = 2; p < L; ++p) {
      const int k = layout.block_of[(size_t)p];
      const int s = layout.stream_of[(size_t)p];
      const int g = layout.grid_of[(size_t)p];
      float* row = x.ptr() + ((int64_t)b * L + p) * W;
      if (k == 0) simd::axpby(W, 1.0f, start_emb.w.ptr() + (int64_t)s * W, 1.0f, row);
      simd::axpby(W, 1.0f, scale_emb.w.ptr() + (int64_t)k * W, 1.0f, row);
      simd::axpby(W, 1.0f, stream_emb.w.ptr() + (int64_t)s * W, 1.0f, row);
      simd::axpby(W, 1.0f, pos_emb[(size_t)k].w.ptr() + (int64_t)g * W, 1.0f, row);
    }
  }
  return x;
}

void PriorModel::backward_inputs(const float* dinputs, int B, int upto) {
  const int L = layout.len(upto);
  const int W = cfg.width;

  const int64_t n_content = (int64_t)content_at_.size();
  if (n_content > 0) {
    Tensor dproj({n_content, W});
    for (int64_t i = 0; i < n_content; ++i) {
      std::memcpy(dproj.ptr() + i * W, dinputs + content_at_[(size_t)i] * W,
                  (size_t)W * sizeof(float));
    }
    content_proj.backward(content_rows_.ptr(), dproj.ptr(), n_content, nullptr);
  }

  Tensor dc({B, W}), dt({B, W});
  for (int b = 0; b < B; ++b) {
    std::memcpy(dc.ptr() + (int64_t)b * W, dinputs + ((int64_t)b * L + 0) * W,
                (size_t)W * sizeof(float));
    std::memcpy(dt.ptr() + (int64_t)b * W, dinputs + ((int64_t)b * L + 1) * W,
                (size_t)W * sizeof(float));
  }
  cls_emb.backward(cls_ids_.data(), dc.ptr(), B);
  typ_emb.backward(typ_ids_.data(), dt.ptr(), B);

  for (int b = 0; b < B; ++b) {
    for (int p = 2; p < L; ++p) {
      const int k = layout.block_of[(size_t)p];
      const int s = layout.stream_of[(size_t)p];
      const int g = layout.grid_of[(size_t)p];
      const float* row = dinputs + ((int64_t)b * L + p) * W;
      if (k == 0) simd::axpby(W, 1.0f, row, 1.0f, start_emb.g.ptr() + (int64_t)s * W);
      simd::axpby(W, 1.0f, row, 1.0f, scale_emb.g.ptr() + (int64_t)k * W);
      simd::axpby(W, 1.0f, row, 1.0f, stream_emb.g.ptr() + (int64_t)s * W);
      simd::axpby(W, 1.0f, row, 1.0f, pos_emb[(size_t)k].g.ptr() + (int64_t)g * W);
    }
  }
}

Tensor PriorModel::forward(const vq::PyramidQuantizer& quant, const vq::TokenPyramid& img,
                           const vq::TokenPyramid& lat, const std::vector<int>& cls,
                           const std::vector<int>& typ, int B, int upto) {
  const int L = layout.len(upto);
  const int64_t n = (int64_t)B * L;
  layer_in_.assign((size_t)cfg.layers + 1, Tensor());
  layer_in_[0] = build_inputs(quant, img, lat, cls, typ, B, upto);
  for (int i = 0; i < cfg.layers; ++i) {
    layer_in_[(size_t)i + 1] = Tensor({n, cfg.width});
    blocks[(size_t)i].forward(layer_in_[(size_t)i].ptr(), B, L, layout.prefix.data(),
                              layer_in_[(size_t)i + 1].ptr());
  }
  ln_out_ = Tensor({n, cfg.width});
  ln_f.forward(layer_in_[(size_t)cfg.layers].ptr(), n, ln_out_.ptr());
  Tensor logits({n, cfg.V});
  head.forward(ln_out_.ptr(), n, logits.ptr());
  return logits;
}

namespace {

// Row-wise cross entropy in doubles; rows with target < 0 are skipped.
// dlogits (when non-null) receives (softmax - onehot) * inv_count.
double ce_and_grad(const float* logits, const int* targets, int64_t rows, int V,
                   double inv_count, float* dlogits) {
  double total = 0;
  for (int64_t i = 0; i < rows; ++i) {
    const float* l = logits + i * V;
    float* d = dlogits ? dlogits + i * V : nullptr;
    const int t = targets[i];
    if (t < 0) {
      if (d) std::memset(d, 0, (size_t)V * sizeof(float));
      continue;
    }
    double mx = l[0];
    for (int v = 1; v < V; ++v) mx = std::max(mx, (double)l[v]);
    double z = 0;
    for (int v = 0; v < V; ++v) z += std::exp((double)l[v] - mx);
    const double lse = mx + std::log(z);
    total += lse - (double)l[t];
    if (d) {
      for (int v = 0; v < V; ++v) {
        const double p = std::exp((double)l[v] - lse);
        d[v] = (float)((p - (v == t ? 1.0 : 0.0)) * inv_count);
      }
    }
  }
  return total * inv_count;
}

}  // namespace

double PriorModel::teacher_forcing_loss(const vq::PyramidQuantizer& quant,
                                        const vq::TokenPyramid& img, const vq::TokenPyramid& lat,
                                        std::vector<int> cls, std::vector<int> typ, int B,
                                        float drop_prob, Rng& rng, bool with_backward,
                                        bool seglat_only) {
  check(drop_prob >= 0.0f && drop_prob <= 1.0f, "drop_prob must be in [0, 1]");
  check((int)img.size() == schedule.K() && (int)lat.size() == schedule.K(),
        "pyramid scale count mismatch");
  for (int b = 0; b < B; ++b) {
    if (rng.uniform() < drop_prob) {  // one draw per sample, taken always
      cls[(size_t)b] = cls_empty();
      typ[(size_t)b] = typ_empty();
    }
  }

  const int upto = schedule.K();
  const int L = layout.T;
  const int64_t n = (int64_t)B * L;
  Tensor logits = forward(quant, img, lat, cls, typ, B, upto);

  std::vector<int> targets((size_t)n, -1);
  for (int k = 0; k < schedule.K(); ++k) {
    auto [h, w] = schedule.sizes[(size_t)k];
    const int g_n = h * w;
    check((int)img[(size_t)k].size() == B * g_n && (int)lat[(size_t)k].size() == B * g_n,
          "pyramid grid size mismatch");
    for (int b = 0; b < B; ++b) {
      for (int s = seglat_only ? 1 : 0; s < 2; ++s) {
        const auto& toks = s == 0 ? img[(size_t)k] : lat[(size_t)k];
        for (int g = 0; g < g_n; ++g) {
          const int p = layout.block_start[(size_t)k] + s * g_n + g;
          targets[(size_t)((int64_t)b * L + p)] = toks[(size_t)(b * g_n + g)];
        }
      }
    }
  }
  const double streams = seglat_only ? 1.0 : 2.0;
  const double inv_count = 1.0 / ((double)B * streams * (double)schedule.total_tokens());

  if (!with_backward) return ce_and_grad(logits.ptr(), targets.data(), n, cfg.V, inv_count,
                                         nullptr);

  Tensor dlogits({n, cfg.V});
  const double loss =
      ce_and_grad(logits.ptr(), targets.data(), n, cfg.V, inv_count, dlogits.ptr());
  Tensor dhid({n, cfg.width});
  head.backward(ln_out_.ptr(), dlogits.ptr(), n, dhid.ptr(), false);
  Tensor da({n, cfg.width}), db({n, cfg.width});
  ln_f.backward(layer_in_[(size_t)cfg.layers].ptr(), dhid.ptr(), n, da.ptr(), false);
  for (int i = cfg.layers - 1; i >= 0; --i) {
    blocks[(size_t)i].backward(layer_in_[(size_t)i].ptr(), da.ptr(), B, L,
                               layout.prefix.data(), db.ptr());
    std::swap(da, db);
  }
  backward_inputs(da.ptr(), B, upto);
  return loss;
}

vq::TokenPyramid PriorModel::sample_pyramid(const vq::PyramidQuantizer& quant,
                                            ConditionTokens cond,
                                            const vq::TokenPyramid* image_tokens, int top_k,
                                            float top_p, float guidance_scale, Rng& rng,
                                            vq::TokenPyramid* image_out,
                                            const std::vector<Tensor>* seglat_logit_bias,
                                            float seglat_logit_scale) {
  check(top_k >= 1, "top_k must be >= 1");
  check(top_p > 0.0f && top_p <= 1.0f, "top_p must be in (0, 1]");
  const int K = schedule.K();
  const int V = cfg.V;
  if (image_tokens) {
    check((int)image_tokens->size() == K, "image pyramid scale count mismatch");
  }
  if (seglat_logit_bias) {
    check((int)seglat_logit_bias->size() == K, "seglat bias scale count mismatch");
  }

  const std::vector<int> cls2 = {cond.cls, cls_empty()};
  const std::vector<int> typ2 = {cond.typ, typ_empty()};
  vq::TokenPyramid img_gen, lat_gen;  // batch of two identical rows

  std::vector<float> l((size_t)V);
  for (int k = 0; k < K; ++k) {
    const int L = layout.len(k + 1);
    Tensor logits = forward(quant, img_gen, lat_gen, cls2, typ2, 2, k + 1);
    auto [h, w] = schedule.sizes[(size_t)k];
    const int n = h * w;
    img_gen.emplace_back((size_t)(2 * n));
    lat_gen.emplace_back((size_t)(2 * n));
    if (image_tokens) {
      check((int)(*image_tokens)[(size_t)k].size() == n, "image pyramid grid size mismatch");
    }
    for (int s = 0; s < 2; ++s) {  // image half first, then seglat half
      for (int g = 0; g < n; ++g) {
        int tok;
        if (s == 0 && image_tokens) {
          tok = (*image_tokens)[(size_t)k][(size_t)g];
          check(tok >= 0 && tok < V, "image token out of range");
        } else {
          const int p = layout.block_start[(size_t)k] + s * n + g;
          const float* lc = logits.ptr() + (int64_t)(0 * L + p) * V;
          const float* lu = logits.ptr() + (int64_t)(1 * L + p) * V;
          if (guidance_scale == 1.0f) {
            std::memcpy(l.data(), lc, (size_t)V * sizeof(float));
          } else {
            for (int v = 0; v < V; ++v)
              l[(size_t)v] = lu[v] + guidance_scale * (lc[v] - lu[v]);
          }
          if (s == 1) {
            if (seglat_logit_scale != 1.0f)
              simd::axpby(V, 0.0f, l.data(), seglat_logit_scale, l.data());
            if (seglat_logit_bias) {
              const Tensor& bias = (*seglat_logit_bias)[(size_t)k];
              check(bias.numel() == (int64_t)n * V, "seglat bias shape mismatch");
              simd::axpby(V, 1.0f, bias.ptr() + (int64_t)g * V, 1.0f, l.data());
            }
          }
          const std::vector<float> probs = filter_topk_topp(l.data(), V, top_k, top_p);
          tok = sample_index(probs, rng);
        }
        auto& dst = s == 0 ? img_gen[(size_t)k] : lat_gen[(size_t)k];
        dst[(size_t)(0 * n + g)] = tok;
        dst[(size_t)(1 * n + g)] = tok;
      }
    }
  }

  // strip the duplicated guidance row
  auto single = [&](const vq::TokenPyramid& batched) {
    vq::TokenPyramid out((size_t)K);
    for (int k = 0; k < K; ++k) {
      auto [h, w] = schedule.sizes[(size_t)k];
      out[(size_t)k].assign(batched[(size_t)k].begin(), batched[(size_t)k].begin() + h * w);
    }
    return out;
  };
  if (image_out) *image_out = single(img_gen);
  return single(lat_gen);
}

void PriorModel::collect(std::vector<nn::Param*>& out) {
  cls_emb.collect(out);
  typ_emb.collect(out);
  out.push_back(&start_emb);
  out.push_back(&scale_emb);
  out.push_back(&stream_emb);
  for (auto& p : pos_emb) out.push_back(&p);
  content_proj.collect(out);
  for (auto& b : blocks) b.collect(out);
  ln_f.collect(out);
  head.collect(out);
}

void PriorModel::save(BinWriter& w) {
  std::vector<nn::Param*> ps;
  collect(ps);
  nn::save_params(w, ps);
}

void PriorModel::load(BinReader& r) {
  std::vector<nn::Param*> ps;
  collect(ps);
  nn::load_params(r, ps);
}

}  // namespace segvar::var
