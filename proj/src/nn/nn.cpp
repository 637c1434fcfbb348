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

#include "segvar/nn/nn.hpp"

#include <cmath>
#include <cstring>

#include "segvar/core/error.hpp"
#include "segvar/core/hash.hpp"
#include "segvar/simd/simd.hpp"

namespace segvar::nn {

void init_normal(Param& p, Rng& rng, float stddev) {
  for (auto& x : p.w.data) x = stddev * rng.normal();
}

void init_uniform(Param& p, Rng& rng, float lo, float hi) {
  for (auto& x : p.w.data) x = rng.uniform(lo, hi);
}

void init_const(Param& p, float v) { p.w.fill(v); }

AdamW::AdamW(std::vector<Param*> params, float beta1, float beta2, float eps, float weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void AdamW::zero_grad() {
  for (Param* p : params_) p->g.zero();
}

void AdamW::step(float lr) {
  ++t_;
  const float c1 = 1.0f - std::pow(beta1_, (float)t_);
  const float c2 = 1.0f - std::pow(beta2_, (float)t_);
  for (Param* p : params_) {
    if (p->m.numel() != p->w.numel()) {
      p->m = Tensor(p->w.shape);
      p->v = Tensor(p->w.shape);
    }
    // 1-D params (biases, norm gains) are exempt from decay
    const float wd = p->w.ndim() > 1 ? weight_decay_ : 0.0f;
    simd::adamw_step(p->w.numel(), p->w.ptr(), p->g.ptr(), p->m.ptr(), p->v.ptr(), lr, beta1_,
                     beta2_, eps_, wd, c1, c2);
  }
}

// ---------------------------------------------------------------- Linear

void Linear::init(const std::string& name, int in_f, int out_f, Rng& rng, float init_std) {
  in = in_f;
  out = out_f;
  w.init_shape(name + ".w", {out_f, in_f});
  b.init_shape(name + ".b", {out_f});
  init_normal(w, rng, init_std);
}

void Linear::forward(const float* x, int64_t n, float* y) const {
  simd::gemm(false, true, (int)n, out, in, 1.0f, x, in, w.w.ptr(), in, 0.0f, y, out);
  const float* bias = b.w.ptr();
  for (int64_t i = 0; i < n; ++i) simd::axpby(out, 1.0f, bias, 1.0f, y + i * out);
}

void Linear::backward(const float* x, const float* dy, int64_t n, float* dx, bool accum_dx) {
  simd::gemm(true, false, out, in, (int)n, 1.0f, dy, out, x, in, 1.0f, w.g.ptr(), in);
  float* bg = b.g.ptr();
  for (int64_t i = 0; i < n; ++i) simd::axpby(out, 1.0f, dy + i * out, 1.0f, bg);
  if (dx)
    simd::gemm(false, false, (int)n, in, out, 1.0f, dy, out, w.w.ptr(), in, accum_dx ? 1.0f : 0.0f,
               dx, in);
}

void Linear::collect(std::vector<Param*>& o) {
  o.push_back(&w);
  o.push_back(&b);
}

// ------------------------------------------------------------- LayerNorm

namespace {
constexpr float kLnEps = 1e-5f;
}

void LayerNorm::init(const std::string& name, int d) {
  dim = d;
  g.init_shape(name + ".g", {d});
  b.init_shape(name + ".b", {d});
  init_const(g, 1.0f);
}

void LayerNorm::forward(const float* x, int64_t n, float* y) {
  mean_.resize((size_t)n);
  rstd_.resize((size_t)n);
  const float* gw = g.w.ptr();
  const float* bw = b.w.ptr();
  for (int64_t i = 0; i < n; ++i) {
    const float* xr = x + i * dim;
    float* yr = y + i * dim;
    double mu = 0.0;
    for (int j = 0; j < dim; ++j) mu += xr[j];
    mu /= dim;
    double var = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double d = xr[j] - mu;
      var += d * d;
    }
    var /= dim;
    const float rstd = 1.0f / std::sqrt((float)var + kLnEps);
    mean_[(size_t)i] = (float)mu;
    rstd_[(size_t)i] = rstd;
    for (int j = 0; j < dim; ++j) yr[j] = (xr[j] - (float)mu) * rstd * gw[j] + bw[j];
  }
}

void LayerNorm::backward(const float* x, const float* dy, int64_t n, float* dx, bool accum_dx) {
  const float* gw = g.w.ptr();
  float* gg = g.g.ptr();
  float* bg = b.g.ptr();
  for (int64_t i = 0; i < n; ++i) {
    const float* xr = x + i * dim;
    const float* dyr = dy + i * dim;
    float* dxr = dx + i * dim;
    const float mu = mean_[(size_t)i];
    const float rstd = rstd_[(size_t)i];
    double s1 = 0.0, s2 = 0.0;
    for (int j = 0; j < dim; ++j) {
      const float xhat = (xr[j] - mu) * rstd;
      const float dxhat = dyr[j] * gw[j];
      s1 += dxhat;
      s2 += dxhat * xhat;
      gg[j] += dyr[j] * xhat;
      bg[j] += dyr[j];
    }
    const float m1 = (float)(s1 / dim);
    const float m2 = (float)(s2 / dim);
    for (int j = 0; j < dim; ++j) {
      const float xhat = (xr[j] - mu) * rstd;
      const float dxhat = dyr[j] * gw[j];
      const float v = rstd * (dxhat - m1 - xhat * m2);
      dxr[j] = accum_dx ? dxr[j] + v : v;
    }
  }
}

void LayerNorm::collect(std::vector<Param*>& o) {
  o.push_back(&g);
  o.push_back(&b);
}

// ------------------------------------------------------------- Embedding

void Embedding::init(const std::string& name, int V, int d, Rng& rng, float init_std) {
  vocab = V;
  dim = d;
  w.init_shape(name + ".w", {V, d});
  init_normal(w, rng, init_std);
}

void Embedding::forward(const int* ids, int64_t n, float* y) const {
  for (int64_t i = 0; i < n; ++i) {
    check(ids[i] >= 0 && ids[i] < vocab, "embedding id out of range");
    std::memcpy(y + i * dim, w.w.ptr() + (int64_t)ids[i] * dim, (size_t)dim * sizeof(float));
  }
}

void Embedding::backward(const int* ids, const float* dy, int64_t n) {
  for (int64_t i = 0; i < n; ++i)
    simd::axpby(dim, 1.0f, dy + i * dim, 1.0f, w.g.ptr() + (int64_t)ids[i] * dim);
}

void Embedding::collect(std::vector<Param*>& o) { o.push_back(&w); }

// ------------------------------------------------------------- Attention

void Attention::init(const std::string& name, int d, int h, Rng& rng, float init_std) {
  check(d % h == 0, "attention dim must divide heads");
  dim = d;
  heads = h;
  head_dim = d / h;
  qkv.init(name + ".qkv", d, 3 * d, rng, init_std);
  proj.init(name + ".proj", d, d, rng, init_std);
}

void Attention::forward(const float* x, int B, int T, const int* prefix, float* y) {
  const int64_t n = (int64_t)B * T;
  const int hd = head_dim;
  qkv_out_ = Tensor({n, 3 * dim});
  qkv.forward(x, n, qkv_out_.ptr());

  q_ = Tensor({B, heads, T, hd});
  k_ = Tensor({B, heads, T, hd});
  v_ = Tensor({B, heads, T, hd});
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      const float* row = qkv_out_.ptr() + ((int64_t)b * T + t) * 3 * dim;
      for (int h = 0; h < heads; ++h) {
        const int64_t at = (((int64_t)b * heads + h) * T + t) * hd;
        std::memcpy(q_.ptr() + at, row + h * hd, (size_t)hd * sizeof(float));
        std::memcpy(k_.ptr() + at, row + dim + h * hd, (size_t)hd * sizeof(float));
        std::memcpy(v_.ptr() + at, row + 2 * dim + h * hd, (size_t)hd * sizeof(float));
      }
    }

  probs_ = Tensor({B, heads, T, T});
  att_ = Tensor({n, dim});
  const float scale = 1.0f / std::sqrt((float)hd);
  std::vector<float> obuf((size_t)T * hd);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h) {
      const int64_t off = ((int64_t)b * heads + h) * T;
      const float* Q = q_.ptr() + off * hd;
      const float* K = k_.ptr() + off * hd;
      const float* V = v_.ptr() + off * hd;
      float* P = probs_.ptr() + off * T;
      simd::gemm(false, true, T, T, hd, scale, Q, hd, K, hd, 0.0f, P, T);
      simd::softmax_rows(T, T, P, P, prefix);
      simd::gemm(false, false, T, hd, T, 1.0f, P, T, V, hd, 0.0f, obuf.data(), hd);
      for (int t = 0; t < T; ++t)
        std::memcpy(att_.ptr() + ((int64_t)b * T + t) * dim + h * hd, obuf.data() + (int64_t)t * hd,
                    (size_t)hd * sizeof(float));
    }
  proj.forward(att_.ptr(), n, y);
}

void Attention::backward(const float* x, const float* dy, int B, int T, const int* prefix,
                         float* dx) {
  (void)prefix;  // mask info lives in the cached probabilities (exact zeros)
  const int64_t n = (int64_t)B * T;
  const int hd = head_dim;
  Tensor datt({n, dim});
  proj.backward(att_.ptr(), dy, n, datt.ptr(), false);

  Tensor dqkv({n, 3 * dim});
  std::vector<float> dobuf((size_t)T * hd), dp((size_t)T * T), dq((size_t)T * hd),
      dk((size_t)T * hd), dv((size_t)T * hd);
  const float scale = 1.0f / std::sqrt((float)hd);
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < heads; ++h) {
      const int64_t off = ((int64_t)b * heads + h) * T;
      const float* Q = q_.ptr() + off * hd;
      const float* K = k_.ptr() + off * hd;
      const float* V = v_.ptr() + off * hd;
      const float* P = probs_.ptr() + off * T;
      for (int t = 0; t < T; ++t)
        std::memcpy(dobuf.data() + (int64_t)t * hd, datt.ptr() + ((int64_t)b * T + t) * dim + h * hd,
                    (size_t)hd * sizeof(float));
      // dV = P^T dO ; dP = dO V^T
      simd::gemm(true, false, T, hd, T, 1.0f, P, T, dobuf.data(), hd, 0.0f, dv.data(), hd);
      simd::gemm(false, true, T, T, hd, 1.0f, dobuf.data(), hd, V, hd, 0.0f, dp.data(), T);
      // dS = P ⊙ (dP − rowsum(dP ⊙ P)); masked entries have P = 0 → dS = 0
      for (int t = 0; t < T; ++t) {
        float* dpr = dp.data() + (int64_t)t * T;
        const float* pr = P + (int64_t)t * T;
        const float r = simd::dot(T, dpr, pr);
        for (int j = 0; j < T; ++j) dpr[j] = pr[j] * (dpr[j] - r);
      }
      simd::gemm(false, false, T, hd, T, scale, dp.data(), T, K, hd, 0.0f, dq.data(), hd);
      simd::gemm(true, false, T, hd, T, scale, dp.data(), T, Q, hd, 0.0f, dk.data(), hd);
      for (int t = 0; t < T; ++t) {
        float* row = dqkv.ptr() + ((int64_t)b * T + t) * 3 * dim;
        std::memcpy(row + h * hd, dq.data() + (int64_t)t * hd, (size_t)hd * sizeof(float));
        std::memcpy(row + dim + h * hd, dk.data() + (int64_t)t * hd, (size_t)hd * sizeof(float));
        std::memcpy(row + 2 * dim + h * hd, dv.data() + (int64_t)t * hd, (size_t)hd * sizeof(float));
      }
    }
  qkv.backward(x, dqkv.ptr(), n, dx, false);
}

void Attention::collect(std::vector<Param*>& o) {
  qkv.collect(o);
  proj.collect(o);
}

// ----------------------------------------------------------------- Block

void Block::init(const std::string& name, int d, int heads, Rng& rng, float init_std) {
  dim = d;
  ln1.init(name + ".ln1", d);
  ln2.init(name + ".ln2", d);
  attn.init(name + ".attn", d, heads, rng, init_std);
  fc1.init(name + ".fc1", d, 4 * d, rng, init_std);
  fc2.init(name + ".fc2", 4 * d, d, rng, init_std);
}

void Block::forward(const float* x, int B, int T, const int* prefix, float* y) {
  const int64_t n = (int64_t)B * T;
  ln1_out_ = Tensor({n, dim});
  att_out_ = Tensor({n, dim});
  xmid_ = Tensor({n, dim});
  ln2_out_ = Tensor({n, dim});
  fc1_out_ = Tensor({n, 4 * dim});
  silu_out_ = Tensor({n, 4 * dim});

  ln1.forward(x, n, ln1_out_.ptr());
  attn.forward(ln1_out_.ptr(), B, T, prefix, att_out_.ptr());
  std::memcpy(xmid_.ptr(), x, (size_t)(n * dim) * sizeof(float));
  simd::axpby(n * dim, 1.0f, att_out_.ptr(), 1.0f, xmid_.ptr());

  ln2.forward(xmid_.ptr(), n, ln2_out_.ptr());
  fc1.forward(ln2_out_.ptr(), n, fc1_out_.ptr());
  simd::silu(n * 4 * dim, fc1_out_.ptr(), silu_out_.ptr());
  fc2.forward(silu_out_.ptr(), n, y);
  simd::axpby(n * dim, 1.0f, xmid_.ptr(), 1.0f, y);
}

void Block::backward(const float* x, const float* dy, int B, int T, const int* prefix, float* dx) {
  const int64_t n = (int64_t)B * T;
  dbuf_ = Tensor({n, 4 * dim});
  dbuf2_ = Tensor({n, dim});
  Tensor dxmid({n, dim});

  // y = xmid + fc2(silu(fc1(ln2(xmid))))
  fc2.backward(silu_out_.ptr(), dy, n, dbuf_.ptr(), false);
  {
    Tensor dpre({n, 4 * dim});
    simd::silu_backward(n * 4 * dim, fc1_out_.ptr(), dbuf_.ptr(), dpre.ptr());
    fc1.backward(ln2_out_.ptr(), dpre.ptr(), n, dbuf2_.ptr(), false);
  }
  std::memcpy(dxmid.ptr(), dy, (size_t)(n * dim) * sizeof(float));
  ln2.backward(xmid_.ptr(), dbuf2_.ptr(), n, dxmid.ptr(), /*accum_dx=*/true);

  // xmid = x + attn(ln1(x))
  attn.backward(ln1_out_.ptr(), dxmid.ptr(), B, T, prefix, dbuf2_.ptr());
  std::memcpy(dx, dxmid.ptr(), (size_t)(n * dim) * sizeof(float));
  ln1.backward(x, dbuf2_.ptr(), n, dx, /*accum_dx=*/true);
}

void Block::collect(std::vector<Param*>& o) {
  ln1.collect(o);
  attn.collect(o);
  ln2.collect(o);
  fc1.collect(o);
  fc2.collect(o);
}

// ---------------------------------------------------------------- Conv2d

void Conv2d::init(const std::string& name, int ci, int co, int kk, int s, int p, Rng& rng,
                  float init_std) {
  cin = ci;
  cout = co;
  k = kk;
  stride = s;
  pad = p;
  w.init_shape(name + ".w", {co, (int64_t)kk * kk * ci});
  b.init_shape(name + ".b", {co});
  init_normal(w, rng, init_std);
}

namespace {

void im2col(const float* x, int B, int H, int W, int C, int k, int stride, int pad, int OH, int OW,
            float* col) {
  const int patch = k * k * C;
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        float* dst = col + (((int64_t)b * OH + oy) * OW + ox) * patch;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::memset(dst + (int64_t)ky * k * C, 0, (size_t)k * C * sizeof(float));
            continue;
          }
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            float* d = dst + ((int64_t)ky * k + kx) * C;
            if (ix < 0 || ix >= W)
              std::memset(d, 0, (size_t)C * sizeof(float));
            else
              std::memcpy(d, x + (((int64_t)b * H + iy) * W + ix) * C, (size_t)C * sizeof(float));
          }
        }
      }
}

void col2im(const float* col, int B, int H, int W, int C, int k, int stride, int pad, int OH,
            int OW, float* dx) {
  const int patch = k * k * C;
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        const float* src = col + (((int64_t)b * OH + oy) * OW + ox) * patch;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            simd::axpby(C, 1.0f, src + ((int64_t)ky * k + kx) * C, 1.0f,
                        dx + (((int64_t)b * H + iy) * W + ix) * C);
          }
        }
      }
}

}  // namespace

void Conv2d::forward(const float* x, int B, int H, int W, float* y) {
  const int OH = out_h(H), OW = out_w(W);
  const int64_t rows = (int64_t)B * OH * OW;
  const int patch = k * k * cin;
  col_ = Tensor({rows, patch});
  im2col(x, B, H, W, cin, k, stride, pad, OH, OW, col_.ptr());
  simd::gemm(false, true, (int)rows, cout, patch, 1.0f, col_.ptr(), patch, w.w.ptr(), patch, 0.0f,
             y, cout);
  const float* bias = b.w.ptr();
  for (int64_t i = 0; i < rows; ++i) simd::axpby(cout, 1.0f, bias, 1.0f, y + i * cout);
}

void Conv2d::backward(const float* x, const float* dy, int B, int H, int W, float* dx,
                      bool accum_dx) {
  (void)x;  // forward's column cache already holds the expanded input
  const int OH = out_h(H), OW = out_w(W);
  const int64_t rows = (int64_t)B * OH * OW;
  const int patch = k * k * cin;
  simd::gemm(true, false, cout, patch, (int)rows, 1.0f, dy, cout, col_.ptr(), patch, 1.0f,
             w.g.ptr(), patch);
  float* bg = b.g.ptr();
  for (int64_t i = 0; i < rows; ++i) simd::axpby(cout, 1.0f, dy + i * cout, 1.0f, bg);
  if (dx) {
    Tensor dcol({rows, patch});
    simd::gemm(false, false, (int)rows, patch, cout, 1.0f, dy, cout, w.w.ptr(), patch, 0.0f,
               dcol.ptr(), patch);
    if (!accum_dx) std::memset(dx, 0, (size_t)((int64_t)B * H * W * cin) * sizeof(float));
    col2im(dcol.ptr(), B, H, W, cin, k, stride, pad, OH, OW, dx);
  }
}

void Conv2d::collect(std::vector<Param*>& o) {
  o.push_back(&w);
  o.push_back(&b);
}

// ---------------------------------------------------------------- resizes

void downsample_area(const float* x, int B, int H, int W, int C, int h, int w, float* y) {
  check(h > 0 && w > 0 && H % h == 0 && W % w == 0, "area downsample needs integer factors");
  const int fy = H / h, fx = W / w;
  const float inv = 1.0f / (float)(fy * fx);
  std::memset(y, 0, (size_t)((int64_t)B * h * w * C) * sizeof(float));
  for (int b = 0; b < B; ++b)
    for (int iy = 0; iy < H; ++iy) {
      const int oy = iy / fy;
      for (int ix = 0; ix < W; ++ix) {
        const int ox = ix / fx;
        simd::axpby(C, inv, x + (((int64_t)b * H + iy) * W + ix) * C, 1.0f,
                    y + (((int64_t)b * h + oy) * w + ox) * C);
      }
    }
}

void downsample_area_backward(const float* dy, int B, int H, int W, int C, int h, int w,
                              float* dx) {
  const int fy = H / h, fx = W / w;
  const float inv = 1.0f / (float)(fy * fx);
  for (int b = 0; b < B; ++b)
    for (int iy = 0; iy < H; ++iy) {
      const int oy = iy / fy;
      for (int ix = 0; ix < W; ++ix) {
        const int ox = ix / fx;
        simd::axpby(C, inv, dy + (((int64_t)b * h + oy) * w + ox) * C, 1.0f,
                    dx + (((int64_t)b * H + iy) * W + ix) * C);
      }
    }
}

void upsample_nearest(const float* x, int B, int h, int w, int C, int H, int W, float* y) {
  check(h > 0 && w > 0 && H % h == 0 && W % w == 0, "nearest upsample needs integer factors");
  const int fy = H / h, fx = W / w;
  for (int b = 0; b < B; ++b)
    for (int iy = 0; iy < H; ++iy) {
      const int sy = iy / fy;
      for (int ix = 0; ix < W; ++ix) {
        const int sx = ix / fx;
        std::memcpy(y + (((int64_t)b * H + iy) * W + ix) * C,
                    x + (((int64_t)b * h + sy) * w + sx) * C, (size_t)C * sizeof(float));
      }
    }
}

void upsample_nearest_backward(const float* dy, int B, int h, int w, int C, int H, int W,
                               float* dx) {
  const int fy = H / h, fx = W / w;
  for (int b = 0; b < B; ++b)
    for (int iy = 0; iy < H; ++iy) {
      const int sy = iy / fy;
      for (int ix = 0; ix < W; ++ix) {
        const int sx = ix / fx;
        simd::axpby(C, 1.0f, dy + (((int64_t)b * H + iy) * W + ix) * C, 1.0f,
                    dx + (((int64_t)b * h + sy) * w + sx) * C);
      }
    }
}

// ------------------------------------------------------------ activations

void sigmoid(const float* x, int64_t n, float* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
}

void sigmoid_backward(const float* y, const float* dy, int64_t n, float* dx, bool accum) {
  for (int64_t i = 0; i < n; ++i) {
    const float v = dy[i] * y[i] * (1.0f - y[i]);
    dx[i] = accum ? dx[i] + v : v;
  }
}

void clamp01(const float* x, int64_t n, float* y) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] < 0.0f ? 0.0f : (x[i] > 1.0f ? 1.0f : x[i]);
}

void clamp01_backward(const float* x, const float* dy, int64_t n, float* dx, bool accum) {
  for (int64_t i = 0; i < n; ++i) {
    const float v = (x[i] >= 0.0f && x[i] <= 1.0f) ? dy[i] : 0.0f;
    dx[i] = accum ? dx[i] + v : v;
  }
}

// ----------------------------------------------------------- serialization

void save_params(BinWriter& w, const std::vector<Param*>& params) {
  w.u32((uint32_t)params.size());
  for (const Param* p : params) {
    w.str(p->name);
    w.tensor(p->w);
  }
}

void load_params(BinReader& r, const std::vector<Param*>& params) {
  const uint32_t n = r.u32();
  check(n == params.size(), "parameter count mismatch in checkpoint");
  for (Param* p : params) {
    const std::string name = r.str();
    check(name == p->name, "parameter name mismatch: want " + p->name + ", got " + name);
    Tensor t = r.tensor();
    check(t.shape == p->w.shape, "parameter shape mismatch for " + p->name);
    p->w = std::move(t);
  }
}

void save_optimizer(BinWriter& w, const AdamW& opt) {
  w.u64((uint64_t)opt.step_count());
  w.u32((uint32_t)opt.params().size());
  for (const Param* p : opt.params()) {
    w.str(p->name);
    const bool has = p->m.numel() == p->w.numel();
    w.u8(has ? 1 : 0);
    if (has) {
      w.tensor(p->m);
      w.tensor(p->v);
    }
  }
}

void load_optimizer(BinReader& r, AdamW& opt) {
  opt.set_step_count((int64_t)r.u64());
  const uint32_t n = r.u32();
  check(n == opt.params().size(), "optimizer param count mismatch");
  for (Param* p : opt.params()) {
    const std::string name = r.str();
    check(name == p->name, "optimizer param name mismatch for " + p->name);
    if (r.u8()) {
      p->m = r.tensor();
      p->v = r.tensor();
      check(p->m.shape == p->w.shape && p->v.shape == p->w.shape,
            "optimizer moment shape mismatch for " + p->name);
    }
  }
}

uint64_t hash_params(const std::vector<Param*>& params) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const Param* p : params) {
    h = fnv1a64(p->name.data(), p->name.size(), h);
    h = fnv1a64(p->w.data.data(), p->w.data.size() * sizeof(float), h);
  }
  return h;
}

}  // namespace segvar::nn
