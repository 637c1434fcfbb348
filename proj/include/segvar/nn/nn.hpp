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

#pragma once

#include <string>
#include <vector>

#include "segvar/core/rng.hpp"
#include "segvar/core/serialize.hpp"
#include "segvar/core/tensor.hpp"

// Hand-rolled layers with explicit forward/backward. There is no autograd
// tape: models compose these in code and mirror the composition in reverse
// for the backward pass. Activations a layer needs for its backward are
// cached inside the layer; the input x must be re-supplied by the caller.

namespace segvar::nn {

struct Param {
  std::string name;
  Tensor w;     // value
  Tensor g;     // gradient, same shape
  Tensor m, v;  // AdamW moments, allocated on first optimizer step

  void init_shape(std::string n, std::vector<int64_t> shape) {
    name = std::move(n);
    w = Tensor(shape);
    g = Tensor(std::move(shape));
  }
  int64_t numel() const { return w.numel(); }
};

void init_normal(Param& p, Rng& rng, float stddev);
void init_uniform(Param& p, Rng& rng, float lo, float hi);
void init_const(Param& p, float v);

// Decoupled-weight-decay Adam over an explicit parameter set. LayerNorm
// gains/biases and other 1-D params are excluded from decay.
class AdamW {
 public:
  AdamW(std::vector<Param*> params, float beta1, float beta2, float eps, float weight_decay);

  void zero_grad();
  void step(float lr);
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  float beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

class Linear {
 public:
  Linear() = default;
  void init(const std::string& name, int in, int out, Rng& rng, float init_std);
  // y [n,out] = x [n,in] * W^T + b
  void forward(const float* x, int64_t n, float* y) const;
  // accumulates into w.g/b.g; writes dx (or adds when accum_dx) unless null
  void backward(const float* x, const float* dy, int64_t n, float* dx, bool accum_dx = false);
  void collect(std::vector<Param*>& out);

  Param w, b;
  int in = 0, out = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  void init(const std::string& name, int dim);
  void forward(const float* x, int64_t n, float* y);
  void backward(const float* x, const float* dy, int64_t n, float* dx, bool accum_dx = false);
  void collect(std::vector<Param*>& out);

  Param g, b;
  int dim = 0;

 private:
  std::vector<float> mean_, rstd_;  // cached per row
};

class Embedding {
 public:
  Embedding() = default;
  void init(const std::string& name, int vocab, int dim, Rng& rng, float init_std);
  void forward(const int* ids, int64_t n, float* y) const;
  void backward(const int* ids, const float* dy, int64_t n);
  void collect(std::vector<Param*>& out);

  Param w;
  int vocab = 0, dim = 0;
};

// Multi-head attention over [B,T,dim] with optional per-position attention
// prefixes: position t may attend to positions [0, prefix[t]); prefix null
// means full bidirectional attention. The prefix vector is shared across the
// batch. Masked positions carry exactly zero probability.
class Attention {
 public:
  Attention() = default;
  void init(const std::string& name, int dim, int heads, Rng& rng, float init_std);
  void forward(const float* x, int B, int T, const int* prefix, float* y);
  void backward(const float* x, const float* dy, int B, int T, const int* prefix, float* dx);
  void collect(std::vector<Param*>& out);

  Linear qkv, proj;
  int dim = 0, heads = 0, head_dim = 0;

 private:
  Tensor qkv_out_, q_, k_, v_, probs_, att_;
};

// Pre-LN transformer block: x + attn(ln1(x)), then + mlp(ln2(.)), SiLU MLP
// with 4x hidden width.
class Block {
 public:
  Block() = default;
  void init(const std::string& name, int dim, int heads, Rng& rng, float init_std);
  void forward(const float* x, int B, int T, const int* prefix, float* y);
  void backward(const float* x, const float* dy, int B, int T, const int* prefix, float* dx);
  void collect(std::vector<Param*>& out);

  LayerNorm ln1, ln2;
  Attention attn;
  Linear fc1, fc2;
  int dim = 0;

 private:
  Tensor ln1_out_, att_out_, xmid_, ln2_out_, fc1_out_, silu_out_, dbuf_, dbuf2_;
};

// NHWC conv over [B,H,W,cin] via im2col + GEMM; the column buffer is cached
// for the backward pass.
class Conv2d {
 public:
  Conv2d() = default;
  void init(const std::string& name, int cin, int cout, int k, int stride, int pad, Rng& rng,
            float init_std);
  int out_h(int h) const { return (h + 2 * pad - k) / stride + 1; }
  int out_w(int w) const { return (w + 2 * pad - k) / stride + 1; }
  void forward(const float* x, int B, int H, int W, float* y);
  void backward(const float* x, const float* dy, int B, int H, int W, float* dx,
                bool accum_dx = false);
  void collect(std::vector<Param*>& out);

  Param w, b;  // w [cout, k*k*cin]
  int cin = 0, cout = 0, k = 0, stride = 0, pad = 0;

 private:
  Tensor col_;
};

// Integer-factor spatial resizes over NHWC, used by the residual pyramid.
// Area-average down (H,W divisible by h,w) and nearest-neighbor up
// (h,w divide H,W). The backward functions are exact adjoints and ACCUMULATE
// into dx.
void downsample_area(const float* x, int B, int H, int W, int C, int h, int w, float* y);
void downsample_area_backward(const float* dy, int B, int H, int W, int C, int h, int w,
                              float* dx);
void upsample_nearest(const float* x, int B, int h, int w, int C, int H, int W, float* y);
void upsample_nearest_backward(const float* dy, int B, int h, int w, int C, int H, int W,
                               float* dx);

// Elementwise heads.
void sigmoid(const float* x, int64_t n, float* y);
void sigmoid_backward(const float* y, const float* dy, int64_t n, float* dx, bool accum);
void clamp01(const float* x, int64_t n, float* y);
void clamp01_backward(const float* x, const float* dy, int64_t n, float* dx, bool accum);

// Parameter (de)serialization: names and shapes are written alongside the
// values and verified on load. Optimizer state adds moments and step count.
void save_params(BinWriter& w, const std::vector<Param*>& params);
void load_params(BinReader& r, const std::vector<Param*>& params);
void save_optimizer(BinWriter& w, const AdamW& opt);
void load_optimizer(BinReader& r, AdamW& opt);

// FNV-1a over all parameter values in collect order (for freeze checks).
uint64_t hash_params(const std::vector<Param*>& params);

}  // namespace segvar::nn
