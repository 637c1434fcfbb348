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

#include <utility>
#include <vector>

#include "segvar/nn/nn.hpp"

// The shared tokenizer: small conv encoder/decoder stacks (separate per
// input branch, 3-channel image vs 6-channel seglat) around one multi-scale
// residual vector quantizer with a shared codebook.

namespace segvar::vq {

struct ScaleSchedule {
  std::vector<std::pair<int, int>> sizes;  // (h_k, w_k), h_k*w_k strictly increasing

  int K() const { return (int)sizes.size(); }
  int total_tokens() const {
    int n = 0;
    for (auto [h, w] : sizes) n += h * w;
    return n;
  }
};

// Square schedule from side lengths, e.g. {1,2,4,8}; validates monotonicity
// and that the last side matches the encoder's base feature size.
ScaleSchedule make_schedule(const std::vector<int>& sides, int base_size);

// Per-scale integer token grids, flattened row-major with the batch leading:
// tokens[k] has B*h_k*w_k entries in [0, V).
using TokenPyramid = std::vector<std::vector<int>>;

// Conv encoder, stride 4: C -> base -> 2*base -> 2*base -> dim.
class EncoderStack {
 public:
  void init(const std::string& name, int cin, int base, int dim, Rng& rng);
  void forward(const float* x, int B, int H, int W, float* feat);
  // uses caches from the last forward; dx may be null
  void backward(const float* x, const float* dfeat, int B, int H, int W, float* dx);
  void collect(std::vector<nn::Param*>& out);

  nn::Conv2d c1, c2, c3, c4;

 private:
  Tensor a1_, s1_, a2_, s2_, a3_, s3_;
};

// Mirror decoder, x4 nearest upsampling, clamped [0,1] output.
class DecoderStack {
 public:
  void init(const std::string& name, int dim, int base, int cout, Rng& rng);
  void forward(const float* feat, int B, int h, int w, float* out);
  void backward(const float* feat, const float* dout, int B, int h, int w, float* dfeat);
  void collect(std::vector<nn::Param*>& out);

  nn::Conv2d d1, d2, d3, d4;

 private:
  Tensor b1_, t1_, u1_, b2_, t2_, u2_, b3_, t3_, pre_;
};

struct QuantizeResult {
  TokenPyramid tokens;
  Tensor recon;  // [B, H, W, dim] sum of upsampled quantized grids
};

class PyramidQuantizer {
 public:
  // Random normal init; row 0 is pinned to the zero vector so the nearest
  // lookup can never increase a residual, which makes scale refinement
  // monotone for every input.
  void init(int V, int dim, Rng& rng, float init_std = 0.1f);

  // Residual loop: r <- features; per scale downsample r, nearest-codebook
  // lookup, upsample the quantized grid, subtract. feat is [B, H, W, dim];
  // every (h_k, w_k) must divide (H, W). Optionally appends every
  // downsampled residual row (dim floats each) to *residual_rows for
  // dead-code reseeding.
  QuantizeResult quantize(const float* feat, int B, int H, int W, const ScaleSchedule& sched,
                          std::vector<float>* residual_rows = nullptr) const;

  // Sum of upsampled codebook lookups over the first n_scales (all when
  // n_scales < 0). Exact left-inverse of quantize's reconstruction.
  Tensor dequantize(const TokenPyramid& tokens, int B, int H, int W,
                    const ScaleSchedule& sched, int n_scales = -1) const;

  // Accumulate d(recon)/d(codebook) into the codebook gradient for the given
  // assignment, where drecon is [B, H, W, dim] at base resolution.
  void backward_codebook(const TokenPyramid& tokens, const float* drecon, int B, int H, int W,
                         const ScaleSchedule& sched);

  // Replace codebook entries with zero usage count by random reservoir rows
  // (dim floats each); returns how many were reseeded.
  int reseed_dead(const std::vector<int64_t>& counts, const std::vector<float>& reservoir,
                  Rng& rng);

  int V() const { return (int)codebook.w.dim(0); }
  int dim() const { return (int)codebook.w.dim(1); }

  nn::Param codebook;  // [V, dim]
};

struct TokenizerConfig {
  int input_size = 32;    // square inputs
  int img_channels = 3;   // image branch
  int lat_channels = 6;   // seglat branch (S with M_c)
  int base_channels = 32;
  int dim = 32;
  int V = 512;
  std::vector<int> scales = {1, 2, 4, 8};
  float beta = 0.25f;  // commitment weight

  int base_size() const { return input_size / 4; }
};

enum class Branch { image, seglat };

struct TokenizerLossOut {
  double total = 0, recon = 0, commit = 0, codebook = 0;
  TokenPyramid tokens;
  Tensor xhat;  // [B, H, W, C]
};

class Tokenizer {
 public:
  void init(const TokenizerConfig& cfg, Rng& rng);

  // Frozen-weight helpers (also usable during training as the forward half).
  Tensor encode(Branch br, const float* x, int B);                     // [B,h,w,dim]
  Tensor decode(Branch br, const float* feat, int B);                  // [B,H,W,C]
  TokenPyramid tokenize(Branch br, const float* x, int B);             // encode+quantize
  Tensor detokenize(Branch br, const TokenPyramid& tokens, int B);     // dequantize+decode

  // Training: MSE reconstruction + beta*commitment + codebook terms, with a
  // straight-through estimator across quantization. backward() consumes the
  // caches of the immediately preceding forward for the same branch.
  TokenizerLossOut loss_forward(Branch br, const float* x, int B,
                                std::vector<float>* residual_rows = nullptr);
  void loss_backward(Branch br, const float* x, int B);

  void collect(std::vector<nn::Param*>& out);  // both branches + codebook
  void save(BinWriter& w);
  void load(BinReader& r);

  TokenizerConfig cfg;
  ScaleSchedule schedule;
  EncoderStack enc_img, enc_lat;
  DecoderStack dec_img, dec_lat;
  PyramidQuantizer quant;

 private:
  struct Cache {
    Tensor feat, st, xhat, dxhat;
    TokenPyramid tokens;
  };
  Cache& cache(Branch br) { return br == Branch::image ? cache_img_ : cache_lat_; }
  Cache cache_img_, cache_lat_;
};

}  // namespace segvar::vq
