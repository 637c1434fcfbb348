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

#include "segvar/latent/transform.hpp"
#include "segvar/var/prior.hpp"
#include "segvar/vq/tokenizer.hpp"

// The image-side prior network: a small residual conv backbone fused by
// full-attention transformer layers, emitting an independent token
// distribution for every position of every scale of the seglat pyramid.
// Trained in stage 3 against the frozen posterior's tokens; at inference
// the logits either decode directly (per-position argmax/sample) or bias
// the autoregressive prior's seglat stream ("fused").

namespace segvar::img {

struct EncoderConfig {
  int size = 32;     // input image side
  int in_ch = 3;
  int base_ch = 32;  // backbone width; final backbone channels = 2*base_ch
  int width = 128;   // fusion width
  int heads = 4;
  int fusion_layers = 2;
  int V = 512;
  std::vector<int> scales = {1, 2, 4, 8};

  int base_size() const { return scales.back(); }
};

// Pre-activation residual block: y = skip(x) + conv3x3(silu(conv3x3(x))).
// The skip is identity when shape is preserved, else a strided 1x1 conv.
class ResBlock {
 public:
  void init(const std::string& name, int cin, int cout, int stride, Rng& rng);
  int out_h(int h) const { return c1.out_h(h); }
  int out_w(int w) const { return c1.out_w(w); }
  void forward(const float* x, int B, int H, int W, float* y);
  // uses caches from the last forward; dx may be null
  void backward(const float* x, const float* dy, int B, int H, int W, float* dx);
  void collect(std::vector<nn::Param*>& out);

  nn::Conv2d c1, c2, skip;
  bool projected() const { return proj_; }

 private:
  bool proj_ = false;
  Tensor a1_, s1_;
};

// Per-scale logit grids over the seglat token vocabulary.
struct LatentLogits {
  int B = 0;
  std::vector<Tensor> scales;  // per scale: [B, h_k, w_k, V]
};

class ImageEncoder {
 public:
  void init(const EncoderConfig& c, Rng& rng);

  // [B, size, size, in_ch] in [0,1] -> per-scale logits; caches activations
  // for backward.
  LatentLogits forward(const float* x, int B);

  // Mean token cross-entropy over every scale and position against the
  // frozen posterior's pyramid; fills the logit gradients for backward.
  float stage3_loss(const LatentLogits& logits, const vq::TokenPyramid& teacher);

  // Backpropagates the gradients left by stage3_loss through the caches of
  // the last forward. x must be the same buffer.
  void backward(const float* x, int B);

  void collect(std::vector<nn::Param*>& out);
  void save(BinWriter& w);
  void load(BinReader& r);

  EncoderConfig cfg;
  vq::ScaleSchedule schedule;

  ResBlock b1, b2, b3, b4;
  nn::Linear proj;                  // 2*base_ch -> width
  nn::Param fuse_pos;               // [base^2, width]
  std::vector<nn::Block> blocks;
  nn::LayerNorm ln_f;
  std::vector<nn::Param> scale_pos;  // per scale: [h_k*w_k, width]
  nn::Linear head;                   // width -> V, shared across scales

 private:
  Tensor x1_, x2_, x3_, bb_;          // backbone activations (bb_ = proj input)
  std::vector<Tensor> layer_in_;      // fusion stream per block + final
  Tensor ln_out_;
  std::vector<Tensor> posed_;         // per scale: head input rows
  std::vector<Tensor> dlogits_;       // per scale, pre-scaled by 1/(B*total)
  int last_b_ = 0;
};

enum class InferMode { direct, fused };

struct InferParams {
  InferMode mode = InferMode::fused;
  bool sample = false;  // direct mode: sample the filtered logits (else argmax)
  int top_k = 1;
  float top_p = 1.0f;
  float cfg_scale = 1.0f;
  float ar_weight = 1.0f;     // fused: scale on the AR prior's seglat logits
  float prior_weight = 1.0f;  // fused: scale on the image-encoder logits
  int cls = 0;
};

struct InferResult {
  codec::InstanceMaskSet masks;
  latent::MaskLogits logits;
  vq::TokenPyramid tokens;  // seglat tokens that produced the masks
  Tensor six;               // decoded 6-channel seglat [size, size, 6]
};

// Per-position token choice from single-sample logits: argmax (ties to the
// smaller index), or top-k/top-p sampling when sample is set.
vq::TokenPyramid choose_tokens(const LatentLogits& lg, const vq::ScaleSchedule& sched,
                               bool sample, int top_k, float top_p, Rng& rng);

// Decode a seglat token pyramid to masks through the frozen tokenizer and
// T_theta. Single sample.
InferResult masks_from_tokens(vq::Tokenizer& tok, latent::LatentDecoder& dec,
                              vq::TokenPyramid tokens, codec::Task task,
                              const codec::GridColorMap& grid);

// End-to-end inference on one [size, size, 3] image. Direct mode decodes the
// image encoder's own token choices; fused mode samples the AR prior with
// the image encoder's logits added to the seglat stream
// (ar_weight * prior logits + prior_weight * image logits). Schedules of all
// participating modules must agree.
InferResult infer_masks(ImageEncoder& ienc, var::PriorModel& prior, vq::Tokenizer& tok,
                        latent::LatentDecoder& dec, const float* image, codec::Task task,
                        const InferParams& p, const codec::GridColorMap& grid, Rng& rng);

}  // namespace segvar::img
