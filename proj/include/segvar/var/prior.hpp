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

#include <vector>

#include "segvar/nn/nn.hpp"
#include "segvar/vq/tokenizer.hpp"

// The hierarchical autoregressive prior over joint image/seglat token
// pyramids: one sequence [cls, typ, X_1||S_1, ..., X_K||S_K] with full
// attention inside each scale block and causal attention across blocks.
// Every block is predicted in parallel from the condition tokens and all
// coarser blocks; the block's own tokens never feed its inputs, so the
// next-scale structure lives in the content embeddings (partial
// dequantized reconstructions of the coarser scales).

namespace segvar::var {

struct PriorConfig {
  int V = 512;           // token vocabulary (tokenizer codebook size)
  int width = 128;
  int layers = 6;
  int heads = 4;
  int num_classes = 16;  // valid cls ids are 0..num_classes
  int content_dim = 32;  // tokenizer embedding width
  std::vector<int> scales = {1, 2, 4, 8};
  float drop_prob = 0.1f;  // cls/typ -> EMPTY probability during training

  int base_size() const { return scales.back(); }
};

// Start-token pair. EMPTY ids come from PriorModel::cls_empty/typ_empty.
struct ConditionTokens {
  int cls = 0;
  int typ = 0;
};

// Fixed per-position bookkeeping for the scale-block sequence.
struct SeqLayout {
  int T = 0;                    // full length: 2 + 2 * total_tokens
  std::vector<int> block_of;    // -1 for the two condition positions
  std::vector<int> stream_of;   // 0 image, 1 seglat, -1 condition
  std::vector<int> grid_of;     // flat index inside the scale grid
  std::vector<int> prefix;      // attention prefix: attend to [0, prefix[p])
  std::vector<int> block_start; // sequence position where block k begins
  std::vector<int> block_end;   // one past the block's seglat half

  static SeqLayout build(const vq::ScaleSchedule& sched);
  // sequence length when only the first `upto` blocks are materialized
  int len(int upto) const { return upto == 0 ? 2 : block_end[(size_t)upto - 1]; }
};

// Top-k followed by minimal-nucleus filtering: probabilities over [0, V)
// with masked entries exactly zero and the kept set renormalized. Exposed
// for the sampling invariants tests.
std::vector<float> filter_topk_topp(const float* logits, int V, int top_k, float top_p);

// Draw from a filtered distribution; a single-support distribution is
// returned without consuming randomness (top_k=1 is rng-independent).
int sample_index(const std::vector<float>& probs, Rng& rng);

class PriorModel {
 public:
  void init(const PriorConfig& cfg, Rng& rng);

  int cls_empty() const { return cfg.num_classes + 1; }
  int typ_empty() const { return 3; }

  // Builds input embeddings for the first `upto` blocks and runs the
  // transformer; returns logits [B*len, V]. cls/typ hold B ids each. The
  // pyramids are batched like the tokenizer's (tokens[k] has B*h_k*w_k
  // entries); only the first upto-1 scales of each are read.
  Tensor forward(const vq::PyramidQuantizer& quant, const vq::TokenPyramid& img,
                 const vq::TokenPyramid& lat, const std::vector<int>& cls,
                 const std::vector<int>& typ, int B, int upto);

  // Next-scale cross entropy over both streams of every block, averaged
  // over all scored positions. With probability drop_prob per sample, cls
  // and typ are both replaced by EMPTY. Accumulates parameter gradients
  // when with_backward is set. seglat_only restricts the objective to the
  // seglat stream (stage-2 fine-tuning); the image stream still conditions.
  double teacher_forcing_loss(const vq::PyramidQuantizer& quant, const vq::TokenPyramid& img,
                              const vq::TokenPyramid& lat, std::vector<int> cls,
                              std::vector<int> typ, int B, float drop_prob, Rng& rng,
                              bool with_backward, bool seglat_only = false);

  // Scale-by-scale generation under classifier-free guidance
  // (l = l_u + s*(l_c - l_u); s = 1 short-circuits to the conditional
  // logits). Within a block the image half is drawn before the seglat half
  // from the same forward pass. Supplied image_tokens fill the image half
  // instead of sampling it; image_out receives the image pyramid when set.
  // seglat_logit_bias, when given, holds one [h_k*w_k, V] tensor per scale
  // added to the seglat-half logits before filtering; seglat_logit_scale
  // multiplies the guided model logits first (fusion weight on the prior).
  vq::TokenPyramid sample_pyramid(const vq::PyramidQuantizer& quant, ConditionTokens cond,
                                  const vq::TokenPyramid* image_tokens, int top_k, float top_p,
                                  float guidance_scale, Rng& rng,
                                  vq::TokenPyramid* image_out = nullptr,
                                  const std::vector<Tensor>* seglat_logit_bias = nullptr,
                                  float seglat_logit_scale = 1.0f);

  void collect(std::vector<nn::Param*>& out);
  void save(BinWriter& w);
  void load(BinReader& r);

  PriorConfig cfg;
  vq::ScaleSchedule schedule;
  SeqLayout layout;

  nn::Embedding cls_emb;            // [num_classes + 2, width], EMPTY last
  nn::Embedding typ_emb;            // [4, width], EMPTY last
  nn::Param start_emb;              // [2, width] first-scale content per stream
  nn::Param scale_emb;              // [K, width]
  nn::Param stream_emb;             // [2, width]
  std::vector<nn::Param> pos_emb;   // per scale: [h_k*w_k, width]
  nn::Linear content_proj;          // content_dim -> width
  std::vector<nn::Block> blocks;
  nn::LayerNorm ln_f;
  nn::Linear head;                  // width -> V, shared across streams/scales

 private:
  Tensor build_inputs(const vq::PyramidQuantizer& quant, const vq::TokenPyramid& img,
                      const vq::TokenPyramid& lat, const std::vector<int>& cls,
                      const std::vector<int>& typ, int B, int upto);
  void backward_inputs(const float* dinputs, int B, int upto);

  // caches from the last forward, consumed by the loss backward
  std::vector<int> cls_ids_, typ_ids_;
  Tensor content_rows_;             // [n_content, content_dim]
  std::vector<int64_t> content_at_; // row -> flat sequence row (b*len + p)
  std::vector<Tensor> layer_in_;    // transformer inputs per layer + final
  Tensor ln_out_;
};

}  // namespace segvar::var
