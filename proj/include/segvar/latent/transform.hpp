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
#include <utility>
#include <vector>

#include "segvar/codec/colormap.hpp"
#include "segvar/nn/nn.hpp"
#include "segvar/vq/tokenizer.hpp"

// The differentiable halves around the tokenizer: the latent encoder T_phi
// (mask -> 3-channel seglat S, concatenated with the colormap M_c into the
// 6-channel tokenizer input) and the latent decoder T_theta (decoded
// 6-channel grid -> per-pixel category and instance-slot logits).

namespace segvar::latent {

struct LatentConfig {
  int num_classes = 4;  // categories 1..num_classes; 0 is background
  int grid_a = 8;       // colormap grid; T_theta emits a*a slot logits
  int size = 32;        // square input side; must divide by patch and by 4
  int patch = 4;
  int width = 128;
  int layers = 4;
  int heads = 4;

  int cat_channels() const { return num_classes + 1; }
  int slot_channels() const { return grid_a * grid_a; }
};

// Mask rasterizations shared by T_phi inputs and T_theta targets. Instances
// paint in index order (later masks overwrite earlier ones), matching
// encode_colormap.
std::vector<int> category_map(const codec::InstanceMaskSet& m, int num_classes);
// per-pixel centroid grid cell of the covering instance, -1 for background
std::vector<int> slot_map(const codec::InstanceMaskSet& m, int a);
// one-hot rows: out is [n, num_classes + 1], cats[i] in [0, num_classes]
void write_onehot(const int* cats, int64_t n, int num_classes, float* out);

// Channel concatenation (S then M_c), the fixed 6-channel tokenizer input
// layout. mc01 is the colormap rescaled to [0,1].
void make_tokenizer_input(const float* s, const float* mc01, int64_t n_pixels, float* out6);
// u8 colormap -> [0,1] floats
void colormap_to_float(const codec::ImageU8& mc, float* out);
// channels 3..5 of a decoded 6-channel grid -> u8 colormap (x255, rounded)
codec::ImageU8 colormap_from_six(const float* six, int height, int width);

// Bidirectional transformer over non-overlapping patches: linear patch
// embedding + learned positions, pre-LN blocks, linear per-patch head,
// reassembled to pixels. Patch rows gather (dy, dx, c) fastest-last.
class PatchTransformer {
 public:
  void init(const std::string& name, int size, int patch, int in_ch, int out_ch, int width,
            int layers, int heads, Rng& rng);

  Tensor forward(const float* x, int B);  // [B,size,size,in_ch] -> [B,size,size,out_ch]
  // uses caches from the last forward; dx may be null
  void backward(const float* x, const float* dy, int B, float* dx);
  void collect(std::vector<nn::Param*>& out);

  nn::Linear proj_in, proj_out;
  nn::Param pos;  // [(size/patch)^2, width]
  std::vector<nn::Block> blocks;
  nn::LayerNorm ln_f;
  int size = 0, patch = 0, in_ch = 0, out_ch = 0, width = 0, tokens = 0;

 private:
  Tensor patches_, ln_out_;
  std::vector<Tensor> layer_in_;
};

// T_phi: one-hot category map -> seglat S in (0,1), sigmoid output head.
class LatentEncoder {
 public:
  void init(const LatentConfig& cfg, Rng& rng);
  Tensor forward(const float* onehot, int B);  // [B,size,size,3]
  void backward(const float* onehot, const float* ds, int B);
  void collect(std::vector<nn::Param*>& out);

  LatentConfig cfg;
  PatchTransformer net;

 private:
  Tensor s_;  // cached sigmoid output
};

// T_theta: decoded 6-channel grid -> per-pixel logits, categories first
// (cat_channels) then instance slots (slot_channels).
class LatentDecoder {
 public:
  void init(const LatentConfig& cfg, Rng& rng);
  Tensor forward(const float* six, int B);  // [B,size,size,cat+slot]
  void backward(const float* six, const float* dlogits, int B, float* dsix);
  void collect(std::vector<nn::Param*>& out);

  LatentConfig cfg;
  PatchTransformer net;
};

struct MaskLogits {
  int height = 0, width = 0;
  int num_classes = 0;  // categories = num_classes + 1 with background
  int slots = 0;
  Tensor cat;   // [height*width, num_classes+1]
  Tensor slot;  // [height*width, slots]
};

// Splits a single-sample LatentDecoder output into the two heads.
MaskLogits split_logits(const Tensor& raw, const LatentConfig& cfg);

// Hard decoding. Semantic: per-pixel category argmax, one mask per present
// category, slot logits ignored. Instance/panoptic: instance identities come
// from decode_colormap on the colormap image (grid-cell colors), pixel
// membership from the slot argmax over the active cells restricted to
// foreground-category pixels, and each instance's category is the majority
// pixel category. Degenerate inputs yield empty sets.
codec::InstanceMaskSet decode_mask_logits(const MaskLogits& logits, const codec::ImageU8& mc,
                                          codec::Task task, const codec::GridColorMap& grid);

// seglat_from_mask composed with the decoder path: run T_theta on the decoded
// 6-channel grid and hard-decode. Single sample.
std::pair<MaskLogits, codec::InstanceMaskSet> mask_from_seglat(LatentDecoder& dec,
                                                               const float* six,
                                                               codec::Task task,
                                                               const codec::GridColorMap& grid);

// T_phi applied to one rasterized mask; eval-mode pure.
Tensor seglat_from_mask(LatentEncoder& enc, const codec::InstanceMaskSet& m);

// Stage-2 posterior objective around the frozen tokenizer:
//   recon    = mean squared error ||xhat6 - [S || mc01]||^2
//   recovery = mean category CE + mean slot CE over covered pixels
// total = recon + recovery, unit weights. Gradients flow to T_phi through
// the quantizer's straight-through path and to T_theta directly; tokenizer
// parameters also accumulate gradients but stage 2's optimizer ignores them.
struct Stage2Out {
  double total = 0, recon = 0, recovery = 0;
  vq::TokenPyramid tokens;  // posterior tokens q_phi(z|c), stage-3 teacher
  Tensor six;               // [B,size,size,6] tokenizer input
  Tensor xhat;              // [B,size,size,6] tokenizer reconstruction
  Tensor logits;            // [B,size,size,cat+slot]
};

class Stage2Graph {
 public:
  Stage2Graph(vq::Tokenizer& tok, LatentEncoder& enc, LatentDecoder& dec)
      : tok_(tok), enc_(enc), dec_(dec) {}

  // onehot [B*n,cat], mc01 [B*n,3], cat_targets [B*n] in [0,K]; slot_targets
  // [B*n] in [-1, a^2) or null for semantic batches. n = size*size.
  Stage2Out forward(const float* onehot, const float* mc01, const int* cat_targets,
                    const int* slot_targets, int B);
  // consumes the caches of the last forward
  void backward();

 private:
  vq::Tokenizer& tok_;
  LatentEncoder& enc_;
  LatentDecoder& dec_;

  const float* onehot_ = nullptr;
  std::vector<int> cat_t_, slot_t_;
  bool has_slots_ = false;
  int b_ = 0;
  Tensor six_, st_, xhat_, logits_, dlogits_;
};

}  // namespace segvar::latent
