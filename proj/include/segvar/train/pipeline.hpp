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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "segvar/core/rng.hpp"
#include "segvar/img/encoder.hpp"
#include "segvar/latent/transform.hpp"
#include "segvar/nn/nn.hpp"
#include "segvar/train/synthetic.hpp"
#include "segvar/var/prior.hpp"
#include "segvar/vq/tokenizer.hpp"

// Three-stage orchestration. Stage 1 trains the tokenizer and AR prior
// jointly on (image, seglat) pairs, seglat taken from the randomly
// initialized T_phi; stage 2 trains T_phi/T_theta through the frozen
// tokenizer's straight-through path; stage 3 distills the frozen posterior
// tokens into the image encoder. Checkpoints live in a directory with a
// manifest listing component hashes; logs are JSON lines.

namespace segvar::train {

constexpr int kCheckpointVersion = 1;

// Every knob needed to rebuild the module set identically.
struct ModelConfig {
  int image_size = 32;
  std::vector<int> scales = {1, 2, 4, 8};
  int V = 512;
  int dim = 32;
  int tok_base = 32;
  int prior_width = 128, prior_layers = 6, prior_heads = 4, prior_classes = 4;
  int num_classes = 4;  // mask categories, stuff included
  int grid_a = 8;
  int latent_width = 128, latent_layers = 4, latent_heads = 4, patch = 4;
  int img_base = 32, img_width = 128, img_heads = 4, img_layers = 2;
  float drop_prob = 0.1f;
  std::string palette = "6x51";

  bool operator==(const ModelConfig&) const = default;
};

struct DataConfig {
  std::string kind = "synthetic";  // synthetic | dir
  std::string path;                // kind = dir
  uint64_t seed = 0;
  int n = 512;
  int max_instances = 4;
  codec::Task task = codec::Task::panoptic;
  float noise_std = 0.02f;
};

struct StageConfig {
  int stage = 1;
  float lr = 1e-4f;
  float weight_decay = 0.05f;
  std::vector<float> milestones = {0.9f, 0.95f};  // step fractions, 10x decay each
  int batch = 32;
  int steps = 5000;
  uint64_t seed = 0;
  bool tune_prior_seglat = false;  // stage 2: also fine-tune the prior's seglat stream
  int checkpoint_every = 0;        // 0 = final checkpoint only
  int log_every = 1;
  DataConfig data;
  ModelConfig model;
};

// JSON round trip; parsing validates ranges and stage prerequisites are
// checked by run_stage. SEGVAR_SEED in the environment overrides seed.
StageConfig stage_config_from_json(const std::string& text);
std::string stage_config_to_json(const StageConfig& cfg);
StageConfig load_stage_config(const std::string& path);

// All trainable modules plus the shapes they were built from.
struct Bundle {
  ModelConfig mc;
  vq::Tokenizer tok;
  var::PriorModel prior;
  latent::LatentEncoder t_phi;
  latent::LatentDecoder t_theta;
  img::ImageEncoder ienc;

  void init(const ModelConfig& m, Rng& rng);
  codec::GridColorMap grid() const;
  // fixed order: tokenizer, prior, t_phi, t_theta, image_encoder
  std::vector<std::pair<std::string, uint64_t>> component_hashes();
};

// Checkpoint directory: manifest.json + one .bin per component (+ optimizer
// state and the stage-1 code-usage window when saved mid-stage). Loading
// verifies version, shapes, and the manifest hashes; saving twice is
// byte-stable.
void save_checkpoint(const std::string& dir, Bundle& b, int stage, int64_t step,
                     const Rng& rng, const nn::AdamW* opt = nullptr,
                     const std::vector<int64_t>* reseed_counts = nullptr);
struct CheckpointInfo {
  int stage = 0;
  int64_t step = 0;
  Rng::State rng_state{};
  bool has_optimizer = false;
};
CheckpointInfo load_checkpoint(const std::string& dir, Bundle& b);
CheckpointInfo read_checkpoint_info(const std::string& dir, ModelConfig* model = nullptr);

struct StageResult {
  double final_loss = 0.0;
  int64_t steps = 0;
  std::string checkpoint_dir;  // out_dir
  std::string log_path;
};

// Runs one stage start to finish. in_ckpt names the prerequisite checkpoint
// ("" only for stage 1); out_dir receives the final checkpoint, the JSONL
// log, and mid-stage snapshots under out_dir/mid when checkpoint_every is
// set. resume_from continues a mid-stage snapshot of the same stage.
StageResult run_stage(const StageConfig& cfg, const std::string& in_ckpt,
                      const std::string& out_dir, const std::string& resume_from = "");

}  // namespace segvar::train
