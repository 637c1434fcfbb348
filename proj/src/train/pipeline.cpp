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

#include "segvar/train/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "segvar/core/error.hpp"
#include "segvar/core/hash.hpp"
#include "segvar/core/serialize.hpp"

namespace segvar::train {
namespace {

using nlohmann::json;

// reseed window for dead codebook entries (stage 1)
constexpr int kReseedInterval = 200;

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    check(known, "unknown key \"" + it.key() + "\" in " + where);
  }
}

json model_to_json(const ModelConfig& m) {
  return json{
      {"image_size", m.image_size}, {"scales", m.scales},
      {"V", m.V},                   {"dim", m.dim},
      {"tok_base", m.tok_base},     {"prior_width", m.prior_width},
      {"prior_layers", m.prior_layers}, {"prior_heads", m.prior_heads},
      {"prior_classes", m.prior_classes}, {"num_classes", m.num_classes},
      {"grid_a", m.grid_a},         {"latent_width", m.latent_width},
      {"latent_layers", m.latent_layers}, {"latent_heads", m.latent_heads},
      {"patch", m.patch},           {"img_base", m.img_base},
      {"img_width", m.img_width},   {"img_heads", m.img_heads},
      {"img_layers", m.img_layers}, {"drop_prob", m.drop_prob},
      {"palette", m.palette},
  };
}

ModelConfig model_from_json(const json& j) {
  check(j.is_object(), "model config must be a JSON object");
  check_keys(j,
             {"image_size", "scales", "V", "dim", "tok_base", "prior_width", "prior_layers",
              "prior_heads", "prior_classes", "num_classes", "grid_a", "latent_width",
              "latent_layers", "latent_heads", "patch", "img_base", "img_width", "img_heads",
              "img_layers", "drop_prob", "palette"},
             "model config");
  ModelConfig m;
  m.image_size = j.value("image_size", m.image_size);
  m.scales = j.value("scales", m.scales);
  m.V = j.value("V", m.V);
  m.dim = j.value("dim", m.dim);
  m.tok_base = j.value("tok_base", m.tok_base);
  m.prior_width = j.value("prior_width", m.prior_width);
  m.prior_layers = j.value("prior_layers", m.prior_layers);
  m.prior_heads = j.value("prior_heads", m.prior_heads);
  m.prior_classes = j.value("prior_classes", m.prior_classes);
  m.num_classes = j.value("num_classes", m.num_classes);
  m.grid_a = j.value("grid_a", m.grid_a);
  m.latent_width = j.value("latent_width", m.latent_width);
  m.latent_layers = j.value("latent_layers", m.latent_layers);
  m.latent_heads = j.value("latent_heads", m.latent_heads);
  m.patch = j.value("patch", m.patch);
  m.img_base = j.value("img_base", m.img_base);
  m.img_width = j.value("img_width", m.img_width);
  m.img_heads = j.value("img_heads", m.img_heads);
  m.img_layers = j.value("img_layers", m.img_layers);
  m.drop_prob = j.value("drop_prob", m.drop_prob);
  m.palette = j.value("palette", m.palette);
  return m;
}

json data_to_json(const DataConfig& d) {
  return json{
      {"kind", d.kind},
      {"path", d.path},
      {"seed", d.seed},
      {"n", d.n},
      {"max_instances", d.max_instances},
      {"task", codec::task_to_string(d.task)},
      {"noise_std", d.noise_std},
  };
}

DataConfig data_from_json(const json& j) {
  check(j.is_object(), "data config must be a JSON object");
  check_keys(j, {"kind", "path", "seed", "n", "max_instances", "task", "noise_std"},
             "data config");
  DataConfig d;
  d.kind = j.value("kind", d.kind);
  d.path = j.value("path", d.path);
  d.seed = j.value("seed", d.seed);
  d.n = j.value("n", d.n);
  d.max_instances = j.value("max_instances", d.max_instances);
  d.task = codec::task_from_string(j.value("task", std::string(codec::task_to_string(d.task))));
  d.noise_std = j.value("noise_std", d.noise_std);
  return d;
}

void validate_stage_config(const StageConfig& c) {
  check(c.stage >= 1 && c.stage <= 3, "stage must be 1, 2, or 3");
  check(c.lr > 0.0f, "lr must be positive");
  check(c.weight_decay >= 0.0f, "weight_decay must be nonnegative");
  check(c.batch >= 1, "batch must be positive");
  check(c.steps >= 1, "steps must be positive");
  check(c.log_every >= 1, "log_every must be positive");
  check(c.checkpoint_every >= 0, "checkpoint_every must be nonnegative");
  float prev = 0.0f;
  for (float m : c.milestones) {
    check(m > prev && m <= 1.0f, "milestones must be strictly increasing in (0, 1]");
    prev = m;
  }
  check(c.data.kind == "synthetic" || c.data.kind == "dir",
        "data.kind must be \"synthetic\" or \"dir\"");
  if (c.data.kind == "synthetic") {
    check(c.data.n >= 1, "data.n must be positive");
    check(c.data.max_instances >= 1, "data.max_instances must be positive");
    check(c.data.noise_std >= 0.0f, "data.noise_std must be nonnegative");
  } else {
    check(!c.data.path.empty(), "data.path is required when data.kind is \"dir\"");
  }
}

// name -> collected params, in the fixed checkpoint order
std::vector<std::pair<std::string, std::vector<nn::Param*>>> component_params(Bundle& b) {
  std::vector<std::pair<std::string, std::vector<nn::Param*>>> out(5);
  out[0].first = "tokenizer";
  b.tok.collect(out[0].second);
  out[1].first = "prior";
  b.prior.collect(out[1].second);
  out[2].first = "t_phi";
  b.t_phi.collect(out[2].second);
  out[3].first = "t_theta";
  b.t_theta.collect(out[3].second);
  out[4].first = "image_encoder";
  b.ienc.collect(out[4].second);
  return out;
}

json read_manifest(const std::string& dir) {
  const std::string path = dir + "/manifest.json";
  std::ifstream f(path);
  if (!f) throw_io("cannot open checkpoint manifest: " + path);
  json m = json::parse(f, nullptr, false);
  check(!m.is_discarded(), "malformed checkpoint manifest: " + path);
  check(m.value("version", 0) == kCheckpointVersion,
        "unsupported checkpoint version in " + path);
  return m;
}

CheckpointInfo info_from_manifest(const json& m) {
  CheckpointInfo info;
  info.stage = m.at("stage").get<int>();
  info.step = m.at("step").get<int64_t>();
  const json& r = m.at("rng");
  info.rng_state.s = r.at("s").get<std::array<uint64_t, 4>>();
  info.rng_state.spare = r.at("spare").get<float>();
  info.rng_state.has_spare = static_cast<uint8_t>(r.at("has_spare").get<int>());
  info.has_optimizer = m.value("has_optimizer", false);
  return info;
}

// largest painted category (ties to the smaller id), 0 when none
int dominant_category(const std::vector<int>& cats, int num_classes) {
  std::vector<int64_t> cnt(static_cast<size_t>(num_classes) + 1, 0);
  for (int c : cats) ++cnt[static_cast<size_t>(c)];
  int best = 0;
  int64_t best_n = 0;
  for (int c = 1; c <= num_classes; ++c) {
    if (cnt[static_cast<size_t>(c)] > best_n) {
      best_n = cnt[static_cast<size_t>(c)];
      best = c;
    }
  }
  return best;
}

float lr_at(const StageConfig& cfg, int64_t step) {
  float lr = cfg.lr;
  for (float m : cfg.milestones) {
    if (step >= static_cast<int64_t>(static_cast<double>(m) * static_cast<double>(cfg.steps)))
      lr *= 0.1f;
  }
  return lr;
}

// training-time view of one dataset sample, precomputed per stage
struct PerSample {
  Tensor image;                    // [size,size,3] (stages 1/3, prior fine-tune)
  Tensor six;                      // [size,size,6] frozen-T_phi seglat input (stage 1)
  std::vector<float> onehot;       // [n_pix, K+1] (stage 2)
  std::vector<float> mc01;         // [n_pix, 3] (stage 2)
  std::vector<int> cat_t, slot_t;  // stage-2 targets
  vq::TokenPyramid teacher;        // posterior tokens (stage 3)
  vq::TokenPyramid img_tokens;     // frozen image tokens (stage-2 prior fine-tune)
  int cls = 0;
};

vq::TokenPyramid gather_pyramid(const std::vector<PerSample>& ps, const std::vector<int>& idx,
                                vq::TokenPyramid PerSample::*field,
                                const vq::ScaleSchedule& sched) {
  const int B = static_cast<int>(idx.size());
  vq::TokenPyramid out(static_cast<size_t>(sched.K()));
  for (int k = 0; k < sched.K(); ++k) {
    const auto [h, w] = sched.sizes[static_cast<size_t>(k)];
    const size_t hw = static_cast<size_t>(h) * static_cast<size_t>(w);
    out[static_cast<size_t>(k)].resize(static_cast<size_t>(B) * hw);
    for (int b = 0; b < B; ++b) {
      const auto& src = (ps[static_cast<size_t>(idx[static_cast<size_t>(b)])].*field)[
          static_cast<size_t>(k)];
      std::copy(src.begin(), src.end(),
                out[static_cast<size_t>(k)].begin() + static_cast<size_t>(b) * hw);
    }
  }
  return out;
}

}  // namespace

StageConfig stage_config_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  check(!j.is_discarded(), "malformed JSON in stage config");
  check(j.is_object(), "stage config must be a JSON object");
  StageConfig c;
  try {
    check_keys(j,
               {"stage", "lr", "weight_decay", "milestones", "batch", "steps", "seed",
                "tune_prior_seglat", "checkpoint_every", "log_every", "data", "model"},
               "stage config");
    c.stage = j.value("stage", c.stage);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.milestones = j.value("milestones", c.milestones);
    c.batch = j.value("batch", c.batch);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.tune_prior_seglat = j.value("tune_prior_seglat", c.tune_prior_seglat);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    if (j.contains("data")) c.data = data_from_json(j.at("data"));
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
  } catch (const json::exception& e) {
    throw_validation(std::string("stage config: ") + e.what());
  }
  validate_stage_config(c);
  return c;
}

std::string stage_config_to_json(const StageConfig& c) {
  json j{
      {"stage", c.stage},
      {"lr", c.lr},
      {"weight_decay", c.weight_decay},
      {"milestones", c.milestones},
      {"batch", c.batch},
      {"steps", c.steps},
      {"seed", c.seed},
      {"tune_prior_seglat", c.tune_prior_seglat},
      {"checkpoint_every", c.checkpoint_every},
      {"log_every", c.log_every},
      {"data", data_to_json(c.data)},
      {"model", model_to_json(c.model)},
  };
  return j.dump(2);
}

StageConfig load_stage_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw_io("cannot open stage config: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return stage_config_from_json(ss.str());
}

void Bundle::init(const ModelConfig& m, Rng& rng) {
  mc = m;
  vq::TokenizerConfig tc;
  tc.input_size = m.image_size;
  tc.base_channels = m.tok_base;
  tc.dim = m.dim;
  tc.V = m.V;
  tc.scales = m.scales;
  tok.init(tc, rng);

  var::PriorConfig pc;
  pc.V = m.V;
  pc.width = m.prior_width;
  pc.layers = m.prior_layers;
  pc.heads = m.prior_heads;
  pc.num_classes = m.prior_classes;
  pc.content_dim = m.dim;
  pc.scales = m.scales;
  pc.drop_prob = m.drop_prob;
  prior.init(pc, rng);

  latent::LatentConfig lc;
  lc.num_classes = m.num_classes;
  lc.grid_a = m.grid_a;
  lc.size = m.image_size;
  lc.patch = m.patch;
  lc.width = m.latent_width;
  lc.layers = m.latent_layers;
  lc.heads = m.latent_heads;
  t_phi.init(lc, rng);
  t_theta.init(lc, rng);

  img::EncoderConfig ec;
  ec.size = m.image_size;
  ec.base_ch = m.img_base;
  ec.width = m.img_width;
  ec.heads = m.img_heads;
  ec.fusion_layers = m.img_layers;
  ec.V = m.V;
  ec.scales = m.scales;
  ienc.init(ec, rng);
}

codec::GridColorMap Bundle::grid() const {
  return codec::build_grid_colormap(mc.grid_a, codec::parse_palette_spec(mc.palette));
}

std::vector<std::pair<std::string, uint64_t>> Bundle::component_hashes() {
  std::vector<std::pair<std::string, uint64_t>> out;
  for (auto& [name, ps] : component_params(*this)) out.emplace_back(name, nn::hash_params(ps));
  return out;
}

void save_checkpoint(const std::string& dir, Bundle& b, int stage, int64_t step,
                     const Rng& rng, const nn::AdamW* opt,
                     const std::vector<int64_t>* reseed_counts) {
  std::filesystem::create_directories(dir);
  json hashes = json::object();
  for (auto& [name, ps] : component_params(b)) {
    BinWriter w(dir + "/" + name + ".bin");
    nn::save_params(w, ps);
    w.close();
    hashes[name] = hash_hex(nn::hash_params(ps));
  }
  if (opt) {
    BinWriter w(dir + "/optimizer.bin");
    nn::save_optimizer(w, *opt);
    w.u64(reseed_counts ? reseed_counts->size() : 0);
    if (reseed_counts)
      for (int64_t c : *reseed_counts) w.u64(static_cast<uint64_t>(c));
    w.close();
  }
  const Rng::State st = rng.save();
  json m{
      {"version", kCheckpointVersion},
      {"stage", stage},
      {"step", step},
      {"model", model_to_json(b.mc)},
      {"hashes", hashes},
      {"rng", {{"s", st.s}, {"spare", st.spare}, {"has_spare", (int)st.has_spare}}},
      {"has_optimizer", opt != nullptr},
  };
  const std::string path = dir + "/manifest.json";
  std::ofstream f(path);
  if (!f) throw_io("cannot open for writing: " + path);
  f << m.dump(2) << "\n";
  f.close();
  if (!f) throw_io("write failed: " + path);
}

CheckpointInfo load_checkpoint(const std::string& dir, Bundle& b) {
  const json m = read_manifest(dir);
  ModelConfig mc;
  try {
    mc = model_from_json(m.at("model"));
  } catch (const json::exception& e) {
    throw_io("checkpoint manifest: " + std::string(e.what()));
  }
  Rng scratch(0);
  b.init(mc, scratch);
  for (auto& [name, ps] : component_params(b)) {
    BinReader r(dir + "/" + name + ".bin");
    nn::load_params(r, ps);
    const std::string want = m.at("hashes").at(name).get<std::string>();
    const std::string got = hash_hex(nn::hash_params(ps));
    if (got != want)
      throw_io("checkpoint hash mismatch for " + name + " in " + dir + " (manifest " + want +
               ", file " + got + ")");
  }
  return info_from_manifest(m);
}

CheckpointInfo read_checkpoint_info(const std::string& dir, ModelConfig* model) {
  const json m = read_manifest(dir);
  if (model) {
    try {
      *model = model_from_json(m.at("model"));
    } catch (const json::exception& e) {
      throw_io("checkpoint manifest: " + std::string(e.what()));
    }
  }
  return info_from_manifest(m);
}

StageResult run_stage(const StageConfig& cfg0, const std::string& in_ckpt,
                      const std::string& out_dir, const std::string& resume_from) {
  StageConfig cfg = cfg0;
  validate_stage_config(cfg);
  if (const char* e = std::getenv("SEGVAR_SEED"); e && *e)
    cfg.seed = std::strtoull(e, nullptr, 10);

  Rng master(cfg.seed);
  Bundle b;
  int64_t start_step = 0;
  const bool resumed = !resume_from.empty();

  if (resumed) {
    const CheckpointInfo info = load_checkpoint(resume_from, b);
    check(info.stage == cfg.stage, "resume checkpoint is for stage " +
                                       std::to_string(info.stage) + ", config wants stage " +
                                       std::to_string(cfg.stage));
    check(b.mc == cfg.model, "resume checkpoint model differs from the stage config");
    check(info.has_optimizer, "resume checkpoint has no optimizer state: " + resume_from);
    master.restore(info.rng_state);
    start_step = info.step;
  } else if (cfg.stage == 1) {
    check(in_ckpt.empty(), "stage 1 takes no input checkpoint");
    b.init(cfg.model, master);
  } else {
    check(!in_ckpt.empty(),
          "stage " + std::to_string(cfg.stage) + " needs the previous stage's checkpoint");
    const CheckpointInfo info = load_checkpoint(in_ckpt, b);
    check(info.stage == cfg.stage - 1, "input checkpoint is stage " +
                                           std::to_string(info.stage) + ", want stage " +
                                           std::to_string(cfg.stage - 1));
    check(b.mc == cfg.model, "input checkpoint model differs from the stage config");
  }

  const ModelConfig& mc = cfg.model;
  const int size = mc.image_size;
  const int64_t n_pix = static_cast<int64_t>(size) * size;

  std::vector<SyntheticSample> data;
  if (cfg.data.kind == "synthetic") {
    SyntheticConfig sc;
    sc.seed = cfg.data.seed;
    sc.n = cfg.data.n;
    sc.height = size;
    sc.width = size;
    sc.max_instances = cfg.data.max_instances;
    sc.task = cfg.data.task;
    sc.noise_std = cfg.data.noise_std;
    data = generate_synthetic(sc);
  } else {
    data = load_dataset(cfg.data.path);
    check(!data.empty(), "empty dataset: " + cfg.data.path);
    for (const auto& s : data) {
      check(s.masks.height == size && s.masks.width == size,
            "dataset sample size differs from model.image_size");
      check(s.masks.task == cfg.data.task, "dataset task differs from data.task");
    }
  }
  const int n = static_cast<int>(data.size());

  const codec::GridColorMap grid = b.grid();
  const int K = mc.num_classes;
  const int cat_ch = K + 1;
  const int typ = static_cast<int>(cfg.data.task);
  const bool tune_prior = cfg.stage == 2 && cfg.tune_prior_seglat;

  // deterministic per-sample precompute; only frozen components are used
  std::vector<PerSample> ps(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    PerSample& p = ps[static_cast<size_t>(i)];
    const codec::InstanceMaskSet& m = data[static_cast<size_t>(i)].masks;
    const std::vector<int> cats = latent::category_map(m, K);
    p.cls = dominant_category(cats, K);
    const codec::ImageU8 mcimg = codec::encode_colormap(m, grid);
    std::vector<float> mc01(static_cast<size_t>(n_pix) * 3);
    latent::colormap_to_float(mcimg, mc01.data());
    if (cfg.stage == 1 || cfg.stage == 3) {
      const Tensor s = latent::seglat_from_mask(b.t_phi, m);
      p.six = Tensor({size, size, 6});
      latent::make_tokenizer_input(s.ptr(), mc01.data(), n_pix, p.six.ptr());
    }
    if (cfg.stage != 2 || tune_prior) p.image = std::move(data[static_cast<size_t>(i)].image);
    if (cfg.stage == 2) {
      p.onehot.resize(static_cast<size_t>(n_pix) * static_cast<size_t>(cat_ch));
      latent::write_onehot(cats.data(), n_pix, K, p.onehot.data());
      p.cat_t = cats;
      if (cfg.data.task != codec::Task::semantic) p.slot_t = latent::slot_map(m, mc.grid_a);
      p.mc01 = std::move(mc01);
      if (tune_prior) p.img_tokens = b.tok.tokenize(vq::Branch::image, p.image.ptr(), 1);
    }
    if (cfg.stage == 3) {
      p.teacher = b.tok.tokenize(vq::Branch::seglat, p.six.ptr(), 1);
      p.six = Tensor();
    }
  }
  data.clear();

  std::vector<nn::Param*> train_params;
  switch (cfg.stage) {
    case 1:
      b.tok.collect(train_params);
      b.prior.collect(train_params);
      break;
    case 2:
      b.t_phi.collect(train_params);
      b.t_theta.collect(train_params);
      if (tune_prior) b.prior.collect(train_params);
      break;
    default:
      b.ienc.collect(train_params);
      break;
  }
  nn::AdamW opt(train_params, 0.9f, 0.95f, 1e-8f, cfg.weight_decay);

  std::vector<int64_t> reseed_counts;
  if (cfg.stage == 1) reseed_counts.assign(static_cast<size_t>(mc.V), 0);
  if (resumed) {
    BinReader r(resume_from + "/optimizer.bin");
    nn::load_optimizer(r, opt);
    const uint64_t nc = r.u64();
    check(nc == reseed_counts.size(), "trainer state size mismatch in " + resume_from);
    for (auto& c : reseed_counts) c = static_cast<int64_t>(r.u64());
  }

  // components this stage must not touch, re-checked after the loop
  std::vector<std::string> frozen;
  if (cfg.stage == 1) {
    frozen = {"t_phi", "t_theta", "image_encoder"};
  } else if (cfg.stage == 2) {
    frozen = {"tokenizer", "image_encoder"};
    if (!tune_prior) frozen.push_back("prior");
  } else {
    frozen = {"tokenizer", "prior", "t_phi", "t_theta"};
  }
  auto hash_of = [&](const std::string& name) -> uint64_t {
    for (auto& [nm, h] : b.component_hashes())
      if (nm == name) return h;
    throw_runtime("unknown component: " + name);
  };
  std::vector<std::pair<std::string, uint64_t>> frozen_before;
  for (const auto& f : frozen) frozen_before.emplace_back(f, hash_of(f));

  std::filesystem::create_directories(out_dir);
  const std::string log_path = out_dir + "/stage" + std::to_string(cfg.stage) + ".jsonl";
  std::ofstream log(log_path, resumed ? std::ios::app : std::ios::trunc);
  if (!log) throw_io("cannot open log: " + log_path);

  latent::Stage2Graph graph(b.tok, b.t_phi, b.t_theta);

  const int B = cfg.batch;
  const vq::ScaleSchedule& sched = b.tok.schedule;
  Tensor ximg({B, size, size, 3});
  Tensor xsix({B, size, size, 6});
  std::vector<float> oh, mcf;
  std::vector<int> ct, st;
  if (cfg.stage == 2) {
    oh.resize(static_cast<size_t>(B) * static_cast<size_t>(n_pix) * static_cast<size_t>(cat_ch));
    mcf.resize(static_cast<size_t>(B) * static_cast<size_t>(n_pix) * 3);
    ct.resize(static_cast<size_t>(B) * static_cast<size_t>(n_pix));
    st.resize(static_cast<size_t>(B) * static_cast<size_t>(n_pix));
  }
  const bool has_slots = cfg.data.task != codec::Task::semantic;

  std::vector<int> idx(static_cast<size_t>(B));
  std::vector<int> clsv(static_cast<size_t>(B)), typv(static_cast<size_t>(B), typ);
  std::vector<float> rows;  // residual reservoir, current step only
  double last_loss = 0.0;

  for (int64_t step = start_step; step < cfg.steps; ++step) {
    const float lr = lr_at(cfg, step);
    for (int bi = 0; bi < B; ++bi)
      idx[static_cast<size_t>(bi)] = static_cast<int>(master.uniform_int(n));
    opt.zero_grad();
    double total = 0.0;
    json rec{{"stage", cfg.stage}, {"step", step}, {"lr", lr}};

    if (cfg.stage == 1) {
      for (int bi = 0; bi < B; ++bi) {
        const PerSample& p = ps[static_cast<size_t>(idx[static_cast<size_t>(bi)])];
        std::memcpy(ximg.ptr() + static_cast<int64_t>(bi) * n_pix * 3, p.image.ptr(),
                    static_cast<size_t>(n_pix) * 3 * sizeof(float));
        std::memcpy(xsix.ptr() + static_cast<int64_t>(bi) * n_pix * 6, p.six.ptr(),
                    static_cast<size_t>(n_pix) * 6 * sizeof(float));
        clsv[static_cast<size_t>(bi)] = p.cls;
      }
      rows.clear();
      const auto out_img = b.tok.loss_forward(vq::Branch::image, ximg.ptr(), B, &rows);
      b.tok.loss_backward(vq::Branch::image, ximg.ptr(), B);
      const auto out_lat = b.tok.loss_forward(vq::Branch::seglat, xsix.ptr(), B, &rows);
      b.tok.loss_backward(vq::Branch::seglat, xsix.ptr(), B);
      const double lp = b.prior.teacher_forcing_loss(b.tok.quant, out_img.tokens, out_lat.tokens,
                                                     clsv, typv, B, mc.drop_prob, master, true);
      total = out_img.total + out_lat.total + lp;
      rec["tok_img"] = out_img.total;
      rec["tok_lat"] = out_lat.total;
      rec["prior"] = lp;
      for (const auto* pyr : {&out_img.tokens, &out_lat.tokens})
        for (const auto& scale : *pyr)
          for (int t : scale) ++reseed_counts[static_cast<size_t>(t)];
    } else if (cfg.stage == 2) {
      for (int bi = 0; bi < B; ++bi) {
        const PerSample& p = ps[static_cast<size_t>(idx[static_cast<size_t>(bi)])];
        const size_t px = static_cast<size_t>(bi) * static_cast<size_t>(n_pix);
        std::memcpy(oh.data() + px * static_cast<size_t>(cat_ch), p.onehot.data(),
                    p.onehot.size() * sizeof(float));
        std::memcpy(mcf.data() + px * 3, p.mc01.data(), p.mc01.size() * sizeof(float));
        std::copy(p.cat_t.begin(), p.cat_t.end(), ct.begin() + static_cast<int64_t>(px));
        if (has_slots) std::copy(p.slot_t.begin(), p.slot_t.end(), st.begin() + static_cast<int64_t>(px));
        clsv[static_cast<size_t>(bi)] = p.cls;
      }
      const auto out = graph.forward(oh.data(), mcf.data(), ct.data(),
                                     has_slots ? st.data() : nullptr, B);
      graph.backward();
      total = out.total;
      rec["recon"] = out.recon;
      rec["recovery"] = out.recovery;
      if (tune_prior) {
        const auto img_tok = gather_pyramid(ps, idx, &PerSample::img_tokens, sched);
        const double lp =
            b.prior.teacher_forcing_loss(b.tok.quant, img_tok, out.tokens, clsv, typv, B,
                                         mc.drop_prob, master, true, /*seglat_only=*/true);
        total += lp;
        rec["prior"] = lp;
      }
    } else {
      for (int bi = 0; bi < B; ++bi) {
        const PerSample& p = ps[static_cast<size_t>(idx[static_cast<size_t>(bi)])];
        std::memcpy(ximg.ptr() + static_cast<int64_t>(bi) * n_pix * 3, p.image.ptr(),
                    static_cast<size_t>(n_pix) * 3 * sizeof(float));
      }
      const auto teacher = gather_pyramid(ps, idx, &PerSample::teacher, sched);
      const auto lg = b.ienc.forward(ximg.ptr(), B);
      const float ce = b.ienc.stage3_loss(lg, teacher);
      b.ienc.backward(ximg.ptr(), B);
      total = ce;
      rec["ce"] = ce;
    }

    if (!std::isfinite(total))
      throw_runtime("non-finite loss at stage " + std::to_string(cfg.stage) + " step " +
                    std::to_string(step));
    opt.step(lr);
    if (cfg.stage == 1 && (step + 1) % kReseedInterval == 0) {
      b.tok.quant.reseed_dead(reseed_counts, rows, master);
      std::fill(reseed_counts.begin(), reseed_counts.end(), 0);
    }

    last_loss = total;
    rec["loss"] = total;
    if (step % cfg.log_every == 0 || step == cfg.steps - 1) log << rec.dump() << "\n";
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.steps) {
      save_checkpoint(out_dir + "/mid", b, cfg.stage, step + 1, master, &opt,
                      cfg.stage == 1 ? &reseed_counts : nullptr);
      log.flush();
    }
  }

  for (const auto& [name, before] : frozen_before) {
    if (hash_of(name) != before)
      throw_runtime("frozen component changed during stage " + std::to_string(cfg.stage) + ": " +
                    name);
  }
  save_checkpoint(out_dir, b, cfg.stage, cfg.steps, master);

  StageResult res;
  res.final_loss = last_loss;
  res.steps = cfg.steps;
  res.checkpoint_dir = out_dir;
  res.log_path = log_path;
  return res;
}

}  // namespace segvar::train
