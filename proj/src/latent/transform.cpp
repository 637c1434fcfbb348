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

#include "segvar/latent/transform.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "segvar/core/error.hpp"
#include "segvar/simd/simd.hpp"

namespace segvar::latent {

std::vector<int> category_map(const codec::InstanceMaskSet& m, int num_classes) {
  check(m.height > 0 && m.width > 0, "empty mask set geometry");
  const int64_t n = (int64_t)m.height * m.width;
  std::vector<int> out((size_t)n, 0);
  for (size_t i = 0; i < m.masks.size(); ++i) {
    const int c = m.categories[i];
    check(c >= 1 && c <= num_classes, "instance category out of range");
    const uint8_t* mask = m.masks[i].data();
    for (int64_t p = 0; p < n; ++p)
      if (mask[p]) out[(size_t)p] = c;
  }
  return out;
}

std::vector<int> slot_map(const codec::InstanceMaskSet& m, int a) {
  check(m.height > 0 && m.width > 0, "empty mask set geometry");
  check(a >= 1, "grid size must be positive");
  const int64_t n = (int64_t)m.height * m.width;
  std::vector<int> out((size_t)n, -1);
  for (const auto& mask : m.masks) {
    bool any = false;
    for (int64_t p = 0; p < n && !any; ++p) any = mask[(size_t)p] != 0;
    if (!any) continue;
    const auto [cy, cx] = codec::centroid(mask.data(), m.height, m.width);
    const int cell = codec::centroid_cell(cy, cx, a, m.height, m.width);
    for (int64_t p = 0; p < n; ++p)
      if (mask[(size_t)p]) out[(size_t)p] = cell;
  }
  return out;
}

void write_onehot(const int* cats, int64_t n, int num_classes, float* out) {
  const int c = num_classes + 1;
  std::memset(out, 0, (size_t)(n * c) * sizeof(float));
  for (int64_t i = 0; i < n; ++i) {
    check(cats[i] >= 0 && cats[i] <= num_classes, "category out of range");
    out[i * c + cats[i]] = 1.0f;
  }
}

void make_tokenizer_input(const float* s, const float* mc01, int64_t n_pixels, float* out6) {
  for (int64_t i = 0; i < n_pixels; ++i) {
    std::memcpy(out6 + i * 6, s + i * 3, 3 * sizeof(float));
    std::memcpy(out6 + i * 6 + 3, mc01 + i * 3, 3 * sizeof(float));
  }
}

void colormap_to_float(const codec::ImageU8& mc, float* out) {
  check(mc.channels == 3, "colormap must be RGB");
  const int64_t n = (int64_t)mc.height * mc.width * 3;
  for (int64_t i = 0; i < n; ++i) out[i] = (float)mc.data[(size_t)i] / 255.0f;
}

codec::ImageU8 colormap_from_six(const float* six, int height, int width) {
  codec::ImageU8 out(height, width, 3);
  for (int64_t i = 0; i < (int64_t)height * width; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(six[i * 6 + 3 + c], 0.0f, 1.0f);
      out.data[(size_t)(i * 3 + c)] = (uint8_t)std::lround(v * 255.0f);
    }
  }
  return out;
}

// ------------------------------------------------------------ patchify

namespace {

// bijective pixel <-> patch-row permutation; gather(dst=rows) == scatter
// adjoint, so forward and backward reuse the same index walk
template <typename Copy>
void walk_patches(int B, int size, int patch, int ch, Copy&& copy) {
  const int g = size / patch;
  for (int b = 0; b < B; ++b)
    for (int py = 0; py < g; ++py)
      for (int px = 0; px < g; ++px) {
        const int64_t row = ((int64_t)b * g + py) * g + px;
        int64_t o = 0;
        for (int dy = 0; dy < patch; ++dy)
          for (int dx = 0; dx < patch; ++dx) {
            const int64_t pix = ((int64_t)b * size + py * patch + dy) * size + px * patch + dx;
            copy(row, o, pix);
            o += ch;
          }
      }
}

}  // namespace

void PatchTransformer::init(const std::string& name, int sz, int p, int ci, int co, int w,
                            int layers, int heads, Rng& rng) {
  check(sz >= 1 && p >= 1 && sz % p == 0, "patch must divide the input side");
  check(ci >= 1 && co >= 1 && layers >= 1, "invalid patch transformer config");
  check(w % heads == 0, "width must divide into heads");
  size = sz;
  patch = p;
  in_ch = ci;
  out_ch = co;
  width = w;
  tokens = (sz / p) * (sz / p);
  const float std = 0.02f;
  proj_in.init(name + ".proj_in", p * p * ci, w, rng, std);
  pos.init_shape(name + ".pos", {tokens, w});
  nn::init_normal(pos, rng, std);
  blocks.resize((size_t)layers);
  for (int i = 0; i < layers; ++i)
    blocks[(size_t)i].init(name + ".block" + std::to_string(i), w, heads, rng, std);
  ln_f.init(name + ".ln_f", w);
  proj_out.init(name + ".proj_out", w, p * p * co, rng, std);
}

Tensor PatchTransformer::forward(const float* x, int B) {
  const int64_t n = (int64_t)B * tokens;
  patches_ = Tensor({n, patch * patch * in_ch});
  walk_patches(B, size, patch, in_ch, [&](int64_t row, int64_t o, int64_t pix) {
    std::memcpy(patches_.ptr() + row * patch * patch * in_ch + o, x + pix * in_ch,
                (size_t)in_ch * sizeof(float));
  });
  layer_in_.assign((size_t)blocks.size() + 1, Tensor());
  layer_in_[0] = Tensor({n, width});
  proj_in.forward(patches_.ptr(), n, layer_in_[0].ptr());
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < tokens; ++t)
      simd::axpby(width, 1.0f, pos.w.ptr() + (int64_t)t * width, 1.0f,
                  layer_in_[0].ptr() + ((int64_t)b * tokens + t) * width);
  for (size_t i = 0; i < blocks.size(); ++i) {
    layer_in_[i + 1] = Tensor({n, width});
    blocks[i].forward(layer_in_[i].ptr(), B, tokens, nullptr, layer_in_[i + 1].ptr());
  }
  ln_out_ = Tensor({n, width});
  ln_f.forward(layer_in_[blocks.size()].ptr(), n, ln_out_.ptr());
  Tensor pout({n, patch * patch * out_ch});
  proj_out.forward(ln_out_.ptr(), n, pout.ptr());
  Tensor y({(int64_t)B, size, size, out_ch});
  walk_patches(B, size, patch, out_ch, [&](int64_t row, int64_t o, int64_t pix) {
    std::memcpy(y.ptr() + pix * out_ch, pout.ptr() + row * patch * patch * out_ch + o,
                (size_t)out_ch * sizeof(float));
  });
  return y;
}

void PatchTransformer::backward(const float* x, const float* dy, int B, float* dx) {
  const int64_t n = (int64_t)B * tokens;
  Tensor dpout({n, patch * patch * out_ch});
  walk_patches(B, size, patch, out_ch, [&](int64_t row, int64_t o, int64_t pix) {
    std::memcpy(dpout.ptr() + row * patch * patch * out_ch + o, dy + pix * out_ch,
                (size_t)out_ch * sizeof(float));
  });
  Tensor dln({n, width});
  proj_out.backward(ln_out_.ptr(), dpout.ptr(), n, dln.ptr(), false);
  Tensor da({n, width}), db({n, width});
  ln_f.backward(layer_in_[blocks.size()].ptr(), dln.ptr(), n, da.ptr(), false);
  for (int i = (int)blocks.size() - 1; i >= 0; --i) {
    blocks[(size_t)i].backward(layer_in_[(size_t)i].ptr(), da.ptr(), B, tokens, nullptr,
                               db.ptr());
    std::swap(da, db);
  }
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < tokens; ++t)
      simd::axpby(width, 1.0f, da.ptr() + ((int64_t)b * tokens + t) * width, 1.0f,
                  pos.g.ptr() + (int64_t)t * width);
  if (!dx) {
    proj_in.backward(patches_.ptr(), da.ptr(), n, nullptr);
    return;
  }
  Tensor dpatch({n, patch * patch * in_ch});
  proj_in.backward(patches_.ptr(), da.ptr(), n, dpatch.ptr(), false);
  walk_patches(B, size, patch, in_ch, [&](int64_t row, int64_t o, int64_t pix) {
    std::memcpy(dx + pix * in_ch, dpatch.ptr() + row * patch * patch * in_ch + o,
                (size_t)in_ch * sizeof(float));
  });
}

void PatchTransformer::collect(std::vector<nn::Param*>& out) {
  proj_in.collect(out);
  out.push_back(&pos);
  for (auto& b : blocks) b.collect(out);
  ln_f.collect(out);
  proj_out.collect(out);
}

// ------------------------------------------------------------ T_phi

void LatentEncoder::init(const LatentConfig& c, Rng& rng) {
  cfg = c;
  net.init("tphi", c.size, c.patch, c.cat_channels(), 3, c.width, c.layers, c.heads, rng);
}

Tensor LatentEncoder::forward(const float* onehot, int B) {
  s_ = net.forward(onehot, B);
  for (int64_t i = 0; i < s_.numel(); ++i)
    s_.ptr()[i] = 1.0f / (1.0f + std::exp(-s_.ptr()[i]));
  return s_;
}

void LatentEncoder::backward(const float* onehot, const float* ds, int B) {
  Tensor dpre({s_.numel()});
  for (int64_t i = 0; i < s_.numel(); ++i) {
    const float s = s_.ptr()[i];
    dpre.ptr()[i] = ds[i] * s * (1.0f - s);
  }
  net.backward(onehot, dpre.ptr(), B, nullptr);
}

void LatentEncoder::collect(std::vector<nn::Param*>& out) { net.collect(out); }

// ------------------------------------------------------------ T_theta

void LatentDecoder::init(const LatentConfig& c, Rng& rng) {
  cfg = c;
  net.init("ttheta", c.size, c.patch, 6, c.cat_channels() + c.slot_channels(), c.width,
           c.layers, c.heads, rng);
}

Tensor LatentDecoder::forward(const float* six, int B) { return net.forward(six, B); }

void LatentDecoder::backward(const float* six, const float* dlogits, int B, float* dsix) {
  net.backward(six, dlogits, B, dsix);
}

void LatentDecoder::collect(std::vector<nn::Param*>& out) { net.collect(out); }

// ------------------------------------------------------------ hard decode

MaskLogits split_logits(const Tensor& raw, const LatentConfig& cfg) {
  const int n = cfg.size * cfg.size;
  const int cc = cfg.cat_channels(), sc = cfg.slot_channels();
  check(raw.numel() == (int64_t)n * (cc + sc), "logit tensor shape mismatch");
  MaskLogits out;
  out.height = out.width = cfg.size;
  out.num_classes = cfg.num_classes;
  out.slots = sc;
  out.cat = Tensor({n, cc});
  out.slot = Tensor({n, sc});
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(out.cat.ptr() + i * cc, raw.ptr() + i * (cc + sc), (size_t)cc * sizeof(float));
    std::memcpy(out.slot.ptr() + i * sc, raw.ptr() + i * (cc + sc) + cc,
                (size_t)sc * sizeof(float));
  }
  return out;
}

namespace {

int argmax_row(const float* row, int n) {
  int best = 0;
  for (int i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

}  // namespace

codec::InstanceMaskSet decode_mask_logits(const MaskLogits& logits, const codec::ImageU8& mc,
                                          codec::Task task, const codec::GridColorMap& grid) {
  const int h = logits.height, w = logits.width;
  check(mc.height == h && mc.width == w && mc.channels == 3, "colormap shape mismatch");
  const int64_t n = (int64_t)h * w;
  const int cc = logits.num_classes + 1;

  std::vector<int> cat((size_t)n);
  for (int64_t i = 0; i < n; ++i) cat[(size_t)i] = argmax_row(logits.cat.ptr() + i * cc, cc);

  codec::InstanceMaskSet out;
  out.height = h;
  out.width = w;
  out.task = task;

  if (task == codec::Task::semantic) {
    for (int k = 1; k <= logits.num_classes; ++k) {
      std::vector<uint8_t> mask((size_t)n, 0);
      bool any = false;
      for (int64_t i = 0; i < n; ++i)
        if (cat[(size_t)i] == k) {
          mask[(size_t)i] = 1;
          any = true;
        }
      if (any) {
        out.masks.push_back(std::move(mask));
        out.categories.push_back(k);
      }
    }
    return out;
  }

  // instance identities come from the colormap colors; one instance per
  // grid cell seen in the image
  const auto color_insts = codec::decode_colormap(mc, grid);
  const int a2 = grid.a * grid.a;
  check(logits.slots == a2, "slot head size does not match the grid");
  std::vector<int> cells;
  for (const auto& mask : color_insts.masks) {
    int64_t first = -1;
    for (int64_t i = 0; i < n && first < 0; ++i)
      if (mask[(size_t)i]) first = i;
    if (first < 0) continue;
    const int ci = codec::nearest_palette_color(mc.data[(size_t)(first * 3)],
                                                mc.data[(size_t)(first * 3 + 1)],
                                                mc.data[(size_t)(first * 3 + 2)], grid.palette);
    if (ci >= 0 && ci < a2 && std::find(cells.begin(), cells.end(), ci) == cells.end())
      cells.push_back(ci);
  }
  if (cells.empty()) return out;  // all-background colormap -> no instances
  std::sort(cells.begin(), cells.end());

  // foreground pixels join the active cell with the strongest slot logit
  std::vector<std::vector<uint8_t>> masks(cells.size(),
                                          std::vector<uint8_t>((size_t)n, 0));
  std::vector<bool> used(cells.size(), false);
  for (int64_t i = 0; i < n; ++i) {
    if (cat[(size_t)i] == 0) continue;
    const float* srow = logits.slot.ptr() + i * logits.slots;
    size_t best = 0;
    for (size_t c = 1; c < cells.size(); ++c)
      if (srow[cells[c]] > srow[cells[best]]) best = c;
    masks[best][(size_t)i] = 1;
    used[best] = true;
  }
  for (size_t c = 0; c < cells.size(); ++c) {
    if (!used[c]) continue;
    // majority pixel category, ties toward the smaller id
    std::vector<int64_t> votes((size_t)cc, 0);
    for (int64_t i = 0; i < n; ++i)
      if (masks[c][(size_t)i]) ++votes[(size_t)cat[(size_t)i]];
    int best_k = 1;
    for (int k = 2; k <= logits.num_classes; ++k)
      if (votes[(size_t)k] > votes[(size_t)best_k]) best_k = k;
    out.masks.push_back(std::move(masks[c]));
    out.categories.push_back(best_k);
  }
  return out;
}

std::pair<MaskLogits, codec::InstanceMaskSet> mask_from_seglat(LatentDecoder& dec,
                                                               const float* six,
                                                               codec::Task task,
                                                               const codec::GridColorMap& grid) {
  const Tensor raw = dec.forward(six, 1);
  MaskLogits logits = split_logits(raw, dec.cfg);
  const codec::ImageU8 mc = colormap_from_six(six, dec.cfg.size, dec.cfg.size);
  codec::InstanceMaskSet hard = decode_mask_logits(logits, mc, task, grid);
  return {std::move(logits), std::move(hard)};
}

Tensor seglat_from_mask(LatentEncoder& enc, const codec::InstanceMaskSet& m) {
  check(m.height == enc.cfg.size && m.width == enc.cfg.size, "mask size mismatch");
  const auto cats = category_map(m, enc.cfg.num_classes);
  Tensor onehot({(int64_t)m.height * m.width, enc.cfg.cat_channels()});
  write_onehot(cats.data(), (int64_t)cats.size(), enc.cfg.num_classes, onehot.ptr());
  return enc.forward(onehot.ptr(), 1);
}

// ------------------------------------------------------------ stage 2

Stage2Out Stage2Graph::forward(const float* onehot, const float* mc01, const int* cat_targets,
                               const int* slot_targets, int B) {
  const LatentConfig& lc = enc_.cfg;
  check(dec_.cfg.size == lc.size && dec_.cfg.num_classes == lc.num_classes &&
            dec_.cfg.grid_a == lc.grid_a,
        "encoder/decoder config mismatch");
  check(tok_.cfg.input_size == lc.size, "tokenizer size mismatch");
  check(tok_.cfg.lat_channels == 6, "tokenizer seglat branch must be 6-channel");
  const int64_t n = (int64_t)lc.size * lc.size;
  const int base = tok_.cfg.base_size();

  onehot_ = onehot;
  b_ = B;
  cat_t_.assign(cat_targets, cat_targets + (size_t)(B * n));
  has_slots_ = slot_targets != nullptr;
  if (has_slots_) slot_t_.assign(slot_targets, slot_targets + (size_t)(B * n));

  const Tensor s = enc_.forward(onehot, B);
  six_ = Tensor({(int64_t)B * n, 6});
  make_tokenizer_input(s.ptr(), mc01, B * n, six_.ptr());

  const Tensor feat = tok_.encode(vq::Branch::seglat, six_.ptr(), B);
  auto qr = tok_.quant.quantize(feat.ptr(), B, base, base, tok_.schedule);
  st_ = std::move(qr.recon);
  xhat_ = tok_.decode(vq::Branch::seglat, st_.ptr(), B);
  logits_ = dec_.forward(xhat_.ptr(), B);

  Stage2Out out;
  out.tokens = std::move(qr.tokens);
  const int64_t n6 = (int64_t)B * n * 6;
  out.recon = (double)simd::reduce_sq_diff(n6, xhat_.ptr(), six_.ptr()) / (double)n6;

  // recovery CE, filling the pre-scaled logit gradient as we go
  const int cc = lc.cat_channels(), sc = lc.slot_channels(), C = cc + sc;
  dlogits_ = Tensor({(int64_t)B * n, C});
  int64_t covered = 0;
  if (has_slots_)
    for (const int t : slot_t_) covered += t >= 0;
  double cat_loss = 0, slot_loss = 0;
  for (int64_t i = 0; i < (int64_t)B * n; ++i) {
    const float* l = logits_.ptr() + i * C;
    float* d = dlogits_.ptr() + i * C;
    {
      const int t = cat_t_[(size_t)i];
      check(t >= 0 && t < cc, "category target out of range");
      double mx = l[0];
      for (int v = 1; v < cc; ++v) mx = std::max(mx, (double)l[v]);
      double z = 0;
      for (int v = 0; v < cc; ++v) z += std::exp((double)l[v] - mx);
      const double lse = mx + std::log(z);
      cat_loss += lse - (double)l[t];
      for (int v = 0; v < cc; ++v)
        d[v] = (float)((std::exp((double)l[v] - lse) - (v == t ? 1.0 : 0.0)) /
                       (double)(B * n));
    }
    if (has_slots_ && slot_t_[(size_t)i] >= 0) {
      const int t = slot_t_[(size_t)i];
      check(t < sc, "slot target out of range");
      const float* ls = l + cc;
      float* dsl = d + cc;
      double mx = ls[0];
      for (int v = 1; v < sc; ++v) mx = std::max(mx, (double)ls[v]);
      double z = 0;
      for (int v = 0; v < sc; ++v) z += std::exp((double)ls[v] - mx);
      const double lse = mx + std::log(z);
      slot_loss += lse - (double)ls[t];
      for (int v = 0; v < sc; ++v)
        dsl[v] = (float)((std::exp((double)ls[v] - lse) - (v == t ? 1.0 : 0.0)) /
                         (double)covered);
    }
  }
  out.recovery = cat_loss / (double)(B * n) + (covered ? slot_loss / (double)covered : 0.0);
  out.total = out.recon + out.recovery;
  out.six = six_;
  out.xhat = xhat_;
  out.logits = logits_;
  return out;
}

void Stage2Graph::backward() {
  check(b_ > 0, "backward without a forward");
  const LatentConfig& lc = enc_.cfg;
  const int64_t n = (int64_t)lc.size * lc.size;
  const int64_t n6 = (int64_t)b_ * n * 6;
  const int base = tok_.cfg.base_size();

  Tensor dxhat({n6});
  dec_.backward(xhat_.ptr(), dlogits_.ptr(), b_, dxhat.ptr());
  const float k = 2.0f / (float)n6;
  simd::axpby(n6, k, xhat_.ptr(), 1.0f, dxhat.ptr());
  simd::axpby(n6, -k, six_.ptr(), 1.0f, dxhat.ptr());

  Tensor dst({(int64_t)b_ * base * base * tok_.cfg.dim});
  tok_.dec_lat.backward(st_.ptr(), dxhat.ptr(), b_, base, base, dst.ptr());
  // straight-through: d(feat) = d(quantized) across the codebook lookup
  Tensor dsix({n6});
  tok_.enc_lat.backward(six_.ptr(), dst.ptr(), b_, lc.size, lc.size, dsix.ptr());
  simd::axpby(n6, -k, xhat_.ptr(), 1.0f, dsix.ptr());
  simd::axpby(n6, k, six_.ptr(), 1.0f, dsix.ptr());

  Tensor ds({(int64_t)b_ * n, 3});
  for (int64_t i = 0; i < (int64_t)b_ * n; ++i)
    std::memcpy(ds.ptr() + i * 3, dsix.ptr() + i * 6, 3 * sizeof(float));
  enc_.backward(onehot_, ds.ptr(), b_);
}

}  // namespace segvar::latent
