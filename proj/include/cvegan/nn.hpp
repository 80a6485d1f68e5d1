// Copyright 2026 The cvegan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstring>
#include <fstream>

#include "cvegan/graph.hpp"

namespace cvegan {

// Generator (CVENet) and feature-point discriminator, assembled from Mish
// activations, Mul2Res blocks, residual non-local blocks (ERNB) and the
// channel+spatial attention module with convolutional fusion (ECBAM).

struct NetConfig {
  int64_t width = 64;        // generator feature maps F; four branches split F/4
  int num_mul2res = 4;
  int64_t ecbam_reduction = 16;
  int64_t nonlocal_pool = 8;  // key/value pooling cap inside ERNB
  int64_t feature_dim = 1024; // discriminator output dimension
  int64_t disc_width = 8;     // discriminator base feature maps (SRGAN uses 64)
  int64_t disc_input = 96;    // spatial size the discriminator is built for
  uint64_t seed = 1;

  void validate() const {
    if (width < 4 || width % 4 != 0)
      throw std::invalid_argument("NetConfig: width must be >= 4 and divisible by 4");
    if (ecbam_reduction < 1 || width % ecbam_reduction != 0)
      throw std::invalid_argument("NetConfig: width must be divisible by ecbam_reduction");
    if (num_mul2res < 1) throw std::invalid_argument("NetConfig: num_mul2res >= 1");
    if (nonlocal_pool < 1) throw std::invalid_argument("NetConfig: nonlocal_pool >= 1");
    if (feature_dim < 1) throw std::invalid_argument("NetConfig: feature_dim >= 1");
    if (disc_width < 2 || disc_width % 2 != 0)
      throw std::invalid_argument("NetConfig: disc_width must be even and >= 2");
    if (disc_input < 16 || disc_input % 16 != 0)
      throw std::invalid_argument("NetConfig: disc_input must be a multiple of 16");
  }

  bool operator==(const NetConfig& o) const = default;
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

using ParamList = std::vector<NamedParam>;

inline int64_t param_count(const ParamList& params) {
  int64_t n = 0;
  for (const NamedParam& p : params) n += p.tensor->numel();
  return n;
}

// --------------------------------------------------------------------------
// Layers
// --------------------------------------------------------------------------

struct Conv {
  Tensor w;  // [K,K,IC,OC]
  Tensor b;  // [OC]
  int stride = 1;

  static Conv make(Rng& rng, int64_t k, int64_t ic, int64_t oc, int stride = 1) {
    Conv c;
    const double stddev = std::sqrt(2.0 / static_cast<double>(k * k * ic));
    c.w = rng.normal_tensor({k, k, ic, oc}, stddev);
    c.b = Tensor({oc});
    c.stride = stride;
    return c;
  }

  void zero() {
    std::fill(w.data(), w.data() + w.numel(), 0.0);
    std::fill(b.data(), b.data() + b.numel(), 0.0);
  }

  Var fwd(Graph& g, Var x) const { return g.conv2d(x, g.leaf(&w), g.leaf(&b), stride); }

  void collect(const std::string& prefix, ParamList* out) {
    out->push_back({prefix + ".w", &w});
    out->push_back({prefix + ".b", &b});
  }
};

struct Dense {
  Tensor w;  // [D,K]
  Tensor b;  // [K]

  static Dense make(Rng& rng, int64_t d, int64_t k) {
    Dense l;
    l.w = rng.normal_tensor({d, k}, std::sqrt(2.0 / static_cast<double>(d)));
    l.b = Tensor({k});
    return l;
  }

  Var fwd(Graph& g, Var x) const { return g.dense(x, g.leaf(&w), g.leaf(&b)); }

  void collect(const std::string& prefix, ParamList* out) {
    out->push_back({prefix + ".w", &w});
    out->push_back({prefix + ".b", &b});
  }
};

struct BatchNorm {
  Tensor gamma, beta;

  static BatchNorm make(int64_t c) {
    BatchNorm bn;
    bn.gamma = Tensor::full({c}, 1.0);
    bn.beta = Tensor({c});
    return bn;
  }

  Var fwd(Graph& g, Var x) const { return g.batchnorm(x, g.leaf(&gamma), g.leaf(&beta)); }

  void collect(const std::string& prefix, ParamList* out) {
    out->push_back({prefix + ".gamma", &gamma});
    out->push_back({prefix + ".beta", &beta});
  }
};

// Two same-kernel convolutions with a Mish between, plus the residual skip.
struct ResidualBlock {
  Conv c1, c2;

  static ResidualBlock make(Rng& rng, int64_t k, int64_t c) {
    return {Conv::make(rng, k, c, c), Conv::make(rng, k, c, c)};
  }

  Var fwd(Graph& g, Var x) const { return g.add(x, c2.fwd(g, g.mish(c1.fwd(g, x)))); }

  void collect(const std::string& prefix, ParamList* out) {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
  }
};

// --------------------------------------------------------------------------
// ECBAM: channel gate, spatial gate, then concatenation with the module
// input fused by a linear 1x1 convolution. The fusion may change the channel
// count, which is how Mul2Res folds its level-2 concatenation back down.
// --------------------------------------------------------------------------

struct Ecbam {
  Conv mlp1, mlp2;   // shared channel-attention bottleneck (1x1 convs)
  Conv spatial;      // 7x7 over [mean,max] maps
  Conv fuse;         // 1x1: 2*C_in -> C_out, no activation
  int64_t c_in = 0, c_out = 0;

  static Ecbam make(Rng& rng, int64_t c_in, int64_t c_out, int64_t reduction) {
    if (c_in % reduction != 0)
      throw std::invalid_argument("ecbam: channels not divisible by reduction");
    Ecbam e;
    e.c_in = c_in;
    e.c_out = c_out;
    e.mlp1 = Conv::make(rng, 1, c_in, std::max<int64_t>(1, c_in / reduction));
    e.mlp2 = Conv::make(rng, 1, std::max<int64_t>(1, c_in / reduction), c_in);
    e.spatial = Conv::make(rng, 7, 2, 1);
    e.fuse = Conv::make(rng, 1, 2 * c_in, c_out);
    return e;
  }

  Var fwd(Graph& g, Var x) const {
    if (g.val(x).dim(3) != c_in) throw std::invalid_argument("ecbam: channel mismatch");
    // Channel attention: shared bottleneck over global avg and max pools.
    Var avg_desc = mlp2.fwd(g, g.mish(mlp1.fwd(g, g.global_avgpool(x))));
    Var max_desc = mlp2.fwd(g, g.mish(mlp1.fwd(g, g.global_maxpool(x))));
    Var cgate = g.sigmoid(g.add(avg_desc, max_desc));
    Var xc = g.mul_channel(x, cgate);
    // Spatial attention over channel-wise statistics.
    Var stats = g.concat_lastdim({g.channel_mean(xc), g.channel_max(xc)});
    Var sgate = g.sigmoid(spatial.fwd(g, stats));
    Var xs = g.mul_spatial(xc, sgate);
    // Non-linear feature fusion with the module input.
    return fuse.fwd(g, g.concat_lastdim({xs, x}));
  }

  void collect(const std::string& prefix, ParamList* out) {
    mlp1.collect(prefix + ".mlp1", out);
    mlp2.collect(prefix + ".mlp2", out);
    spatial.collect(prefix + ".spatial", out);
    fuse.collect(prefix + ".fuse", out);
  }
};

// --------------------------------------------------------------------------
// ERNB: embedded dot-product affinity over spatial positions with pooled
// keys/values, fused by concatenation + a residual block, closed by a long
// skip from the module input.
// --------------------------------------------------------------------------

struct Ernb {
  Conv theta, phi, gconv;  // 1x1 embeddings, C -> C/2
  Conv fuse1;              // 1x1: C + C/2 -> C
  ResidualBlock fuse_rb;   // 3x3 at C
  int64_t channels = 0;
  int64_t pool = 8;

  static Ernb make(Rng& rng, int64_t c, int64_t pool) {
    if (c < 2 || c % 2 != 0) throw std::invalid_argument("ernb: channels must be even");
    Ernb e;
    e.channels = c;
    e.pool = pool;
    e.theta = Conv::make(rng, 1, c, c / 2);
    e.phi = Conv::make(rng, 1, c, c / 2);
    e.gconv = Conv::make(rng, 1, c, c / 2);
    e.fuse1 = Conv::make(rng, 1, c + c / 2, c);
    e.fuse_rb = ResidualBlock::make(rng, 3, c);
    return e;
  }

  // Largest divisor of both axes not exceeding the configured cap, leaving
  // at least a 2x2 key grid so the affinity softmax never degenerates.
  int64_t effective_pool(int64_t h, int64_t w) const {
    for (int64_t p = std::min({pool, h / 2, w / 2}); p >= 2; --p)
      if (h % p == 0 && w % p == 0) return p;
    return 1;
  }

  // Row-stochastic affinity between all positions and the pooled positions.
  Var affinity(Graph& g, Var x) const {
    const Tensor& t = g.val(x);
    const int64_t B = t.dim(0), H = t.dim(1), W = t.dim(2);
    const int64_t p = effective_pool(H, W);
    Var q = theta.fwd(g, x);
    Var k = phi.fwd(g, x);
    if (p > 1) k = g.avgpool(k, static_cast<int>(p));
    const int64_t hw = (H / p) * (W / p);
    Var qm = g.reshape(q, {B, H * W, channels / 2});
    Var km = g.reshape(k, {B, hw, channels / 2});
    return g.softmax_lastdim(g.bmm(qm, g.transpose12(km)));
  }

  Var nonlocal_features(Graph& g, Var x) const {
    const Tensor& t = g.val(x);
    const int64_t B = t.dim(0), H = t.dim(1), W = t.dim(2);
    const int64_t p = effective_pool(H, W);
    Var v = gconv.fwd(g, x);
    if (p > 1) v = g.avgpool(v, static_cast<int>(p));
    Var vm = g.reshape(v, {B, (H / p) * (W / p), channels / 2});
    Var y = g.bmm(affinity(g, x), vm);
    return g.reshape(y, {B, H, W, channels / 2});
  }

  Var fwd(Graph& g, Var x) const {
    if (g.val(x).dim(3) != channels) throw std::invalid_argument("ernb: channel mismatch");
    Var y = nonlocal_features(g, x);
    Var fused = g.mish(fuse1.fwd(g, g.concat_lastdim({y, x})));
    return g.add(x, fuse_rb.fwd(g, fused));
  }

  void collect(const std::string& prefix, ParamList* out) {
    theta.collect(prefix + ".theta", out);
    phi.collect(prefix + ".phi", out);
    gconv.collect(prefix + ".g", out);
    fuse1.collect(prefix + ".fuse1", out);
    fuse_rb.collect(prefix + ".fuse_rb", out);
  }
};

// --------------------------------------------------------------------------
// Mul2Res: two levels of four parallel residual branches. Level-1 branches
// open with 1/3/5/7 convolutions onto F/4 channels; inside each branch four
// residual sub-branches (kernels 1/3/5/7) run in parallel, their
// concatenation fused back to the branch width by an ECBAM. Branch outputs
// concatenate to F, pass a second ECBAM, and the block input is added back.
// --------------------------------------------------------------------------

struct Mul2ResBlock {
  struct Branch {
    Conv lead;
    std::array<ResidualBlock, 4> subs;
    Ecbam fuse;
  };
  std::array<Branch, 4> branches;
  Ecbam top_fuse;
  int64_t width = 0;

  static Mul2ResBlock make(Rng& rng, const NetConfig& cfg) {
    const int64_t f = cfg.width;
    const int64_t c = f / 4;
    Mul2ResBlock blk;
    blk.width = f;
    const int64_t kernels[4] = {1, 3, 5, 7};
    for (int i = 0; i < 4; ++i) {
      Branch& br = blk.branches[static_cast<size_t>(i)];
      br.lead = Conv::make(rng, kernels[i], f, c);
      for (int j = 0; j < 4; ++j)
        br.subs[static_cast<size_t>(j)] = ResidualBlock::make(rng, kernels[j], c);
      br.fuse = Ecbam::make(rng, 4 * c, c, cfg.ecbam_reduction);
    }
    blk.top_fuse = Ecbam::make(rng, f, f, cfg.ecbam_reduction);
    return blk;
  }

  Var fwd(Graph& g, Var x) const {
    if (g.val(x).dim(3) != width) throw std::invalid_argument("mul2res: width mismatch");
    std::vector<Var> branch_outs;
    for (const Branch& br : branches) {
      Var xb = g.mish(br.lead.fwd(g, x));
      std::vector<Var> subs;
      for (const ResidualBlock& rb : br.subs) subs.push_back(rb.fwd(g, xb));
      Var fused = br.fuse.fwd(g, g.concat_lastdim(subs));
      branch_outs.push_back(g.add(xb, fused));
    }
    Var top = top_fuse.fwd(g, g.concat_lastdim(branch_outs));
    return g.add(x, top);
  }

  void collect(const std::string& prefix, ParamList* out) {
    for (size_t i = 0; i < 4; ++i) {
      const std::string bp = prefix + ".br" + std::to_string(i);
      branches[i].lead.collect(bp + ".lead", out);
      for (size_t j = 0; j < 4; ++j)
        branches[i].subs[j].collect(bp + ".sub" + std::to_string(j), out);
      branches[i].fuse.collect(bp + ".fuse", out);
    }
    top_fuse.collect(prefix + ".top_fuse", out);
  }
};

// --------------------------------------------------------------------------
// CVENet generator: head conv, ERNB, Mul2Res chain with cascading 1x1
// fusions, ERNB, tail conv back to 3 channels, plus a global skip. The tail
// starts zeroed so the network is the identity map at initialization.
// --------------------------------------------------------------------------

class Cvenet {
 public:
  explicit Cvenet(const NetConfig& cfg, bool zero_tail = true) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    head_ = Conv::make(rng, 3, 3, cfg.width);
    ernb_in_ = Ernb::make(rng, cfg.width, cfg.nonlocal_pool);
    for (int i = 0; i < cfg.num_mul2res; ++i) {
      blocks_.push_back(Mul2ResBlock::make(rng, cfg));
      cascade_.push_back(Conv::make(rng, 1, static_cast<int64_t>(i + 2) * cfg.width, cfg.width));
    }
    ernb_out_ = Ernb::make(rng, cfg.width, cfg.nonlocal_pool);
    tail_ = Conv::make(rng, 3, cfg.width, 3);
    if (zero_tail) tail_.zero();
  }

  const NetConfig& config() const { return cfg_; }

  Var forward(Graph& g, Var x, bool training) const {
    const Tensor& t = g.val(x);
    if (t.ndim() != 4 || t.dim(3) != 3 || t.dim(1) < 16 || t.dim(2) < 16)
      throw std::invalid_argument("cvenet: expects [B,H,W,3] blocks with H,W >= 16");
    Var h = g.mish(head_.fwd(g, x));
    Var e0 = ernb_in_.fwd(g, h);
    std::vector<Var> cascade_inputs = {e0};
    Var cur = e0;
    for (size_t i = 0; i < blocks_.size(); ++i) {
      Var bo = blocks_[i].fwd(g, cur);
      cascade_inputs.push_back(bo);
      cur = g.mish(cascade_[i].fwd(g, g.concat_lastdim(cascade_inputs)));
    }
    Var e1 = ernb_out_.fwd(g, cur);
    Var out = g.add(x, tail_.fwd(g, e1));
    return training ? out : g.clampv(out, 0.0, 1.0);
  }

  // Inference pass with [0,1] clipping.
  Tensor infer(const Tensor& block) const {
    Graph g;
    return g.val(forward(g, g.constant(block), false));
  }

  ParamList params() {
    ParamList out;
    head_.collect("head", &out);
    ernb_in_.collect("ernb_in", &out);
    for (size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect("block" + std::to_string(i), &out);
      cascade_[i].collect("cascade" + std::to_string(i), &out);
    }
    ernb_out_.collect("ernb_out", &out);
    tail_.collect("tail", &out);
    return out;
  }

 private:
  NetConfig cfg_;
  Conv head_;
  Ernb ernb_in_, ernb_out_;
  std::vector<Mul2ResBlock> blocks_;
  std::vector<Conv> cascade_;
  Conv tail_;
};

// --------------------------------------------------------------------------
// Discriminator: SRGAN-style strided stack with batch normalisation and
// leaky ReLU, an ERNB after the first convolution and another before the
// final one; the 1-D verdict head is absent and the dense layer emits
// feature points instead.
// --------------------------------------------------------------------------

class Discriminator {
 public:
  explicit Discriminator(const NetConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.seed + 0x5eed);
    const int64_t w = cfg.disc_width;
    c0_ = Conv::make(rng, 3, 3, w);
    ernb_a_ = Ernb::make(rng, w, cfg.nonlocal_pool);
    struct Spec {
      int64_t oc;
      int stride;
    };
    const Spec specs[7] = {{w, 2},     {2 * w, 1}, {2 * w, 2}, {4 * w, 1},
                           {4 * w, 2}, {8 * w, 1}, {8 * w, 2}};
    int64_t ic = w;
    for (const Spec& s : specs) {
      stack_.push_back({Conv::make(rng, 3, ic, s.oc, s.stride), BatchNorm::make(s.oc)});
      ic = s.oc;
    }
    ernb_b_ = Ernb::make(rng, 8 * w, cfg.nonlocal_pool);
    const int64_t spatial = cfg.disc_input / 16;
    flat_dim_ = spatial * spatial * 8 * w;
    final_ = Dense::make(rng, flat_dim_, cfg.feature_dim);
  }

  const NetConfig& config() const { return cfg_; }

  // [B, disc_input, disc_input, 3] -> [B, feature_dim] feature points.
  Var forward(Graph& g, Var x) const {
    const Tensor& t = g.val(x);
    if (t.ndim() != 4 || t.dim(3) != 3 || t.dim(1) != cfg_.disc_input ||
        t.dim(2) != cfg_.disc_input)
      throw std::invalid_argument("discriminator: wrong input geometry");
    Var h = g.leaky_relu(c0_.fwd(g, x));
    h = ernb_a_.fwd(g, h);
    for (size_t i = 0; i < stack_.size(); ++i) {
      h = g.leaky_relu(stack_[i].bn.fwd(g, stack_[i].conv.fwd(g, h)));
      if (i + 1 == stack_.size() - 1) h = ernb_b_.fwd(g, h);  // before the final conv
    }
    const Tensor& ht = g.val(h);
    return final_.fwd(g, g.reshape(h, {ht.dim(0), flat_dim_}));
  }

  Tensor features(const Tensor& blocks) const {
    Graph g;
    return g.val(forward(g, g.constant(blocks)));
  }

  ParamList params() {
    ParamList out;
    c0_.collect("c0", &out);
    ernb_a_.collect("ernb_a", &out);
    for (size_t i = 0; i < stack_.size(); ++i) {
      stack_[i].conv.collect("conv" + std::to_string(i + 1), &out);
      stack_[i].bn.collect("bn" + std::to_string(i + 1), &out);
    }
    ernb_b_.collect("ernb_b", &out);
    final_.collect("final", &out);
    return out;
  }

 private:
  struct Stage {
    Conv conv;
    BatchNorm bn;
  };
  NetConfig cfg_;
  Conv c0_;
  Ernb ernb_a_, ernb_b_;
  std::vector<Stage> stack_;
  Dense final_;
  int64_t flat_dim_ = 0;
};

// --------------------------------------------------------------------------
// Checkpoints: versioned container echoing the NetConfig plus named
// parameter tensors, integrity-checked by a trailing hash.
// --------------------------------------------------------------------------

enum class ModelKind : uint32_t { kGenerator = 0, kDiscriminator = 1 };

struct Checkpoint {
  ModelKind kind = ModelKind::kGenerator;
  NetConfig config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

constexpr char kCkptMagic[8] = {'C', 'V', 'C', 'K', 'P', 'T', '0', '1'};

inline uint64_t fnv1a(const std::string& bytes) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
void put_pod(std::string* buf, T v) {
  buf->append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take_pod(const std::string& buf, size_t* off) {
  if (*off + sizeof(T) > buf.size()) throw std::runtime_error("checkpoint: truncated file");
  T v;
  std::memcpy(&v, buf.data() + *off, sizeof(T));
  *off += sizeof(T);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, ModelKind kind, const NetConfig& cfg,
                            const ParamList& params) {
  std::string buf;
  buf.append(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::put_pod<uint32_t>(&buf, static_cast<uint32_t>(kind));
  detail::put_pod<int64_t>(&buf, cfg.width);
  detail::put_pod<int64_t>(&buf, cfg.num_mul2res);
  detail::put_pod<int64_t>(&buf, cfg.ecbam_reduction);
  detail::put_pod<int64_t>(&buf, cfg.nonlocal_pool);
  detail::put_pod<int64_t>(&buf, cfg.feature_dim);
  detail::put_pod<int64_t>(&buf, cfg.disc_width);
  detail::put_pod<int64_t>(&buf, cfg.disc_input);
  detail::put_pod<uint64_t>(&buf, cfg.seed);
  detail::put_pod<uint64_t>(&buf, params.size());
  for (const NamedParam& p : params) {
    detail::put_pod<uint32_t>(&buf, static_cast<uint32_t>(p.name.size()));
    buf.append(p.name);
    detail::put_pod<uint32_t>(&buf, static_cast<uint32_t>(p.tensor->ndim()));
    for (int64_t d : p.tensor->shape()) detail::put_pod<int64_t>(&buf, d);
    buf.append(reinterpret_cast<const char*>(p.tensor->data()),
               sizeof(double) * static_cast<size_t>(p.tensor->numel()));
  }
  detail::put_pod<uint64_t>(&buf, detail::fnv1a(buf));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(detail::kCkptMagic) + sizeof(uint64_t) ||
      std::memcmp(buf.data(), detail::kCkptMagic, sizeof(detail::kCkptMagic)) != 0)
    throw std::runtime_error(path + ": not a checkpoint file");
  const std::string payload = buf.substr(0, buf.size() - sizeof(uint64_t));
  size_t tail = buf.size() - sizeof(uint64_t);
  const uint64_t stored = detail::take_pod<uint64_t>(buf, &tail);
  if (stored != detail::fnv1a(payload))
    throw std::runtime_error(path + ": checkpoint integrity check failed");

  size_t off = sizeof(detail::kCkptMagic);
  Checkpoint ck;
  ck.kind = static_cast<ModelKind>(detail::take_pod<uint32_t>(payload, &off));
  ck.config.width = detail::take_pod<int64_t>(payload, &off);
  ck.config.num_mul2res = static_cast<int>(detail::take_pod<int64_t>(payload, &off));
  ck.config.ecbam_reduction = detail::take_pod<int64_t>(payload, &off);
  ck.config.nonlocal_pool = detail::take_pod<int64_t>(payload, &off);
  ck.config.feature_dim = detail::take_pod<int64_t>(payload, &off);
  ck.config.disc_width = detail::take_pod<int64_t>(payload, &off);
  ck.config.disc_input = detail::take_pod<int64_t>(payload, &off);
  ck.config.seed = detail::take_pod<uint64_t>(payload, &off);
  const uint64_t n = detail::take_pod<uint64_t>(payload, &off);
  for (uint64_t i = 0; i < n; ++i) {
    const uint32_t name_len = detail::take_pod<uint32_t>(payload, &off);
    if (off + name_len > payload.size()) throw std::runtime_error(path + ": truncated name");
    std::string name = payload.substr(off, name_len);
    off += name_len;
    const uint32_t ndim = detail::take_pod<uint32_t>(payload, &off);
    std::vector<int64_t> shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(detail::take_pod<int64_t>(payload, &off));
    Tensor t(shape);
    const size_t bytes = sizeof(double) * static_cast<size_t>(t.numel());
    if (off + bytes > payload.size()) throw std::runtime_error(path + ": truncated tensor");
    std::memcpy(t.data(), payload.data() + off, bytes);
    off += bytes;
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

// Copies checkpoint tensors into a live model's parameters; every name and
// shape must match and the configs must agree.
inline void load_params(const Checkpoint& ck, ModelKind expected_kind,
                        const NetConfig& expected_cfg, const ParamList& params) {
  if (ck.kind != expected_kind) throw std::runtime_error("checkpoint: model kind mismatch");
  if (!(ck.config == expected_cfg)) throw std::runtime_error("checkpoint: config mismatch");
  if (ck.tensors.size() != params.size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (const NamedParam& p : params) {
    const Tensor* src = ck.find(p.name);
    if (!src) throw std::runtime_error("checkpoint: missing parameter " + p.name);
    if (src->shape() != p.tensor->shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    *p.tensor = *src;
  }
}

}  // namespace cvegan
