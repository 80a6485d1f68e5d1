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

#include "cvegan/ioutil.hpp"
#include "cvegan/losscal.hpp"
#include "cvegan/nn.hpp"
#include "cvegan/sphere.hpp"

namespace cvegan {

// Two-stage training: the generator alone under the perceptual loss, then
// generator and discriminator jointly under the relativistic sphere
// objective with the adversarial term weighted into the generator loss.

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  int64_t batch_size = 16;
  int64_t epochs = 200;
  double lr0 = 1e-4;
  double lr_decay_factor = 0.1;
  int64_t lr_decay_every = 100;  // epochs
  std::string decay_mode = "lr";  // "lr" schedule or decoupled "weight" decay
  double adv_weight = 0.005;
  int moments = 3;
  std::string pairing = "paired";  // relativistic expectation: "paired" or "cross"
  int msssim_scales = 4;
  double grad_clip = 0.0;  // global L2 threshold; 0 disables
  bool check_finite = true;
  uint64_t seed = 1;

  void validate() const {
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
      throw std::invalid_argument("TrainConfig: betas in (0,1)");
    if (batch_size < 1 || epochs < 1 || lr0 <= 0 || lr_decay_factor <= 0 || lr_decay_every < 1)
      throw std::invalid_argument("TrainConfig: positive schedule parameters required");
    if (moments < 1 || adv_weight < 0)
      throw std::invalid_argument("TrainConfig: moments >= 1, adv_weight >= 0");
    if (decay_mode != "lr" && decay_mode != "weight")
      throw std::invalid_argument("TrainConfig: decay_mode is 'lr' or 'weight'");
    if (pairing != "paired" && pairing != "cross")
      throw std::invalid_argument("TrainConfig: pairing is 'paired' or 'cross'");
  }

  RelPairing rel_pairing() const {
    return pairing == "cross" ? RelPairing::kCrossProduct : RelPairing::kIndexPaired;
  }

  double lr_at_epoch(int64_t epoch) const {
    if (decay_mode != "lr") return lr0;
    double lr = lr0;
    for (int64_t k = 0; k < epoch / lr_decay_every; ++k) lr *= lr_decay_factor;
    return lr;
  }

  double weight_decay() const { return decay_mode == "weight" ? lr_decay_factor : 0.0; }
};

struct PairSample {
  Tensor degraded;  // [H,W,3] in [0,1]
  Tensor target;
  int qp = 0;
};

struct PairDataset {
  std::vector<PairSample> samples;
  std::string tool = "pp";

  void validate() const {
    if (samples.empty()) throw std::invalid_argument("PairDataset: empty");
    for (const PairSample& s : samples) {
      if (s.degraded.ndim() != 3 || s.degraded.dim(2) != 3 ||
          !s.degraded.same_shape(s.target))
        throw std::invalid_argument("PairDataset: samples must be aligned [H,W,3] pairs");
      for (int64_t i = 0; i < s.degraded.numel(); ++i)
        if (s.degraded[i] < 0.0 || s.degraded[i] > 1.0 || s.target[i] < 0.0 || s.target[i] > 1.0)
          throw std::invalid_argument("PairDataset: pixel outside [0,1]");
    }
  }
};

struct HistoryRow {
  int64_t epoch = 0;
  int64_t step = -1;  // -1 for per-epoch rows
  std::string loss_name;
  double value = 0.0;
};

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,step,loss_name,value\n";
  for (const HistoryRow& r : rows)
    out << r.epoch << "," << r.step << "," << r.loss_name << "," << format_double(r.value)
        << "\n";
}

// --------------------------------------------------------------------------
// Adam
// --------------------------------------------------------------------------

class Adam {
 public:
  Adam(double beta1, double beta2, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParamList& params, const Graph& g, double lr, double weight_decay = 0.0,
            double grad_clip = 0.0) {
    if (state_.empty()) {
      for (const NamedParam& p : params) state_.push_back({Tensor(p.tensor->shape()),
                                                           Tensor(p.tensor->shape())});
    }
    if (state_.size() != params.size()) throw std::logic_error("Adam: parameter list changed");
    ++t_;

    double scale = 1.0;
    if (grad_clip > 0.0) {
      double sq = 0.0;
      for (const NamedParam& p : params) {
        const Tensor* grad = g.grad_of(p.tensor);
        if (!grad) continue;
        for (int64_t i = 0; i < grad->numel(); ++i) sq += (*grad)[i] * (*grad)[i];
      }
      const double norm = std::sqrt(sq);
      if (norm > grad_clip) scale = grad_clip / norm;
    }

    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
      Tensor& theta = *params[pi].tensor;
      Tensor& m = state_[pi].m;
      Tensor& v = state_[pi].v;
      const Tensor* grad = g.grad_of(params[pi].tensor);
      for (int64_t i = 0; i < theta.numel(); ++i) {
        const double gi = grad ? (*grad)[i] * scale : 0.0;
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * theta[i]);
      }
    }
  }

 private:
  struct State {
    Tensor m, v;
  };
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<State> state_;
};

// --------------------------------------------------------------------------
// Shared loop plumbing
// --------------------------------------------------------------------------

namespace detail {

inline Tensor stack_samples(const PairDataset& ds, const std::vector<size_t>& idx, bool degraded) {
  const Tensor& first = ds.samples[idx[0]].degraded;
  Tensor out({static_cast<int64_t>(idx.size()), first.dim(0), first.dim(1), 3});
  const int64_t per = first.numel();
  for (size_t b = 0; b < idx.size(); ++b) {
    const Tensor& src = degraded ? ds.samples[idx[b]].degraded : ds.samples[idx[b]].target;
    std::copy(src.data(), src.data() + per, out.data() + static_cast<int64_t>(b) * per);
  }
  return out;
}

inline std::vector<std::vector<size_t>> make_batches(size_t n, int64_t batch_size, Rng& rng) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<size_t>> batches;
  for (size_t at = 0; at < n; at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(n, at + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

inline void abort_if_not_finite(double v, const char* loss, int64_t epoch, int64_t step) {
  if (!std::isfinite(v))
    throw std::runtime_error("training aborted: non-finite " + std::string(loss) + " at epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step) +
                             " (value " + std::to_string(v) + ")");
}

inline void check_params_finite(const ParamList& params, int64_t epoch, int64_t step) {
  for (const NamedParam& p : params)
    if (!p.tensor->all_finite())
      throw std::runtime_error("training aborted: non-finite parameter " + p.name +
                               " after epoch " + std::to_string(epoch) + " step " +
                               std::to_string(step));
}

}  // namespace detail

// --------------------------------------------------------------------------
// Stage 1: generator alone under the perceptual loss
// --------------------------------------------------------------------------

struct Stage1Result {
  Cvenet generator;
  std::vector<HistoryRow> history;
  std::vector<double> epoch_mean_lp;
};

inline Stage1Result stage1_train(const PairDataset& dataset, const NetConfig& net_cfg,
                                 const TrainConfig& cfg, const Checkpoint* init = nullptr) {
  dataset.validate();
  cfg.validate();
  Stage1Result result{Cvenet(net_cfg), {}, {}};
  if (init) load_params(*init, ModelKind::kGenerator, net_cfg, result.generator.params());
  const ParamList params = result.generator.params();
  Adam adam(cfg.beta1, cfg.beta2);
  Rng rng(cfg.seed);
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at_epoch(epoch);
    result.history.push_back({epoch, -1, "lr", lr});
    const auto batches = detail::make_batches(dataset.samples.size(), cfg.batch_size, rng);
    double epoch_sum = 0.0;
    for (size_t step = 0; step < batches.size(); ++step) {
      Graph g;
      Var x = g.constant(detail::stack_samples(dataset, batches[step], true));
      Var y = g.constant(detail::stack_samples(dataset, batches[step], false));
      Var out = result.generator.forward(g, x, true);
      Var loss = perceptual_loss(g, out, y, cfg.msssim_scales);
      const double lv = g.val(loss)[0];
      detail::abort_if_not_finite(lv, "perceptual loss", epoch, static_cast<int64_t>(step));
      g.backward(loss);
      adam.step(params, g, lr, cfg.weight_decay(), cfg.grad_clip);
      if (cfg.check_finite) detail::check_params_finite(params, epoch, static_cast<int64_t>(step));
      result.history.push_back({epoch, static_cast<int64_t>(step), "lp", lv});
      epoch_sum += lv;
    }
    const double mean = epoch_sum / static_cast<double>(batches.size());
    result.history.push_back({epoch, -1, "lp_epoch_mean", mean});
    result.epoch_mean_lp.push_back(mean);
  }
  return result;
}

// --------------------------------------------------------------------------
// Stage 2: alternating discriminator / generator updates
// --------------------------------------------------------------------------

struct Stage2Trace {
  Tensor real_features, fake_features;
  double lp = 0.0, gen_adv = 0.0, gen_total = 0.0, disc = 0.0;
};

struct Stage2Result {
  Cvenet generator;
  Discriminator discriminator;
  std::vector<HistoryRow> history;
  std::vector<Stage2Trace> traces;
};

inline Stage2Result stage2_train(const Checkpoint& gen_ckpt, const PairDataset& dataset,
                                 const TrainConfig& cfg, bool capture_traces = false) {
  dataset.validate();
  cfg.validate();
  const NetConfig net_cfg = gen_ckpt.config;
  const int64_t hw = dataset.samples[0].degraded.dim(0);
  if (hw != net_cfg.disc_input || dataset.samples[0].degraded.dim(1) != net_cfg.disc_input)
    throw std::invalid_argument("stage2_train: block size does not match disc_input");

  Stage2Result result{Cvenet(net_cfg), Discriminator(net_cfg), {}, {}};
  load_params(gen_ckpt, ModelKind::kGenerator, net_cfg, result.generator.params());
  const ParamList gen_params = result.generator.params();
  const ParamList disc_params = result.discriminator.params();
  Adam adam_g(cfg.beta1, cfg.beta2);
  Adam adam_d(cfg.beta1, cfg.beta2);
  Rng rng(cfg.seed);
  const ReSphereConfig sphere_cfg{cfg.moments, cfg.adv_weight, net_cfg.feature_dim,
                                  cfg.rel_pairing()};
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at_epoch(epoch);
    result.history.push_back({epoch, -1, "lr", lr});
    const auto batches = detail::make_batches(dataset.samples.size(), cfg.batch_size, rng);
    for (size_t step = 0; step < batches.size(); ++step) {
      const Tensor x = detail::stack_samples(dataset, batches[step], true);
      const Tensor y = detail::stack_samples(dataset, batches[step], false);

      // Discriminator step on detached generator output.
      Tensor fake_blocks;
      {
        Graph g;
        fake_blocks = g.val(result.generator.forward(g, g.constant(x), true));
      }
      double disc_value = 0.0;
      {
        Graph g;
        Var f_real = result.discriminator.forward(g, g.constant(y));
        Var f_fake = result.discriminator.forward(g, g.constant(fake_blocks));
        Var loss = discriminator_loss(g, f_real, f_fake, sphere_cfg);
        disc_value = g.val(loss)[0];
        detail::abort_if_not_finite(disc_value, "discriminator loss", epoch,
                                    static_cast<int64_t>(step));
        g.backward(loss);
        adam_d.step(disc_params, g, lr, cfg.weight_decay(), cfg.grad_clip);
        if (cfg.check_finite)
          detail::check_params_finite(disc_params, epoch, static_cast<int64_t>(step));
      }

      // Generator step; real features are constants here.
      const Tensor real_features = result.discriminator.features(y);
      {
        Graph g;
        Var out = result.generator.forward(g, g.constant(x), true);
        Var f_fake = result.discriminator.forward(g, out);
        Var f_real = g.constant(real_features);
        Var lp = perceptual_loss(g, out, g.constant(y), cfg.msssim_scales);
        Var adv = generator_adv_loss(g, f_real, f_fake, sphere_cfg);
        Var total = g.add(lp, g.mul_scalar(adv, cfg.adv_weight));
        const double lp_v = g.val(lp)[0];
        const double adv_v = g.val(adv)[0];
        const double total_v = g.val(total)[0];
        detail::abort_if_not_finite(total_v, "generator loss", epoch,
                                    static_cast<int64_t>(step));
        g.backward(total);
        adam_g.step(gen_params, g, lr, cfg.weight_decay(), cfg.grad_clip);
        if (cfg.check_finite)
          detail::check_params_finite(gen_params, epoch, static_cast<int64_t>(step));

        result.history.push_back({epoch, static_cast<int64_t>(step), "disc", disc_value});
        result.history.push_back({epoch, static_cast<int64_t>(step), "lp", lp_v});
        result.history.push_back({epoch, static_cast<int64_t>(step), "gen_adv", adv_v});
        result.history.push_back({epoch, static_cast<int64_t>(step), "gen_total", total_v});
        if (capture_traces)
          result.traces.push_back(
              {real_features, g.val(f_fake), lp_v, adv_v, total_v, disc_value});
      }
    }
  }
  return result;
}

// --------------------------------------------------------------------------
// Config-file bindings
// --------------------------------------------------------------------------

inline NetConfig net_config_from(const KvFile& kv) {
  NetConfig cfg;
  cfg.width = kv.get_int("width", cfg.width);
  cfg.num_mul2res = static_cast<int>(kv.get_int("num_mul2res", cfg.num_mul2res));
  cfg.ecbam_reduction = kv.get_int("ecbam_reduction", cfg.ecbam_reduction);
  cfg.nonlocal_pool = kv.get_int("nonlocal_pool", cfg.nonlocal_pool);
  cfg.feature_dim = kv.get_int("feature_dim", cfg.feature_dim);
  cfg.disc_width = kv.get_int("disc_width", cfg.disc_width);
  cfg.disc_input = kv.get_int("disc_input", cfg.disc_input);
  cfg.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(cfg.seed)));
  cfg.validate();
  return cfg;
}

inline TrainConfig train_config_from(const KvFile& kv) {
  TrainConfig cfg;
  cfg.beta1 = kv.get_double("beta1", cfg.beta1);
  cfg.beta2 = kv.get_double("beta2", cfg.beta2);
  cfg.batch_size = kv.get_int("batch_size", cfg.batch_size);
  cfg.epochs = kv.get_int("epochs", cfg.epochs);
  cfg.lr0 = kv.get_double("lr0", cfg.lr0);
  cfg.lr_decay_factor = kv.get_double("lr_decay_factor", cfg.lr_decay_factor);
  cfg.lr_decay_every = kv.get_int("lr_decay_every", cfg.lr_decay_every);
  cfg.decay_mode = kv.get_str("decay_mode", cfg.decay_mode);
  cfg.adv_weight = kv.get_double("adv_weight", cfg.adv_weight);
  cfg.moments = static_cast<int>(kv.get_int("moments", cfg.moments));
  cfg.pairing = kv.get_str("pairing", cfg.pairing);
  cfg.msssim_scales = static_cast<int>(kv.get_int("msssim_scales", cfg.msssim_scales));
  cfg.grad_clip = kv.get_double("grad_clip", cfg.grad_clip);
  cfg.check_finite = kv.get_bool("check_finite", cfg.check_finite);
  cfg.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(cfg.seed)));
  cfg.validate();
  return cfg;
}

}  // namespace cvegan
