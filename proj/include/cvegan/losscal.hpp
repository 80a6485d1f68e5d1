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

#include <array>
#include <thread>

#include "cvegan/ioutil.hpp"
#include "cvegan/metrics.hpp"

namespace cvegan {

// Search engine for linear combinations of elementary-transformed losses,
// calibrated against subjective scores by rank correlation, plus the
// finalized perceptual training loss that came out of that search.

constexpr double kLossFloor = 1e-8;  // clamp before logarithms

enum class TransformId : int {
  kIdentity = 0,
  kSquare,
  kSqrt,
  kExpm1,   // (e^v - 1) / (e - 1)
  kLog,     // ln(max(v, 1e-8))
  kSinHalfPi,
  kArcsin,
  kTanh,
  kArsinh,
};

constexpr int kNumTransforms = 9;

inline const char* transform_name(TransformId t) {
  switch (t) {
    case TransformId::kIdentity: return "identity";
    case TransformId::kSquare: return "square";
    case TransformId::kSqrt: return "sqrt";
    case TransformId::kExpm1: return "expm1";
    case TransformId::kLog: return "log";
    case TransformId::kSinHalfPi: return "sin";
    case TransformId::kArcsin: return "arcsin";
    case TransformId::kTanh: return "tanh";
    case TransformId::kArsinh: return "arsinh";
  }
  throw std::invalid_argument("unknown transform id");
}

inline TransformId transform_from_name(const std::string& name) {
  for (int i = 0; i < kNumTransforms; ++i)
    if (name == transform_name(static_cast<TransformId>(i))) return static_cast<TransformId>(i);
  throw std::invalid_argument("unknown transform '" + name + "'");
}

inline std::vector<TransformId> all_transforms() {
  std::vector<TransformId> out;
  for (int i = 0; i < kNumTransforms; ++i) out.push_back(static_cast<TransformId>(i));
  return out;
}

inline double transform_apply(TransformId t, double v) {
  v = std::min(std::max(v, 0.0), 1.0);
  switch (t) {
    case TransformId::kIdentity: return v;
    case TransformId::kSquare: return v * v;
    case TransformId::kSqrt: return std::sqrt(v);
    case TransformId::kExpm1: return std::expm1(v) / std::expm1(1.0);
    case TransformId::kLog: return std::log(std::max(v, kLossFloor));
    case TransformId::kSinHalfPi: return std::sin(1.5707963267948966 * v);
    case TransformId::kArcsin: return std::asin(v);
    case TransformId::kTanh: return std::tanh(v);
    case TransformId::kArsinh: return std::asinh(v);
  }
  throw std::invalid_argument("unknown transform id");
}

// One elementary transform applied to all six losses plus combination
// weights; a6 stays pinned at 1 during the search and the finalized spec is
// normalized to sum 1.
struct LossSpec {
  TransformId transform = TransformId::kIdentity;
  std::array<double, 6> weights{};

  double weight_sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

struct QualityRecord {
  std::string sequence_id;
  LossVector losses;
  double subjective_score = 0.0;
};

using Database = std::vector<QualityRecord>;

inline double combined_loss(const LossSpec& spec, const LossVector& lv) {
  double s = 0.0;
  for (int i = 0; i < 6; ++i)
    s += spec.weights[static_cast<size_t>(i)] * transform_apply(spec.transform, lv.component(i));
  return s;
}

// --------------------------------------------------------------------------
// Perceptual training loss: weighted sum of the logs of l1, l2, SSIM and
// MS-SSIM losses, every argument clamped to [1e-8, 1].
// --------------------------------------------------------------------------

inline LossSpec perceptual_loss_spec() {
  LossSpec s;
  s.transform = TransformId::kLog;
  s.weights = {0.3, 0.1, 0.0, 0.0, 0.2, 0.4};
  return s;
}

inline Var perceptual_loss(Graph& g, Var a, Var b, int msssim_scales = 4) {
  auto lg = [&g](Var v) { return g.logv(g.clampv(v, kLossFloor, 1.0)); };
  Var term = g.mul_scalar(lg(l1_loss(g, a, b)), 0.3);
  term = g.add(term, g.mul_scalar(lg(l2_loss(g, a, b)), 0.1));
  term = g.add(term, g.mul_scalar(lg(ssim_loss(g, a, b)), 0.2));
  term = g.add(term, g.mul_scalar(lg(msssim_loss(g, a, b, msssim_scales)), 0.4));
  return term;
}

inline double perceptual_loss(const Tensor& a, const Tensor& b, int msssim_scales = 4) {
  Graph g;
  return g.val(perceptual_loss(g, g.constant(a), g.constant(b), msssim_scales))[0];
}

// --------------------------------------------------------------------------
// Grid search and cross-validation
// --------------------------------------------------------------------------

struct GridSearchOptions {
  double step = 0.1;
  std::vector<TransformId> transforms = all_transforms();
  int threads = 0;  // 0 = hardware concurrency
};

namespace detail {

struct Candidate {
  double score = -1.0;
  int transform = 0;
  std::array<double, 6> weights{};

  // Higher score wins; ties go to the lexicographically smallest
  // (transform, weights).
  bool beats(const Candidate& o) const {
    if (score != o.score) return score > o.score;
    if (transform != o.transform) return transform < o.transform;
    return weights < o.weights;
  }
};

// Mean |SROCC| between combined-loss values and subjective scores across
// databases. Databases with undefined correlation invalidate the candidate.
inline std::optional<double> candidate_score(
    const std::vector<std::vector<std::array<double, 6>>>& transformed,
    const std::vector<std::vector<double>>& scores, const std::array<double, 6>& w) {
  double total = 0.0;
  std::vector<double> combined;
  for (size_t db = 0; db < transformed.size(); ++db) {
    combined.resize(transformed[db].size());
    for (size_t r = 0; r < transformed[db].size(); ++r) {
      const std::array<double, 6>& t = transformed[db][r];
      combined[r] = w[0] * t[0] + w[1] * t[1] + w[2] * t[2] + w[3] * t[3] + w[4] * t[4] +
                    w[5] * t[5];
    }
    const std::optional<double> rho = srocc(combined, scores[db]);
    if (!rho.has_value()) return std::nullopt;
    total += std::abs(*rho);
  }
  return total / static_cast<double>(transformed.size());
}

}  // namespace detail

// Exhaustive search over the weight grid (a6 pinned at 1) and the transform
// set, maximizing mean |SROCC| across the training databases. Deterministic:
// ties resolve to the lexicographically smallest (transform, weights).
inline LossSpec grid_search(const std::vector<Database>& databases,
                            const GridSearchOptions& opts = {}) {
  if (databases.empty()) throw std::invalid_argument("grid_search: no databases");
  for (const Database& db : databases)
    if (db.empty()) throw std::invalid_argument("grid_search: empty database");
  const double steps_real = 1.0 / opts.step;
  const int steps = static_cast<int>(std::llround(steps_real));
  if (std::abs(steps_real - steps) > 1e-9)
    throw std::invalid_argument("grid_search: step must divide 1 evenly");
  if (opts.transforms.empty()) throw std::invalid_argument("grid_search: no transforms");

  std::vector<std::vector<double>> scores(databases.size());
  for (size_t db = 0; db < databases.size(); ++db)
    for (const QualityRecord& r : databases[db]) scores[db].push_back(r.subjective_score);

  const int n_axis = steps + 1;
  const int64_t n_combos = static_cast<int64_t>(n_axis) * n_axis * n_axis * n_axis * n_axis;

  detail::Candidate best;
  bool any_valid = false;
  for (TransformId t : opts.transforms) {
    std::vector<std::vector<std::array<double, 6>>> transformed(databases.size());
    for (size_t db = 0; db < databases.size(); ++db) {
      transformed[db].resize(databases[db].size());
      for (size_t r = 0; r < databases[db].size(); ++r)
        for (int i = 0; i < 6; ++i)
          transformed[db][r][static_cast<size_t>(i)] =
              transform_apply(t, databases[db][r].losses.component(i));
    }

    const unsigned n_threads =
        std::max(1u, opts.threads > 0 ? static_cast<unsigned>(opts.threads)
                                      : std::thread::hardware_concurrency());
    std::vector<detail::Candidate> part(n_threads);
    std::vector<bool> part_valid(n_threads, false);
    auto worker = [&](unsigned tid) {
      detail::Candidate local;
      bool valid = false;
      std::array<double, 6> w{};
      w[5] = 1.0;
      for (int64_t combo = static_cast<int64_t>(tid); combo < n_combos;
           combo += static_cast<int64_t>(n_threads)) {
        int64_t rem = combo;
        for (int axis = 4; axis >= 0; --axis) {
          w[static_cast<size_t>(axis)] = opts.step * static_cast<double>(rem % n_axis);
          rem /= n_axis;
        }
        const std::optional<double> score = detail::candidate_score(transformed, scores, w);
        if (!score.has_value()) continue;
        detail::Candidate c{*score, static_cast<int>(t), w};
        if (!valid || c.beats(local)) {
          local = c;
          valid = true;
        }
      }
      part[tid] = local;
      part_valid[tid] = valid;
    };
    if (n_threads == 1) {
      worker(0);
    } else {
      std::vector<std::thread> pool;
      for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker, i);
      for (std::thread& th : pool) th.join();
    }
    for (unsigned i = 0; i < n_threads; ++i) {
      if (!part_valid[i]) continue;
      if (!any_valid || part[i].beats(best)) {
        best = part[i];
        any_valid = true;
      }
    }
  }
  if (!any_valid)
    throw std::runtime_error(
        "grid_search: rank correlation undefined on every candidate (degenerate database)");
  LossSpec spec;
  spec.transform = static_cast<TransformId>(best.transform);
  spec.weights = best.weights;
  return spec;
}

struct CalibrationResult {
  std::vector<LossSpec> per_split_specs;
  std::vector<double> per_split_srocc;  // |SROCC| on each held-out database
  LossSpec final_spec;
  double mean_test_srocc = 0.0;
};

// Component-wise median of the split weights sharing one transform,
// normalized to sum 1.
inline LossSpec finalize(const std::vector<LossSpec>& per_split_specs) {
  if (per_split_specs.empty()) throw std::invalid_argument("finalize: no specs");
  for (const LossSpec& s : per_split_specs)
    if (s.transform != per_split_specs[0].transform)
      throw std::runtime_error(
          std::string("finalize: splits disagree on transform (") +
          transform_name(per_split_specs[0].transform) + " vs " + transform_name(s.transform) +
          ")");
  LossSpec out;
  out.transform = per_split_specs[0].transform;
  std::vector<double> column(per_split_specs.size());
  for (size_t i = 0; i < 6; ++i) {
    for (size_t s = 0; s < per_split_specs.size(); ++s)
      column[s] = per_split_specs[s].weights[i];
    std::sort(column.begin(), column.end());
    const size_t n = column.size();
    out.weights[i] = (n % 2 == 1) ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
  }
  const double sum = out.weight_sum();
  if (sum <= 0.0) throw std::runtime_error("finalize: median weights sum to zero");
  for (double& w : out.weights) w /= sum;
  return out;
}

// Leave-one-out cross-validation over the databases: each split searches on
// the remaining k-1 and records |SROCC| on the held-out one.
inline CalibrationResult cross_validate(const std::vector<Database>& databases,
                                        const GridSearchOptions& opts = {}) {
  if (databases.size() < 2) throw std::invalid_argument("cross_validate: needs k >= 2 databases");
  CalibrationResult result;
  for (size_t held = 0; held < databases.size(); ++held) {
    std::vector<Database> training;
    for (size_t i = 0; i < databases.size(); ++i)
      if (i != held) training.push_back(databases[i]);
    const LossSpec spec = grid_search(training, opts);

    std::vector<double> combined, scores;
    for (const QualityRecord& r : databases[held]) {
      combined.push_back(combined_loss(spec, r.losses));
      scores.push_back(r.subjective_score);
    }
    const std::optional<double> rho = srocc(combined, scores);
    if (!rho.has_value())
      throw std::runtime_error("cross_validate: test correlation undefined on held-out split " +
                               std::to_string(held));
    result.per_split_specs.push_back(spec);
    result.per_split_srocc.push_back(std::abs(*rho));
  }
  result.final_spec = finalize(result.per_split_specs);
  double total = 0.0;
  for (double v : result.per_split_srocc) total += v;
  result.mean_test_srocc = total / static_cast<double>(result.per_split_srocc.size());
  return result;
}

// --------------------------------------------------------------------------
// CSV interchange
// --------------------------------------------------------------------------

inline const char* kQualityRecordHeader = "sequence_id,l1,l2,grad,feat,ssim_loss,msssim_loss,score";

inline void write_quality_records(const std::string& path, const Database& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kQualityRecordHeader << "\n";
  for (const QualityRecord& r : records) {
    out << r.sequence_id;
    for (int i = 0; i < 6; ++i) out << "," << format_double(r.losses.component(i));
    out << "," << format_double(r.subjective_score) << "\n";
  }
}

inline Database read_quality_records(const std::string& path) {
  const std::vector<std::string> lines = read_lines(path);
  if (lines.empty() || trim(lines[0]) != kQualityRecordHeader)
    throw std::invalid_argument(path + ": missing quality-record header");
  Database records;
  for (size_t li = 1; li < lines.size(); ++li) {
    if (trim(lines[li]).empty()) continue;
    const std::vector<std::string> f = split(lines[li], ',');
    if (f.size() != 8)
      throw std::invalid_argument(path + ": line " + std::to_string(li + 1) + ": want 8 fields");
    QualityRecord r;
    r.sequence_id = f[0];
    double* slots[6] = {&r.losses.l1,   &r.losses.l2,        &r.losses.grad,
                        &r.losses.feat, &r.losses.ssim_loss, &r.losses.msssim_loss};
    for (int i = 0; i < 6; ++i) {
      *slots[i] = parse_double(f[static_cast<size_t>(i + 1)], path);
      if (*slots[i] < 0.0 || *slots[i] > 1.0 || !std::isfinite(*slots[i]))
        throw std::invalid_argument(path + ": loss component outside [0,1] on line " +
                                    std::to_string(li + 1));
    }
    r.subjective_score = parse_double(f[7], path);
    records.push_back(r);
  }
  return records;
}

inline void write_calibration_csv(const std::string& path, const CalibrationResult& cr) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "split,transform,a1,a2,a3,a4,a5,a6,test_srocc\n";
  for (size_t s = 0; s < cr.per_split_specs.size(); ++s) {
    out << s << "," << transform_name(cr.per_split_specs[s].transform);
    for (double w : cr.per_split_specs[s].weights) out << "," << format_double(w);
    out << "," << format_double(cr.per_split_srocc[s]) << "\n";
  }
  out << "final," << transform_name(cr.final_spec.transform);
  for (double w : cr.final_spec.weights) out << "," << format_double(w);
  out << "," << format_double(cr.mean_test_srocc) << "\n";
}

inline std::string calibration_summary(const CalibrationResult& cr) {
  std::ostringstream os;
  os << "Cross-validation over " << cr.per_split_specs.size() << " splits\n";
  for (size_t s = 0; s < cr.per_split_specs.size(); ++s) {
    os << "  split " << s << ": transform=" << transform_name(cr.per_split_specs[s].transform)
       << " weights=(";
    for (size_t i = 0; i < 6; ++i)
      os << (i ? "," : "") << cr.per_split_specs[s].weights[i];
    os << ") test |SROCC|=" << cr.per_split_srocc[s] << "\n";
  }
  os << "  final: transform=" << transform_name(cr.final_spec.transform) << " weights=(";
  for (size_t i = 0; i < 6; ++i) os << (i ? "," : "") << cr.final_spec.weights[i];
  os << ")\n  mean test |SROCC|=" << cr.mean_test_srocc << "\n";
  return os.str();
}

}  // namespace cvegan
