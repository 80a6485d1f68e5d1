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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "cvegan/losscal.hpp"

using namespace cvegan;

namespace {

// Fast options for unit tests; the full 0.1 grid runs in the acceptance suite.
GridSearchOptions unit_opts() {
  GridSearchOptions o;
  o.step = 0.25;
  o.threads = 1;
  return o;
}

QualityRecord make_record(const std::string& id, std::array<double, 6> losses, double score) {
  QualityRecord r;
  r.sequence_id = id;
  r.losses.l1 = losses[0];
  r.losses.l2 = losses[1];
  r.losses.grad = losses[2];
  r.losses.feat = losses[3];
  r.losses.ssim_loss = losses[4];
  r.losses.msssim_loss = losses[5];
  r.subjective_score = score;
  return r;
}

// Database whose scores depend on exactly one loss component through a
// monotone map; the other components carry seeded noise.
Database signal_db(uint64_t seed, int n, int signal, std::function<double(double)> score_of,
                   bool noisy_others = true) {
  Rng rng(seed);
  Database db;
  for (int i = 0; i < n; ++i) {
    std::array<double, 6> l{};
    for (int c = 0; c < 6; ++c)
      l[static_cast<size_t>(c)] = noisy_others ? rng.uniform(0.05, 0.95) : 0.4;
    l[static_cast<size_t>(signal)] = 0.05 + 0.9 * (i + rng.uniform(0.0, 0.5)) / n;
    db.push_back(make_record("seq" + std::to_string(i), l,
                             score_of(l[static_cast<size_t>(signal)])));
  }
  return db;
}

}  // namespace

TEST_CASE("elementary transforms") {
  CHECK(transform_apply(TransformId::kLog, 1.0) == 0.0);
  CHECK(transform_apply(TransformId::kIdentity, 0.37) == 0.37);
  CHECK(transform_apply(TransformId::kLog, std::exp(-1.0)) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(transform_apply(TransformId::kSquare, 0.5) == doctest::Approx(0.25));
  CHECK(transform_apply(TransformId::kSqrt, 0.25) == doctest::Approx(0.5));
  CHECK(transform_apply(TransformId::kExpm1, 0.0) == 0.0);
  CHECK(transform_apply(TransformId::kExpm1, 1.0) == doctest::Approx(1.0));
  CHECK(transform_apply(TransformId::kSinHalfPi, 1.0) == doctest::Approx(1.0));
  CHECK(transform_apply(TransformId::kArcsin, 1.0) == doctest::Approx(1.5707963267948966));
  CHECK(transform_apply(TransformId::kTanh, 0.5) == doctest::Approx(std::tanh(0.5)));
  CHECK(transform_apply(TransformId::kArsinh, 0.5) == doctest::Approx(std::asinh(0.5)));
  CHECK(transform_apply(TransformId::kLog, 0.0) == doctest::Approx(std::log(1e-8)));
  CHECK_THROWS_AS(transform_apply(static_cast<TransformId>(99), 0.5), std::invalid_argument);
  CHECK_THROWS_AS(transform_from_name("nope"), std::invalid_argument);
  for (TransformId t : all_transforms())
    CHECK(transform_from_name(transform_name(t)) == t);
}

TEST_CASE("every transform is monotone increasing on [0,1]") {
  for (TransformId t : all_transforms()) {
    double prev = transform_apply(t, 0.001);
    for (double v = 0.05; v <= 1.0; v += 0.05) {
      const double cur = transform_apply(t, v);
      CHECK(cur > prev);
      prev = cur;
    }
  }
}

TEST_CASE("combined loss") {
  LossVector lv;
  lv.msssim_loss = std::exp(-1.0);
  LossSpec only_last{TransformId::kLog, {0, 0, 0, 0, 0, 1}};
  CHECK(combined_loss(only_last, lv) == doctest::Approx(-1.0).epsilon(1e-12));

  LossVector lv2;
  lv2.l1 = 0.2;
  LossSpec only_first{TransformId::kIdentity, {1, 0, 0, 0, 0, 0}};
  CHECK(combined_loss(only_first, lv2) == doctest::Approx(0.2));

  LossVector all_e;
  all_e.l1 = all_e.l2 = all_e.grad = all_e.feat = all_e.ssim_loss = all_e.msssim_loss =
      std::exp(-1.0);
  CHECK(combined_loss(perceptual_loss_spec(), all_e) == doctest::Approx(-1.0).epsilon(1e-12));

  // Strictly increasing in each component under the log transform.
  LossSpec spec = perceptual_loss_spec();
  LossVector base;
  base.l1 = base.l2 = base.grad = base.feat = base.ssim_loss = base.msssim_loss = 0.3;
  const double v0 = combined_loss(spec, base);
  for (int i : {0, 1, 4, 5}) {  // components with positive weight
    LossVector up = base;
    switch (i) {
      case 0: up.l1 = 0.5; break;
      case 1: up.l2 = 0.5; break;
      case 4: up.ssim_loss = 0.5; break;
      case 5: up.msssim_loss = 0.5; break;
    }
    CHECK(combined_loss(spec, up) > v0);
  }
}

TEST_CASE("perceptual loss: clamp floor, composition, global minimum") {
  Rng rng(1);
  Tensor a = rng.uniform_tensor({1, 96, 96, 3}, 0.1, 0.9);
  CHECK(perceptual_loss(a, a) == doctest::Approx(std::log(1e-8)).epsilon(1e-12));

  Tensor b = a;
  for (int64_t i = 0; i < b.numel(); ++i) b[i] = std::clamp(b[i] + 0.08 * rng.normal(), 0.0, 1.0);
  const LossVector lv = compute_loss_vector(a, b, identity_extractor());
  CHECK(perceptual_loss(a, b) ==
        doctest::Approx(combined_loss(perceptual_loss_spec(), lv)).epsilon(1e-9));

  for (uint64_t seed = 5; seed < 8; ++seed) {
    Rng r2(seed);
    Tensor c = r2.uniform_tensor({1, 96, 96, 3}, 0.0, 1.0);
    CHECK(perceptual_loss(a, a) < perceptual_loss(a, c));
  }
}

TEST_CASE("grid search recovers a pure-component oracle") {
  // Scores are an exact decreasing function of the MS-SSIM loss; the other
  // five components are noise the search must reject.
  Database db = signal_db(11, 14, 5, [](double v) { return 1.0 - v; });
  const LossSpec spec = grid_search({db}, unit_opts());
  CHECK(spec.transform == TransformId::kIdentity);
  const std::array<double, 6> expect{0, 0, 0, 0, 0, 1};
  CHECK(spec.weights == expect);

  std::vector<double> combined, scores;
  for (const QualityRecord& r : db) {
    combined.push_back(combined_loss(spec, r.losses));
    scores.push_back(r.subjective_score);
  }
  CHECK(std::abs(srocc(combined, scores).value()) == doctest::Approx(1.0));
}

TEST_CASE("grid search rejects degenerate databases") {
  Database single = {make_record("only", {0.1, 0.2, 0.3, 0.4, 0.5, 0.6}, 3.0)};
  CHECK_THROWS_AS(grid_search({single}, unit_opts()), std::runtime_error);
  CHECK_THROWS_AS(grid_search({}, unit_opts()), std::invalid_argument);
  CHECK_THROWS_AS(grid_search({Database{}}, unit_opts()), std::invalid_argument);
  GridSearchOptions bad = unit_opts();
  bad.step = 0.3;
  Database ok = signal_db(1, 6, 0, [](double v) { return v; });
  CHECK_THROWS_AS(grid_search({ok}, bad), std::invalid_argument);
}

TEST_CASE("grid search: two databases tied to l1 via different monotone maps") {
  // Increasing map on one database, decreasing on the other; the rank
  // correlation magnitude is blind to the polarity.
  Database db1 = signal_db(21, 12, 0, [](double v) { return std::exp(2.0 * v); }, false);
  Database db2 = signal_db(22, 12, 0, [](double v) { return 1.0 / (v + 0.5); }, false);
  const LossSpec spec = grid_search({db1, db2}, unit_opts());
  CHECK(spec.transform == TransformId::kIdentity);
  const std::array<double, 6> expect{0.25, 0, 0, 0, 0, 1};
  CHECK(spec.weights == expect);

  for (const Database* db : {&db1, &db2}) {
    std::vector<double> combined, scores;
    for (const QualityRecord& r : *db) {
      combined.push_back(combined_loss(spec, r.losses));
      scores.push_back(r.subjective_score);
    }
    CHECK(std::abs(srocc(combined, scores).value()) == doctest::Approx(1.0));
  }
}

TEST_CASE("grid search is deterministic") {
  Database db1 = signal_db(31, 10, 2, [](double v) { return 5.0 - 2.0 * v; });
  Database db2 = signal_db(32, 10, 2, [](double v) { return v * v + 1.0; });
  const LossSpec s1 = grid_search({db1, db2}, unit_opts());
  const LossSpec s2 = grid_search({db1, db2}, unit_opts());
  CHECK(s1.transform == s2.transform);
  CHECK(s1.weights == s2.weights);
}

TEST_CASE("srocc of a combined loss is invariant to weight rescaling") {
  Database db = signal_db(41, 15, 1, [](double v) { return 2.0 - v; });
  LossSpec spec{TransformId::kLog, {0.2, 0.4, 0.0, 0.1, 0.0, 1.0}};
  LossSpec scaled = spec;
  for (double& w : scaled.weights) w *= 3.7;
  std::vector<double> c1, c2, scores;
  for (const QualityRecord& r : db) {
    c1.push_back(combined_loss(spec, r.losses));
    c2.push_back(combined_loss(scaled, r.losses));
    scores.push_back(r.subjective_score);
  }
  CHECK(srocc(c1, scores).value() == doctest::Approx(srocc(c2, scores).value()).epsilon(1e-12));
}

TEST_CASE("cross validation: identical databases give identical splits") {
  Database db = signal_db(51, 12, 5, [](double v) { return 4.0 - 3.0 * v; });
  const CalibrationResult cr = cross_validate({db, db, db}, unit_opts());
  REQUIRE(cr.per_split_specs.size() == 3);
  for (const LossSpec& s : cr.per_split_specs) {
    CHECK(s.transform == cr.per_split_specs[0].transform);
    CHECK(s.weights == cr.per_split_specs[0].weights);
  }
  CHECK(cr.mean_test_srocc == doctest::Approx(1.0));
  CHECK(cr.final_spec.weight_sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cross validation matches an independent per-split re-run") {
  // Non-signal components are constant so every split agrees on the
  // transform; disagreement is exercised separately below.
  std::vector<Database> dbs = {
      signal_db(61, 9, 2, [](double v) { return 1.0 - v * v; }, false),
      signal_db(62, 11, 2, [](double v) { return std::exp(-v); }, false),
      signal_db(63, 10, 2, [](double v) { return 10.0 - 4.0 * v; }, false),
  };
  const CalibrationResult cr = cross_validate(dbs, unit_opts());
  REQUIRE(cr.per_split_specs.size() == 3);

  for (size_t held = 0; held < 3; ++held) {
    std::vector<Database> training;
    for (size_t i = 0; i < 3; ++i)
      if (i != held) training.push_back(dbs[i]);
    const LossSpec again = grid_search(training, unit_opts());
    CHECK(again.transform == cr.per_split_specs[held].transform);
    CHECK(again.weights == cr.per_split_specs[held].weights);

    std::vector<double> combined, scores;
    for (const QualityRecord& r : dbs[held]) {
      combined.push_back(combined_loss(again, r.losses));
      scores.push_back(r.subjective_score);
    }
    CHECK(cr.per_split_srocc[held] ==
          doctest::Approx(std::abs(srocc(combined, scores).value())).epsilon(1e-12));
  }
}

TEST_CASE("cross validation requires at least two databases") {
  Database db = signal_db(71, 8, 0, [](double v) { return v; });
  CHECK_THROWS_AS(cross_validate({db}, unit_opts()), std::invalid_argument);
}

TEST_CASE("cross validation surfaces transform disagreement instead of voting") {
  // Noise rides on every non-signal component (including the pinned a6 term),
  // so split winners differ and finalize must refuse.
  std::vector<Database> dbs = {
      signal_db(61, 9, 3, [](double v) { return 1.0 - v * v; }),
      signal_db(62, 11, 3, [](double v) { return std::exp(-v); }),
      signal_db(63, 10, 3, [](double v) { return 10.0 - 4.0 * v; }),
  };
  CHECK_THROWS_WITH_AS(cross_validate(dbs, unit_opts()),
                       doctest::Contains("splits disagree on transform"), std::runtime_error);
}

TEST_CASE("finalize: median then normalize") {
  LossSpec s{TransformId::kLog, {0.6, 0.2, 0, 0, 0.4, 0.8}};
  const LossSpec f = finalize({s, s, s});
  CHECK(f.transform == TransformId::kLog);
  CHECK(f.weights[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(f.weights[1] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(f.weights[2] == 0.0);
  CHECK(f.weights[3] == 0.0);
  CHECK(f.weights[4] == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(f.weights[5] == doctest::Approx(0.4).epsilon(1e-12));

  LossSpec unit{TransformId::kTanh, {0.5, 0.1, 0.1, 0.1, 0.1, 0.1}};
  const LossSpec f1 = finalize({unit});
  for (size_t i = 0; i < 6; ++i) CHECK(f1.weights[i] == doctest::Approx(unit.weights[i]));

  // Three differing splits against a hand-rolled median.
  std::vector<LossSpec> specs = {
      {TransformId::kLog, {0.1, 0.0, 0.5, 0.2, 0.0, 1.0}},
      {TransformId::kLog, {0.3, 0.0, 0.1, 0.6, 0.0, 1.0}},
      {TransformId::kLog, {0.2, 0.0, 0.9, 0.4, 0.0, 1.0}},
  };
  const LossSpec f3 = finalize(specs);
  std::array<double, 6> med{};
  for (size_t i = 0; i < 6; ++i) {
    std::array<double, 3> col{specs[0].weights[i], specs[1].weights[i], specs[2].weights[i]};
    std::sort(col.begin(), col.end());
    med[i] = col[1];
  }
  double sum = 0.0;
  for (double m : med) sum += m;
  for (size_t i = 0; i < 6; ++i) CHECK(f3.weights[i] == doctest::Approx(med[i] / sum).epsilon(1e-12));
  CHECK(f3.weight_sum() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(f3.weights[1] == 0.0);
  CHECK(f3.weights[4] == 0.0);

  std::vector<LossSpec> mixed = {{TransformId::kLog, {1, 0, 0, 0, 0, 1}},
                                 {TransformId::kTanh, {1, 0, 0, 0, 0, 1}}};
  CHECK_THROWS_AS(finalize(mixed), std::runtime_error);
  CHECK_THROWS_AS(finalize({}), std::invalid_argument);
}

TEST_CASE("quality record CSV round trip") {
  Database db = signal_db(81, 7, 4, [](double v) { return 3.0 * v + 0.25; });
  const std::string path = "losscal_roundtrip_test.csv";
  write_quality_records(path, db);
  const Database back = read_quality_records(path);
  REQUIRE(back.size() == db.size());
  for (size_t i = 0; i < db.size(); ++i) {
    CHECK(back[i].sequence_id == db[i].sequence_id);
    for (int c = 0; c < 6; ++c) CHECK(back[i].losses.component(c) == db[i].losses.component(c));
    CHECK(back[i].subjective_score == db[i].subjective_score);
  }
  std::remove(path.c_str());

  const std::string bad = "losscal_bad_test.csv";
  {
    std::ofstream out(bad);
    out << "wrong,header\n";
  }
  CHECK_THROWS_AS(read_quality_records(bad), std::invalid_argument);
  {
    std::ofstream out(bad);
    out << kQualityRecordHeader << "\nseq,0.1,0.2,0.3,0.4,1.5,0.6,2.0\n";
  }
  CHECK_THROWS_AS(read_quality_records(bad), std::invalid_argument);
  std::remove(bad.c_str());
}

TEST_CASE("calibration CSV and summary") {
  Database db = signal_db(91, 10, 5, [](double v) { return 2.0 - v; });
  const CalibrationResult cr = cross_validate({db, db}, unit_opts());
  const std::string path = "calibration_test.csv";
  write_calibration_csv(path, cr);
  const std::vector<std::string> lines = read_lines(path);
  REQUIRE(lines.size() == 4);  // header + 2 splits + final
  CHECK(lines[0] == "split,transform,a1,a2,a3,a4,a5,a6,test_srocc");
  CHECK(split(lines[3], ',')[0] == "final");
  std::remove(path.c_str());
  CHECK(calibration_summary(cr).find("mean test |SROCC|") != std::string::npos);
}
