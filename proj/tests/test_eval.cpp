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

#include <filesystem>

#include "cvegan/eval.hpp"

using namespace cvegan;

namespace {

RDCurve curve(std::vector<RDPoint> pts, const std::string& metric = "psnr") {
  RDCurve c;
  c.points = std::move(pts);
  c.metric_id = metric;
  return c;
}

// Independent oracle: Lagrange interpolation of log10(rate) through the four
// points, integrated by a dense trapezoid rule.
double bd_oracle(const RDCurve& anchor, const RDCurve& test) {
  auto lagrange = [](const RDCurve& c, double q) {
    double s = 0.0;
    for (size_t i = 0; i < c.points.size(); ++i) {
      double term = std::log10(c.points[i].bitrate_kbps);
      for (size_t j = 0; j < c.points.size(); ++j) {
        if (i == j) continue;
        term *= (q - c.points[j].quality) / (c.points[i].quality - c.points[j].quality);
      }
      s += term;
    }
    return s;
  };
  const double lo = std::max(anchor.min_quality(), test.min_quality());
  const double hi = std::min(anchor.max_quality(), test.max_quality());
  const int n = 20000;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double q = lo + (hi - lo) * i / n;
    const double v = lagrange(test, q) - lagrange(anchor, q);
    acc += (i == 0 || i == n) ? 0.5 * v : v;
  }
  const double avg = acc / n;
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

PlanarFrame textured_frame(int64_t w, int64_t h, uint64_t seed) {
  Rng rng(seed);
  PlanarFrame f = PlanarFrame::make(w, h, 8, ChromaFormat::k420);
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double base =
          0.5 + 0.25 * std::sin(6.2832 * fx * x / w) + 0.2 * std::cos(6.2832 * fy * y / h);
      f.y[static_cast<size_t>(y * w + x)] = static_cast<uint16_t>(
          std::llround(std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0) * 255.0));
    }
  for (int64_t i = 0; i < f.chroma_width() * f.chroma_height(); ++i) {
    f.cb[static_cast<size_t>(i)] =
        static_cast<uint16_t>(std::llround(255.0 * (0.5 + 0.1 * rng.normal())));
    f.cr[static_cast<size_t>(i)] =
        static_cast<uint16_t>(std::llround(255.0 * (0.5 + 0.1 * rng.normal())));
  }
  return f;
}

// Band-limited content survives the 2x resolution round trip well, keeping
// the SRA and anchor quality ranges overlapped.
PlanarFrame smooth_frame(int64_t w, int64_t h, uint64_t seed) {
  Rng rng(seed);
  PlanarFrame f = PlanarFrame::make(w, h, 8, ChromaFormat::k420);
  const double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5), ph = rng.uniform(0.0, 6.28);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double v = 0.5 + 0.3 * std::sin(6.2832 * fx * x / w + ph) *
                                 std::cos(6.2832 * fy * y / h);
      f.y[static_cast<size_t>(y * w + x)] =
          static_cast<uint16_t>(std::llround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  for (int64_t i = 0; i < f.chroma_width() * f.chroma_height(); ++i) {
    f.cb[static_cast<size_t>(i)] = 128;
    f.cr[static_cast<size_t>(i)] = 120;
  }
  return f;
}

NetConfig tiny_net() {
  NetConfig cfg;
  cfg.width = 8;
  cfg.num_mul2res = 1;
  cfg.ecbam_reduction = 2;
  cfg.nonlocal_pool = 8;
  cfg.feature_dim = 16;
  cfg.disc_width = 4;
  cfg.disc_input = 96;
  cfg.seed = 13;
  return cfg;
}

const RDCurve kAnchor4 = curve({{100, 30}, {200, 33}, {400, 36}, {800, 39}});
const RDCurve kTest4 = curve({{120, 30.5}, {230, 33.2}, {430, 36.1}, {900, 39.3}});

}  // namespace

TEST_CASE("bd-rate identities") {
  CHECK(bd_rate(kAnchor4, kAnchor4) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(bd_rate(kAnchor4, kAnchor4, BdFitMethod::kPiecewiseCubic) ==
        doctest::Approx(0.0).epsilon(1e-12));

  RDCurve half = kAnchor4;
  for (RDPoint& p : half.points) p.bitrate_kbps *= 0.5;
  CHECK(bd_rate(kAnchor4, half) == doctest::Approx(-50.0).epsilon(1e-9));
  CHECK(bd_rate(kAnchor4, half, BdFitMethod::kPiecewiseCubic) ==
        doctest::Approx(-50.0).epsilon(1e-9));
}

TEST_CASE("bd-rate matches the dense-integration oracle on the 4-point case") {
  const double got = bd_rate(kAnchor4, kTest4);
  const double want = bd_oracle(kAnchor4, kTest4);
  CHECK(got == doctest::Approx(want).epsilon(1e-6));

  // +1 dB at every rate point: a pure coding gain.
  RDCurve plus1 = kAnchor4;
  for (RDPoint& p : plus1.points) p.quality += 1.0;
  const double gain = bd_rate(kAnchor4, plus1);
  CHECK(gain < 0.0);
  CHECK(gain == doctest::Approx(bd_oracle(kAnchor4, plus1)).epsilon(1e-6));

  // The piecewise variant agrees on sign and rough magnitude.
  const double pw = bd_rate(kAnchor4, kTest4, BdFitMethod::kPiecewiseCubic);
  CHECK(std::isfinite(pw));
  CHECK(std::abs(pw - got) < 5.0);
}

TEST_CASE("bd-rate invariances and sign") {
  RDCurve a = kAnchor4, t = kTest4;
  const double base = bd_rate(a, t);
  for (RDPoint& p : a.points) p.bitrate_kbps *= 3.7;
  for (RDPoint& p : t.points) p.bitrate_kbps *= 3.7;
  CHECK(bd_rate(a, t) == doctest::Approx(base).epsilon(1e-9));

  // Strictly cheaper at every quality means a negative delta.
  RDCurve cheaper = kAnchor4;
  for (RDPoint& p : cheaper.points) p.bitrate_kbps *= 0.8;
  CHECK(bd_rate(kAnchor4, cheaper) < 0.0);
}

TEST_CASE("bd-rate rejects malformed curves") {
  CHECK_THROWS_AS(bd_rate(curve({{100, 30}, {200, 33}, {400, 36}}), kAnchor4),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      bd_rate(kAnchor4, curve({{100, 50}, {200, 53}, {400, 56}, {800, 59}})),
      std::invalid_argument);
  CHECK_THROWS_AS(bd_rate(curve({{100, 30}, {90, 33}, {400, 36}, {800, 39}}), kAnchor4),
                  std::invalid_argument);

  RDCurve dips = curve({{100, 30}, {200, 29}, {400, 36}, {800, 39}});
  CHECK(!dips.quality_monotone());
  CHECK(kAnchor4.quality_monotone());
  CHECK_NOTHROW(dips.validate());
}

TEST_CASE("evaluate_tool: identity generator gives zero bd-rate") {
  NetConfig net = tiny_net();
  Cvenet identity_gen(net);  // zero-tail identity

  EvalConfig cfg;
  cfg.sequences.push_back({"seq0", {textured_frame(96, 64, 1), textured_frame(96, 64, 2)}, 25.0});
  cfg.generator = &identity_gen;
  const EvalReport report = evaluate_tool(cfg);
  CHECK(report.exit_code == 0);
  REQUIRE(report.sequences.size() == 1);
  const SequenceEval& se = report.sequences[0];
  REQUIRE(se.error.empty());
  REQUIRE(se.anchor.size() == 4);
  REQUIRE(se.enhanced.size() == 4);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(se.enhanced[i].psnr_db == doctest::Approx(se.anchor[i].psnr_db).epsilon(1e-12));
    CHECK(se.enhanced[i].bitrate_kbps == se.anchor[i].bitrate_kbps);
  }
  for (const auto& [metric, bd] : se.bd) CHECK(std::abs(bd) < 1e-9);

  // Anchor quality and rate are monotone in QP.
  for (size_t i = 1; i < 4; ++i) {
    CHECK(se.anchor[i].psnr_db < se.anchor[i - 1].psnr_db);
    CHECK(se.anchor[i].bitrate_kbps < se.anchor[i - 1].bitrate_kbps);
  }

  const std::string dir = "eval_csv_test";
  std::filesystem::create_directories(dir);
  write_eval_csv(dir + "/points.csv", report);
  write_bd_summary_csv(dir + "/bd.csv", report);
  const auto lines = read_lines(dir + "/points.csv");
  CHECK(lines[0] == "sequence,tool,qp,bitrate_kbps,psnr,ssim,msssim,external_metric");
  CHECK(lines.size() == 1 + 8);  // 4 anchor + 4 enhanced rows
  CHECK(lines[1].rfind("seq0,anchor,", 0) == 0);
  CHECK(lines[5].rfind("seq0,pp,", 0) == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate_tool: sra arm runs and failures are carried per sequence") {
  NetConfig net = tiny_net();
  Cvenet identity_gen(net);

  EvalConfig cfg;
  cfg.tool = "sra";
  cfg.sequences.push_back({"good", {smooth_frame(96, 64, 3)}, 30.0});
  cfg.sequences.push_back({"empty", {}, 30.0});
  cfg.generator = &identity_gen;
  const EvalReport report = evaluate_tool(cfg);
  CHECK(report.exit_code == 2);
  REQUIRE(report.sequences.size() == 2);
  CHECK(report.sequences[0].error.empty());
  CHECK(report.sequences[0].enhanced.size() == 4);
  CHECK(report.sequences[0].bd.size() == 3);
  // SRA codes at half resolution, so the enhanced arm spends fewer bits.
  for (size_t i = 0; i < 4; ++i)
    CHECK(report.sequences[0].enhanced[i].bitrate_kbps <
          report.sequences[0].anchor[i].bitrate_kbps);
  CHECK(!report.sequences[1].error.empty());

  const std::string path = "eval_bd_err_test.csv";
  write_bd_summary_csv(path, report);
  const auto lines = read_lines(path);
  bool has_error_row = false;
  for (const std::string& l : lines)
    if (l.rfind("empty,", 0) == 0 && l.find("no frames") != std::string::npos)
      has_error_row = true;
  CHECK(has_error_row);
  std::filesystem::remove(path);
}

TEST_CASE("evaluate_tool: missing generator is a per-sequence error") {
  EvalConfig cfg;
  cfg.sequences.push_back({"seq0", {textured_frame(96, 64, 4)}, 25.0});
  const EvalReport report = evaluate_tool(cfg);
  CHECK(report.exit_code == 2);
  REQUIRE(report.sequences.size() == 1);
  CHECK(report.sequences[0].error.find("generator") != std::string::npos);

  EvalConfig bad;
  CHECK(evaluate_tool(bad).exit_code == 1);
}

TEST_CASE("external metric adapter parses command output and never fabricates") {
  const std::string work = "metric_ext_test";
  std::filesystem::create_directories(work);
  std::vector<PlanarFrame> ref = {textured_frame(32, 16, 5)};
  std::vector<PlanarFrame> dis = {textured_frame(32, 16, 6)};
  const double v = detail::run_external_metric("echo 42.25", work, ref, dis);
  CHECK(v == doctest::Approx(42.25));
  CHECK_THROWS_AS(detail::run_external_metric("false", work, ref, dis), std::runtime_error);
  std::filesystem::remove_all(work);

  // Without an external command, the field stays unset.
  NetConfig net = tiny_net();
  Cvenet identity_gen(net);
  EvalConfig cfg;
  cfg.sequences.push_back({"seq0", {textured_frame(96, 64, 7)}, 25.0});
  cfg.generator = &identity_gen;
  cfg.qps = {22, 27, 32, 37};
  const EvalReport report = evaluate_tool(cfg);
  for (const RatePoint& p : report.sequences[0].anchor) CHECK(!p.external.has_value());
}

TEST_CASE("complexity ledger ratios") {
  Rng rng(1);
  std::vector<ComplexityModel> models;
  // Pure-conv stubs: doubling the width quadruples the weight count.
  auto conv_stub = [&rng](const std::string& name, int64_t c) {
    Conv a = Conv::make(rng, 3, c, c);
    Conv b = Conv::make(rng, 3, c, c);
    const int64_t params = a.w.numel() + a.b.numel() + b.w.numel() + b.b.numel();
    auto fwd = [c]() {
      volatile double sink = static_cast<double>(c);
      (void)sink;
    };
    return ComplexityModel{name, params, fwd};
  };
  models.push_back(conv_stub("base", 8));
  models.push_back(conv_stub("base_again", 8));
  models.push_back(conv_stub("double", 16));
  const std::vector<ComplexityEntry> table = complexity_ledger(models, 1);
  REQUIRE(table.size() == 3);
  CHECK(table[0].param_ratio == doctest::Approx(1.0));
  CHECK(table[1].param_ratio == doctest::Approx(1.0));
  CHECK(table[2].param_ratio == doctest::Approx(4.0).epsilon(0.05));

  CHECK(complexity_ledger({}).empty());

  const std::string text = format_complexity_table(table);
  CHECK(text.find("model,params,forward_ms,param_ratio,time_ratio") != std::string::npos);
  CHECK(text.find("double") != std::string::npos);
}
