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

#include <chrono>
#include <optional>

#include "cvegan/bdrate.hpp"
#include "cvegan/pipeline.hpp"

namespace cvegan {

// Rate-distortion evaluation over the QP ladder: the anchor runs the codec
// alone, the enhanced arm adds the PP or SRA module, and both arms are
// scored against the pristine source. Per-sequence failures are carried in
// the report instead of aborting the batch.

struct SequenceSpec {
  std::string name;
  std::vector<PlanarFrame> frames;
  double fps = 25.0;
};

struct EvalConfig {
  std::vector<SequenceSpec> sequences;
  CodecAdapter adapter;
  std::vector<int> qps = {22, 27, 32, 37};
  std::string tool = "pp";  // "pp" or "sra"
  const Cvenet* generator = nullptr;
  // Optional external metric command; placeholders {reference} {distorted}
  // {width} {height} {bitdepth} {frames}; must print one number on stdout.
  std::string external_metric_cmd;
  std::string work_dir = "/tmp";
  BdFitMethod fit = BdFitMethod::kCubic;
};

struct RatePoint {
  int qp = 0;
  double bitrate_kbps = 0.0;
  double psnr_db = 0.0;
  double ssim_value = 0.0;
  double msssim_value = 0.0;
  std::optional<double> external;  // never fabricated; set only by the adapter
};

struct SequenceEval {
  std::string name;
  std::string error;  // non-empty means this sequence failed
  std::vector<RatePoint> anchor;
  std::vector<RatePoint> enhanced;
  std::vector<std::pair<std::string, double>> bd;  // metric -> BD-rate percent
};

struct EvalReport {
  std::string tool;
  std::vector<SequenceEval> sequences;
  int exit_code = 0;  // 0 success, 1 config error, 2 partial failures
};

// Largest MS-SSIM scale count (up to 4) the geometry supports.
inline int msssim_scales_for(int64_t min_dim) {
  int scales = 0;
  while (scales < 4 && (11LL << scales) <= min_dim) ++scales;
  return scales;
}

namespace detail {

inline double run_external_metric(const std::string& cmd_template, const std::string& work_dir,
                                  const std::vector<PlanarFrame>& reference,
                                  const std::vector<PlanarFrame>& distorted) {
  namespace fs = std::filesystem;
  static int counter = 0;
  const std::string stem =
      (fs::path(work_dir) / ("cvegan_metric_" + std::to_string(++counter))).string();
  const std::string ref = stem + "_ref.yuv";
  const std::string dis = stem + "_dis.yuv";
  const std::string out = stem + "_out.txt";
  write_yuv(ref, reference);
  write_yuv(dis, distorted);
  const std::string cmd = fill_template(
      cmd_template, {{"{reference}", ref},
                     {"{distorted}", dis},
                     {"{width}", std::to_string(reference[0].width)},
                     {"{height}", std::to_string(reference[0].height)},
                     {"{bitdepth}", std::to_string(reference[0].bit_depth)},
                     {"{frames}", std::to_string(reference.size())}});
  run_command(cmd, out, "external metric");
  const std::vector<std::string> lines = read_lines(out);
  for (const std::string& line : lines)
    if (!trim(line).empty()) {
      const double v = parse_double(trim(line), "external metric output");
      for (const std::string& p : {ref, dis, out}) fs::remove(p);
      return v;
    }
  throw std::runtime_error("external metric produced no output");
}

inline RatePoint score_point(int qp, double bitrate, const std::vector<PlanarFrame>& source,
                             const std::vector<PlanarFrame>& result, const EvalConfig& cfg) {
  RatePoint pt;
  pt.qp = qp;
  pt.bitrate_kbps = bitrate;
  double psnr_sum = 0.0, ssim_sum = 0.0, ms_sum = 0.0;
  const int scales = msssim_scales_for(std::min(source[0].width, source[0].height));
  for (size_t i = 0; i < source.size(); ++i) {
    psnr_sum += psnr(source[i], result[i]);
    ssim_sum += frame_ssim(source[i], result[i]);
    ms_sum += scales >= 1 ? frame_msssim(source[i], result[i], scales) : 0.0;
  }
  const double n = static_cast<double>(source.size());
  pt.psnr_db = psnr_sum / n;
  pt.ssim_value = ssim_sum / n;
  pt.msssim_value = ms_sum / n;
  if (!cfg.external_metric_cmd.empty())
    pt.external = run_external_metric(cfg.external_metric_cmd, cfg.work_dir, source, result);
  return pt;
}

inline RDCurve curve_for(const std::vector<RatePoint>& pts, const std::string& metric) {
  RDCurve c;
  c.metric_id = metric;
  std::vector<RatePoint> sorted = pts;
  std::sort(sorted.begin(), sorted.end(),
            [](const RatePoint& a, const RatePoint& b) { return a.bitrate_kbps < b.bitrate_kbps; });
  for (const RatePoint& p : sorted) {
    double q = 0.0;
    if (metric == "psnr") q = p.psnr_db;
    else if (metric == "ssim") q = p.ssim_value;
    else if (metric == "msssim") q = p.msssim_value;
    else if (metric == "external") {
      if (!p.external.has_value()) throw std::runtime_error("external metric missing");
      q = *p.external;
    } else {
      throw std::invalid_argument("unknown metric " + metric);
    }
    c.points.push_back({p.bitrate_kbps, q});
  }
  return c;
}

}  // namespace detail

inline EvalReport evaluate_tool(const EvalConfig& cfg) {
  EvalReport report;
  report.tool = cfg.tool;
  if (cfg.sequences.empty() || cfg.qps.empty() || (cfg.tool != "pp" && cfg.tool != "sra")) {
    report.exit_code = 1;
    return report;
  }
  bool any_failed = false;
  for (const SequenceSpec& seq : cfg.sequences) {
    SequenceEval se;
    se.name = seq.name;
    try {
      if (seq.frames.empty()) throw std::runtime_error("sequence has no frames");
      for (const int qp : cfg.qps) {
        // Anchor arm: codec alone at full resolution.
        const CodecResult anchor_res = codec_run(seq.frames, cfg.adapter, qp, seq.fps);
        const double anchor_rate =
            bitrate_kbps(anchor_res.payload_bytes, seq.fps, seq.frames.size());
        se.anchor.push_back(detail::score_point(qp, anchor_rate, seq.frames, anchor_res.frames,
                                                cfg));

        // Enhanced arm.
        if (!cfg.generator)
          throw std::runtime_error("generator checkpoint not configured");
        std::vector<PlanarFrame> enhanced;
        double enhanced_rate = 0.0;
        if (cfg.tool == "pp") {
          enhanced = pp_enhance(anchor_res.frames, *cfg.generator);
          enhanced_rate = anchor_rate;
        } else {
          std::vector<PlanarFrame> low;
          for (const PlanarFrame& f : seq.frames) low.push_back(downsample2x(f));
          const CodecResult low_res = codec_run(low, cfg.adapter, qp, seq.fps);
          enhanced_rate = bitrate_kbps(low_res.payload_bytes, seq.fps, seq.frames.size());
          enhanced = sra_restore(low_res.frames, *cfg.generator);
        }
        se.enhanced.push_back(
            detail::score_point(qp, enhanced_rate, seq.frames, enhanced, cfg));
      }
      for (const std::string metric : {"psnr", "ssim", "msssim"}) {
        const RDCurve a = detail::curve_for(se.anchor, metric);
        const RDCurve t = detail::curve_for(se.enhanced, metric);
        se.bd.emplace_back(metric, bd_rate(a, t, cfg.fit));
      }
      if (!cfg.external_metric_cmd.empty()) {
        const RDCurve a = detail::curve_for(se.anchor, "external");
        const RDCurve t = detail::curve_for(se.enhanced, "external");
        se.bd.emplace_back("external", bd_rate(a, t, cfg.fit));
      }
    } catch (const std::exception& e) {
      se.error = e.what();
      any_failed = true;
    }
    report.sequences.push_back(std::move(se));
  }
  report.exit_code = any_failed ? 2 : 0;
  return report;
}

inline void write_eval_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "sequence,tool,qp,bitrate_kbps,psnr,ssim,msssim,external_metric\n";
  for (const SequenceEval& se : report.sequences) {
    if (!se.error.empty()) continue;
    auto dump = [&](const std::vector<RatePoint>& pts, const std::string& tool) {
      for (const RatePoint& p : pts) {
        out << se.name << "," << tool << "," << p.qp << "," << format_double(p.bitrate_kbps)
            << "," << format_double(p.psnr_db) << "," << format_double(p.ssim_value) << ","
            << format_double(p.msssim_value) << ","
            << (p.external.has_value() ? format_double(*p.external) : "") << "\n";
      }
    };
    dump(se.anchor, "anchor");
    dump(se.enhanced, report.tool);
  }
}

inline void write_bd_summary_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "sequence,tool,metric,bd_rate_percent,error\n";
  for (const SequenceEval& se : report.sequences) {
    if (!se.error.empty()) {
      out << se.name << "," << report.tool << ",,," << se.error << "\n";
      continue;
    }
    for (const auto& [metric, bd] : se.bd)
      out << se.name << "," << report.tool << "," << metric << "," << format_double(bd) << ",\n";
  }
}

// --------------------------------------------------------------------------
// Relative-complexity ledger
// --------------------------------------------------------------------------

struct ComplexityModel {
  std::string name;
  int64_t params = 0;
  std::function<void()> forward;  // one timed forward pass on the probe batch
};

struct ComplexityEntry {
  std::string name;
  int64_t params = 0;
  double forward_ms = 0.0;
  double param_ratio = 1.0;
  double time_ratio = 1.0;
};

// Parameter counts and timed forwards, normalized to the first model.
inline std::vector<ComplexityEntry> complexity_ledger(const std::vector<ComplexityModel>& models,
                                                      int reps = 3) {
  std::vector<ComplexityEntry> out;
  for (const ComplexityModel& m : models) {
    ComplexityEntry e;
    e.name = m.name;
    e.params = m.params;
    double best = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, reps); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      m.forward();
      const auto t1 = std::chrono::steady_clock::now();
      best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    e.forward_ms = best;
    out.push_back(e);
  }
  if (!out.empty()) {
    const double base_params = static_cast<double>(out[0].params);
    const double base_ms = out[0].forward_ms;
    for (ComplexityEntry& e : out) {
      e.param_ratio = base_params > 0 ? static_cast<double>(e.params) / base_params : 0.0;
      e.time_ratio = base_ms > 0 ? e.forward_ms / base_ms : 0.0;
    }
  }
  return out;
}

inline ComplexityModel complexity_model_for(const std::string& name, Cvenet& net,
                                            int64_t batch = 1, int64_t hw = 96) {
  Rng rng(99);
  const Tensor probe = rng.uniform_tensor({batch, hw, hw, 3}, 0.0, 1.0);
  return {name, param_count(net.params()), [&net, probe] { (void)net.infer(probe); }};
}

inline std::string format_complexity_table(const std::vector<ComplexityEntry>& entries) {
  std::ostringstream os;
  os << "model,params,forward_ms,param_ratio,time_ratio\n";
  for (const ComplexityEntry& e : entries)
    os << e.name << "," << e.params << "," << format_double(e.forward_ms) << ","
       << format_double(e.param_ratio) << "," << format_double(e.time_ratio) << "\n";
  return os.str();
}

}  // namespace cvegan
