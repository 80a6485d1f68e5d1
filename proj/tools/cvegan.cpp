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

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "cvegan/eval.hpp"
#include "cvegan/losscal.hpp"
#include "cvegan/pipeline.hpp"
#include "cvegan/sphere.hpp"
#include "cvegan/trainer.hpp"

namespace fs = std::filesystem;
using namespace cvegan;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir = ".";
  int64_t seed = -1;  // <0: keep the config/default seed
};

void add_common(CLI::App* cmd, CommonOpts* common) {
  cmd->add_option("--config", common->config_path, "key = value configuration file");
  cmd->add_option("--out-dir", common->out_dir, "output directory");
  cmd->add_option("--seed", common->seed, "seed override");
}

KvFile load_config(const CommonOpts& common) {
  KvFile kv;
  if (!common.config_path.empty()) kv = KvFile::load(common.config_path);
  if (common.seed >= 0) kv.set("seed", std::to_string(common.seed));
  return kv;
}

std::vector<PlanarFrame> load_frames(const std::string& path, const KvFile& kv) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".y4m") return read_y4m(path).frames;
  const int64_t w = kv.get_int("width_px", 0);
  const int64_t h = kv.get_int("height_px", 0);
  if (w < 1 || h < 1)
    throw std::invalid_argument("raw YUV input needs width_px/height_px config keys (or use .y4m)");
  const int bd = static_cast<int>(kv.get_int("bit_depth", 8));
  const ChromaFormat fmt =
      kv.get_str("chroma", "420") == "444" ? ChromaFormat::k444 : ChromaFormat::k420;
  return read_yuv(path, w, h, bd, fmt);
}

void write_frames(const std::string& path, const std::vector<PlanarFrame>& frames, double fps) {
  if (path.size() > 4 && path.substr(path.size() - 4) == ".y4m") {
    Y4mVideo v;
    v.width = frames[0].width;
    v.height = frames[0].height;
    v.fps_num = static_cast<int64_t>(std::llround(fps));
    v.fps_den = 1;
    v.chroma = frames[0].chroma;
    v.frames = frames;
    write_y4m(path, v);
  } else {
    write_yuv(path, frames);
  }
}

std::vector<int> parse_qps(const std::string& csv) {
  std::vector<int> qps;
  for (const std::string& tok : split(csv, ','))
    if (!trim(tok).empty()) qps.push_back(static_cast<int>(parse_double(trim(tok), "qps")));
  return qps;
}

CodecAdapter adapter_from(const KvFile& kv) {
  CodecAdapter adapter;
  if (kv.get_str("codec", "stub") == "external") {
    adapter.mode = CodecAdapter::Mode::kExternal;
    adapter.encode_cmd = kv.require_str("encode_cmd");
    adapter.decode_cmd = kv.require_str("decode_cmd");
  }
  adapter.work_dir = kv.get_str("codec_work_dir", "/tmp");
  return adapter;
}

Cvenet generator_from_checkpoint(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != ModelKind::kGenerator)
    throw std::runtime_error(path + ": not a generator checkpoint");
  Cvenet gen(ck.config);
  load_params(ck, ModelKind::kGenerator, ck.config, gen.params());
  return gen;
}

int cmd_calibrate_loss(const CommonOpts& common, const std::vector<std::string>& database_paths,
                       double step, const std::string& transforms_csv) {
  const KvFile kv = load_config(common);
  std::vector<std::string> paths = database_paths;
  if (paths.empty() && kv.has("databases"))
    for (const std::string& p : split(kv.get_str("databases"), ','))
      if (!trim(p).empty()) paths.push_back(trim(p));
  if (paths.empty()) throw std::invalid_argument("calibrate-loss: no databases given");

  std::vector<Database> dbs;
  for (const std::string& p : paths) dbs.push_back(read_quality_records(p));

  GridSearchOptions opts;
  opts.step = kv.get_double("step", step);
  if (!transforms_csv.empty()) {
    opts.transforms.clear();
    for (const std::string& name : split(transforms_csv, ','))
      if (!trim(name).empty()) opts.transforms.push_back(transform_from_name(trim(name)));
  }
  const CalibrationResult result = cross_validate(dbs, opts);
  fs::create_directories(common.out_dir);
  write_calibration_csv((fs::path(common.out_dir) / "calibration.csv").string(), result);
  const std::string summary = calibration_summary(result);
  std::ofstream((fs::path(common.out_dir) / "calibration_summary.txt").string()) << summary;
  std::cout << summary;
  return 0;
}

int cmd_make_dataset(const CommonOpts& common, const std::vector<std::string>& sources,
                     const std::string& tool, const std::string& qps_csv, int crops,
                     bool png_dumps) {
  const KvFile kv = load_config(common);
  std::vector<PlanarFrame> frames;
  for (const std::string& src : sources)
    for (PlanarFrame& f : load_frames(src, kv)) frames.push_back(std::move(f));
  BuildPairsOptions opts;
  opts.crops_per_frame = crops;
  opts.seed = static_cast<uint64_t>(kv.get_int("seed", 1));
  const PairDataset ds =
      build_training_pairs(frames, adapter_from(kv), parse_qps(qps_csv), tool, opts);
  fs::create_directories(common.out_dir);
  const std::string manifest =
      save_pair_dataset((fs::path(common.out_dir) / "dataset").string(), ds);
  if (png_dumps) {
    const fs::path dump_dir = fs::path(common.out_dir) / "dumps";
    fs::create_directories(dump_dir);
    for (size_t i = 0; i < std::min<size_t>(ds.samples.size(), 8); ++i) {
      write_png((dump_dir / ("pair_" + std::to_string(i) + "_deg.png")).string(), 96, 96,
                block_to_rgb8(ds.samples[i].degraded));
      write_png((dump_dir / ("pair_" + std::to_string(i) + "_tgt.png")).string(), 96, 96,
                block_to_rgb8(ds.samples[i].target));
    }
  }
  std::cout << "wrote " << ds.samples.size() << " pairs; manifest: " << manifest << "\n";
  return 0;
}

int cmd_train_stage1(const CommonOpts& common, const std::string& manifest,
                     const std::string& init_ckpt) {
  const KvFile kv = load_config(common);
  const PairDataset ds = load_pair_dataset(manifest);
  const NetConfig net_cfg = net_config_from(kv);
  const TrainConfig train_cfg = train_config_from(kv);
  Checkpoint init;
  const bool have_init = !init_ckpt.empty();
  if (have_init) init = load_checkpoint(init_ckpt);
  Stage1Result result = stage1_train(ds, net_cfg, train_cfg, have_init ? &init : nullptr);
  fs::create_directories(common.out_dir);
  save_checkpoint((fs::path(common.out_dir) / "generator_stage1.ckpt").string(),
                  ModelKind::kGenerator, net_cfg, result.generator.params());
  write_history_csv((fs::path(common.out_dir) / "history_stage1.csv").string(), result.history);
  std::cout << "stage 1: " << result.epoch_mean_lp.size() << " epochs, first mean "
            << result.epoch_mean_lp.front() << ", last mean " << result.epoch_mean_lp.back()
            << "\n";
  return 0;
}

int cmd_train_stage2(const CommonOpts& common, const std::string& manifest,
                     const std::string& init_ckpt) {
  const KvFile kv = load_config(common);
  const PairDataset ds = load_pair_dataset(manifest);
  const TrainConfig train_cfg = train_config_from(kv);
  const Checkpoint init = load_checkpoint(init_ckpt);
  Stage2Result result = stage2_train(init, ds, train_cfg);
  fs::create_directories(common.out_dir);
  save_checkpoint((fs::path(common.out_dir) / "generator_stage2.ckpt").string(),
                  ModelKind::kGenerator, init.config, result.generator.params());
  save_checkpoint((fs::path(common.out_dir) / "discriminator_stage2.ckpt").string(),
                  ModelKind::kDiscriminator, init.config, result.discriminator.params());
  write_history_csv((fs::path(common.out_dir) / "history_stage2.csv").string(), result.history);
  std::cout << "stage 2 finished; " << result.history.size() << " history rows\n";
  return 0;
}

int cmd_enhance(const CommonOpts& common, const std::string& input, const std::string& ckpt,
                const std::string& output, bool sra) {
  const KvFile kv = load_config(common);
  const std::vector<PlanarFrame> in_frames = load_frames(input, kv);
  const Cvenet gen = generator_from_checkpoint(ckpt);
  const double fps = kv.get_double("fps", 25.0);
  const std::vector<PlanarFrame> out_frames =
      sra ? sra_restore(in_frames, gen) : pp_enhance(in_frames, gen);
  const fs::path parent = fs::path(output).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_frames(output, out_frames, fps);
  std::cout << "wrote " << out_frames.size() << " frames to " << output << "\n";
  return 0;
}

int cmd_evaluate(const CommonOpts& common) {
  const KvFile kv = load_config(common);
  EvalConfig cfg;
  cfg.tool = kv.get_str("tool", "pp");
  cfg.qps = parse_qps(kv.get_str("qps", "22,27,32,37"));
  cfg.adapter = adapter_from(kv);
  cfg.external_metric_cmd = kv.get_str("external_metric_cmd", "");
  cfg.work_dir = kv.get_str("codec_work_dir", "/tmp");
  if (kv.get_str("bd_fit", "cubic") == "piecewise") cfg.fit = BdFitMethod::kPiecewiseCubic;

  std::optional<Cvenet> gen;
  if (kv.has("checkpoint")) gen.emplace(generator_from_checkpoint(kv.require_str("checkpoint")));
  cfg.generator = gen.has_value() ? &*gen : nullptr;

  for (const std::string& src : split(kv.require_str("sequences"), ','))
    if (!trim(src).empty())
      cfg.sequences.push_back({fs::path(trim(src)).stem().string(), load_frames(trim(src), kv),
                               kv.get_double("fps", 25.0)});

  const EvalReport report = evaluate_tool(cfg);
  fs::create_directories(common.out_dir);
  write_eval_csv((fs::path(common.out_dir) / "eval_points.csv").string(), report);
  write_bd_summary_csv((fs::path(common.out_dir) / "bd_summary.csv").string(), report);
  for (const SequenceEval& se : report.sequences) {
    if (!se.error.empty()) {
      std::cout << se.name << ": ERROR " << se.error << "\n";
      continue;
    }
    std::cout << se.name << ":";
    for (const auto& [metric, bd] : se.bd) std::cout << "  BD-" << metric << " " << bd << "%";
    std::cout << "\n";
  }
  return report.exit_code;
}

int cmd_gradcheck(const CommonOpts& common, int points, int dim) {
  const KvFile kv = load_config(common);
  Rng rng(static_cast<uint64_t>(kv.get_int("seed", 17)));
  double worst_rel = 0.0, worst_mag = 0.0;
  int checked = 0;
  while (checked < points) {
    VecN x(static_cast<size_t>(dim)), y(static_cast<size_t>(dim));
    for (double& v : x) v = 2.0 * rng.normal();
    for (double& v : y) v = 2.0 * rng.normal();
    if (std::abs(north_pole_cos(x)) > 1.0 - 1e-3 ||
        std::abs(relativistic_cos(x, y)) > 1.0 - 1e-3)
      continue;
    ++checked;
    for (int m = 1; m <= 3; ++m) {
      const GradCheckReport np = gradcheck_north_pole(x, m);
      const GradCheckReport rel = gradcheck_relativistic(x, y, m);
      worst_rel = std::max({worst_rel, np.max_rel_error, rel.max_rel_error});
      worst_mag = std::max({worst_mag, np.max_grad_abs, rel.max_grad_abs});
    }
  }
  const bool ok = worst_rel < 1e-4 && std::isfinite(worst_mag);
  std::cout << "gradcheck over " << points << " points in R^" << dim
            << " (m in {1,2,3}): max relative error " << worst_rel << ", max |gradient| "
            << worst_mag << (ok ? "  [ok]" : "  [FAILED]") << "\n";
  return ok ? 0 : 1;
}

int cmd_complexity(const CommonOpts& common, const std::vector<std::string>& ckpts) {
  if (ckpts.empty()) throw std::invalid_argument("complexity: no checkpoints given");
  std::vector<Cvenet> gens;
  gens.reserve(ckpts.size());
  std::vector<ComplexityModel> models;
  for (const std::string& p : ckpts) {
    gens.push_back(generator_from_checkpoint(p));
    models.push_back(complexity_model_for(fs::path(p).stem().string(), gens.back()));
  }
  const std::vector<ComplexityEntry> table = complexity_ledger(models);
  const std::string text = format_complexity_table(table);
  std::cout << text;
  fs::create_directories(common.out_dir);
  std::ofstream((fs::path(common.out_dir) / "complexity.csv").string()) << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compressed-video enhancement toolkit"};
  app.require_subcommand(1);

  CommonOpts common;

  auto* calibrate =
      app.add_subcommand("calibrate-loss", "cross-validated search for the combined loss");
  std::vector<std::string> database_paths;
  double step = 0.1;
  std::string transforms_csv;
  add_common(calibrate, &common);
  calibrate->add_option("--database", database_paths, "quality-record CSV (repeatable)");
  calibrate->add_option("--step", step, "weight grid step");
  calibrate->add_option("--transforms", transforms_csv, "comma-separated transform subset");

  auto* make_ds = app.add_subcommand("make-dataset", "build degraded/target training pairs");
  std::vector<std::string> sources;
  std::string tool = "pp", qps_csv = "22,27,32,37";
  int crops = 4;
  bool png_dumps = false;
  add_common(make_ds, &common);
  make_ds->add_option("--source", sources, "source video (.y4m or raw .yuv)")->required();
  make_ds->add_option("--tool", tool, "pp or sra");
  make_ds->add_option("--qps", qps_csv, "QP ladder");
  make_ds->add_option("--crops", crops, "crops per frame per QP");
  make_ds->add_flag("--png-dumps", png_dumps, "dump a few pairs as PNG");

  auto* s1 = app.add_subcommand("train-stage1", "train the generator under the perceptual loss");
  std::string manifest, init_ckpt;
  add_common(s1, &common);
  s1->add_option("--dataset", manifest, "dataset manifest CSV")->required();
  s1->add_option("--init-ckpt", init_ckpt, "optional initial generator checkpoint");

  auto* s2 = app.add_subcommand("train-stage2", "adversarial training from a stage-1 checkpoint");
  std::string manifest2, init_ckpt2;
  add_common(s2, &common);
  s2->add_option("--dataset", manifest2, "dataset manifest CSV")->required();
  s2->add_option("--init-ckpt", init_ckpt2, "stage-1 generator checkpoint")->required();

  auto* enh = app.add_subcommand("enhance", "post-process decoded frames");
  std::string in_path, ckpt_path, out_path;
  add_common(enh, &common);
  enh->add_option("--input", in_path, "decoded video")->required();
  enh->add_option("--ckpt", ckpt_path, "generator checkpoint")->required();
  enh->add_option("--output", out_path, "output video path")->required();

  auto* sra = app.add_subcommand("sra-restore", "upsample and restore low-resolution frames");
  std::string in_path2, ckpt_path2, out_path2;
  add_common(sra, &common);
  sra->add_option("--input", in_path2, "decoded low-resolution video")->required();
  sra->add_option("--ckpt", ckpt_path2, "generator checkpoint")->required();
  sra->add_option("--output", out_path2, "output video path")->required();

  auto* ev = app.add_subcommand("evaluate", "rate-distortion evaluation with BD-rate");
  add_common(ev, &common);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of the sphere losses");
  int points = 100, dim = 8;
  add_common(gc, &common);
  gc->add_option("--points", points, "number of random points");
  gc->add_option("--dim", dim, "feature dimension");

  auto* cx = app.add_subcommand("complexity", "parameter/runtime ledger for checkpoints");
  std::vector<std::string> ckpts;
  add_common(cx, &common);
  cx->add_option("--ckpt", ckpts, "generator checkpoint (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(calibrate))
      return cmd_calibrate_loss(common, database_paths, step, transforms_csv);
    if (app.got_subcommand(make_ds))
      return cmd_make_dataset(common, sources, tool, qps_csv, crops, png_dumps);
    if (app.got_subcommand(s1)) return cmd_train_stage1(common, manifest, init_ckpt);
    if (app.got_subcommand(s2)) return cmd_train_stage2(common, manifest2, init_ckpt2);
    if (app.got_subcommand(enh)) return cmd_enhance(common, in_path, ckpt_path, out_path, false);
    if (app.got_subcommand(sra)) return cmd_enhance(common, in_path2, ckpt_path2, out_path2, true);
    if (app.got_subcommand(ev)) return cmd_evaluate(common);
    if (app.got_subcommand(gc)) return cmd_gradcheck(common, points, dim);
    if (app.got_subcommand(cx)) return cmd_complexity(common, ckpts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
