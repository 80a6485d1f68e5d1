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

// Drives the CLI binary end to end over a synthetic clip: dataset build,
// both training stages, enhancement, evaluation, calibration, complexity.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "cvegan/losscal.hpp"
#include "cvegan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace cvegan;

namespace {

int failures = 0;

void expect(bool cond, const std::string& what) {
  if (!cond) {
    std::cerr << "FAIL: " << what << "\n";
    ++failures;
  }
}

void run(const std::string& cmd, const std::string& what, int expected_rc = 0) {
  const int rc = std::system(cmd.c_str());
  const int code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  expect(code == expected_rc,
         what + " (exit " + std::to_string(code) + ", wanted " + std::to_string(expected_rc) +
             "): " + cmd);
}

PlanarFrame smooth_frame(int64_t w, int64_t h, uint64_t seed) {
  Rng rng(seed);
  PlanarFrame f = PlanarFrame::make(w, h, 8, ChromaFormat::k420);
  const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0), ph = rng.uniform(0.0, 6.28);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double v = 0.5 + 0.3 * std::sin(6.2832 * fx * x / w + ph) *
                                 std::cos(6.2832 * fy * y / h) +
                       0.03 * rng.normal();
      f.y[static_cast<size_t>(y * w + x)] =
          static_cast<uint16_t>(std::llround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  for (int64_t i = 0; i < f.chroma_width() * f.chroma_height(); ++i) {
    f.cb[static_cast<size_t>(i)] = 128;
    f.cr[static_cast<size_t>(i)] = 120;
  }
  return f;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: cli_smoke <path-to-cvegan-binary>\n";
    return 1;
  }
  const std::string bin = argv[1];
  const fs::path work = "cli_smoke_work";
  fs::remove_all(work);
  fs::create_directories(work);

  // Fixture clips.
  Y4mVideo clip;
  clip.width = 96;
  clip.height = 96;
  clip.fps_num = 25;
  clip.frames = {smooth_frame(96, 96, 1), smooth_frame(96, 96, 2)};
  write_y4m((work / "clip.y4m").string(), clip);

  Y4mVideo low;
  low.width = 48;
  low.height = 48;
  low.fps_num = 25;
  low.frames = {smooth_frame(48, 48, 3)};
  write_y4m((work / "low.y4m").string(), low);

  {
    std::ofstream cfg(work / "train.cfg");
    cfg << "width = 8\nnum_mul2res = 1\necbam_reduction = 2\nnonlocal_pool = 8\n"
        << "feature_dim = 16\ndisc_width = 4\ndisc_input = 96\n"
        << "epochs = 1\nbatch_size = 4\nlr0 = 0.001\nseed = 9\n";
  }

  run(bin + " make-dataset --source " + (work / "clip.y4m").string() +
          " --tool pp --qps 32,37 --crops 2 --png-dumps --out-dir " + (work / "ds").string(),
      "make-dataset");
  expect(fs::exists(work / "ds" / "dataset" / "manifest.csv"), "dataset manifest written");
  expect(fs::exists(work / "ds" / "dumps" / "pair_0_deg.png"), "png dumps written");

  const std::string manifest = (work / "ds" / "dataset" / "manifest.csv").string();
  run(bin + " train-stage1 --dataset " + manifest + " --config " + (work / "train.cfg").string() +
          " --out-dir " + (work / "t1").string(),
      "train-stage1");
  const std::string ckpt1 = (work / "t1" / "generator_stage1.ckpt").string();
  expect(fs::exists(ckpt1), "stage-1 checkpoint written");
  expect(fs::exists(work / "t1" / "history_stage1.csv"), "stage-1 history written");

  run(bin + " train-stage2 --dataset " + manifest + " --init-ckpt " + ckpt1 + " --config " +
          (work / "train.cfg").string() + " --out-dir " + (work / "t2").string(),
      "train-stage2");
  const std::string ckpt2 = (work / "t2" / "generator_stage2.ckpt").string();
  expect(fs::exists(ckpt2), "stage-2 generator checkpoint written");
  expect(fs::exists(work / "t2" / "discriminator_stage2.ckpt"), "discriminator checkpoint");

  run(bin + " enhance --input " + (work / "clip.y4m").string() + " --ckpt " + ckpt2 +
          " --output " + (work / "enhanced.y4m").string(),
      "enhance");
  const Y4mVideo enhanced = read_y4m((work / "enhanced.y4m").string());
  expect(enhanced.frames.size() == 2 && enhanced.width == 96, "enhanced clip geometry");

  run(bin + " sra-restore --input " + (work / "low.y4m").string() + " --ckpt " + ckpt2 +
          " --output " + (work / "restored.y4m").string(),
      "sra-restore");
  const Y4mVideo restored = read_y4m((work / "restored.y4m").string());
  expect(restored.width == 96 && restored.height == 96, "sra-restore doubles the geometry");

  {
    std::ofstream cfg(work / "eval.cfg");
    cfg << "sequences = " << (work / "clip.y4m").string() << "\n"
        << "checkpoint = " << ckpt2 << "\ntool = pp\nqps = 22,27,32,37\nfps = 25\n";
  }
  run(bin + " evaluate --config " + (work / "eval.cfg").string() + " --out-dir " +
          (work / "eval").string(),
      "evaluate");
  expect(fs::exists(work / "eval" / "eval_points.csv"), "eval points CSV");
  expect(fs::exists(work / "eval" / "bd_summary.csv"), "bd summary CSV");

  // Calibration over two synthetic databases tied to the MS-SSIM loss.
  {
    Rng rng(4);
    for (int db = 0; db < 2; ++db) {
      Database records;
      for (int i = 0; i < 10; ++i) {
        QualityRecord r;
        r.sequence_id = "s" + std::to_string(i);
        r.losses.l1 = rng.uniform(0.1, 0.9);
        r.losses.l2 = rng.uniform(0.1, 0.9);
        r.losses.grad = rng.uniform(0.1, 0.9);
        r.losses.feat = rng.uniform(0.1, 0.9);
        r.losses.ssim_loss = rng.uniform(0.1, 0.9);
        r.losses.msssim_loss = 0.05 + 0.09 * i;
        r.subjective_score = 5.0 - 4.0 * r.losses.msssim_loss;
        records.push_back(r);
      }
      write_quality_records((work / ("db" + std::to_string(db) + ".csv")).string(), records);
    }
  }
  run(bin + " calibrate-loss --database " + (work / "db0.csv").string() + " --database " +
          (work / "db1.csv").string() + " --step 0.5 --out-dir " + (work / "cal").string(),
      "calibrate-loss");
  expect(fs::exists(work / "cal" / "calibration.csv"), "calibration CSV");

  run(bin + " gradcheck --points 10 --dim 8", "gradcheck");
  run(bin + " complexity --ckpt " + ckpt1 + " --ckpt " + ckpt2 + " --out-dir " +
          (work / "cx").string(),
      "complexity");
  expect(fs::exists(work / "cx" / "complexity.csv"), "complexity CSV");

  // Config errors exit with code 1.
  run(bin + " evaluate --config /nonexistent.cfg", "evaluate with missing config", 1);

  if (failures == 0) {
    fs::remove_all(work);
    std::cout << "cli smoke: all checks passed\n";
    return 0;
  }
  std::cerr << "cli smoke: " << failures << " checks failed (work dir kept: " << work << ")\n";
  return 1;
}
