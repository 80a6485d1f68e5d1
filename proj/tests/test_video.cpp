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

#include <cstdio>
#include <filesystem>

#include "cvegan/pipeline.hpp"

using namespace cvegan;

namespace {

PlanarFrame random_frame(int64_t w, int64_t h, int bd, ChromaFormat fmt, uint64_t seed) {
  Rng rng(seed);
  PlanarFrame f = PlanarFrame::make(w, h, bd, fmt);
  for (uint16_t& v : f.y) v = static_cast<uint16_t>(rng.uniform_int(0, f.max_value()));
  for (uint16_t& v : f.cb) v = static_cast<uint16_t>(rng.uniform_int(0, f.max_value()));
  for (uint16_t& v : f.cr) v = static_cast<uint16_t>(rng.uniform_int(0, f.max_value()));
  return f;
}

// Smooth content with texture, closer to natural video than white noise.
PlanarFrame textured_frame(int64_t w, int64_t h, int bd, ChromaFormat fmt, uint64_t seed) {
  Rng rng(seed);
  PlanarFrame f = PlanarFrame::make(w, h, bd, fmt);
  const double maxv = f.max_value();
  const double fx = rng.uniform(1.0, 3.0), fy = rng.uniform(1.0, 3.0);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double base =
          0.5 + 0.25 * std::sin(6.2832 * fx * x / w) + 0.2 * std::cos(6.2832 * fy * y / h);
      const double v = std::clamp(base + 0.05 * rng.normal(), 0.0, 1.0);
      f.y[static_cast<size_t>(y * w + x)] = static_cast<uint16_t>(std::llround(v * maxv));
    }
  for (int64_t i = 0; i < f.chroma_width() * f.chroma_height(); ++i) {
    f.cb[static_cast<size_t>(i)] =
        static_cast<uint16_t>(std::llround(maxv * (0.5 + 0.1 * rng.normal())));
    f.cr[static_cast<size_t>(i)] =
        static_cast<uint16_t>(std::llround(maxv * (0.5 + 0.1 * rng.normal())));
  }
  return f;
}

bool frames_equal(const PlanarFrame& a, const PlanarFrame& b) {
  return a.same_geometry(b) && a.y == b.y && a.cb == b.cb && a.cr == b.cr;
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
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("chroma format conversion") {
  // Constant chroma round-trips bit exactly in both directions.
  PlanarFrame c420 = PlanarFrame::make(8, 6, 8, ChromaFormat::k420);
  for (size_t i = 0; i < c420.cb.size(); ++i) {
    c420.cb[i] = 77;
    c420.cr[i] = 150;
  }
  for (size_t i = 0; i < c420.y.size(); ++i) c420.y[i] = static_cast<uint16_t>(i % 251);
  CHECK(frames_equal(convert_444_to_420(convert_420_to_444(c420)), c420));

  // 2x2 chroma {10,10,20,20} averages to 15 with round-half-up.
  PlanarFrame f = PlanarFrame::make(2, 2, 8, ChromaFormat::k444);
  f.cb = {10, 10, 20, 20};
  f.cr = {10, 11, 20, 20};  // 61 + 2 >> 2 = 15 as well
  const PlanarFrame sub = convert_444_to_420(f);
  CHECK(sub.cb[0] == 15);
  CHECK(sub.cr[0] == 15);

  // Random 4:2:0 source round-trips bit exactly through 4:4:4.
  PlanarFrame rnd = random_frame(16, 12, 10, ChromaFormat::k420, 1);
  CHECK(frames_equal(convert_444_to_420(convert_420_to_444(rnd)), rnd));

  // 4:4:4 -> 4:2:0 keeps luma and matches a pixel-loop average oracle.
  PlanarFrame rnd444 = random_frame(8, 8, 8, ChromaFormat::k444, 2);
  const PlanarFrame down = convert_444_to_420(rnd444);
  CHECK(down.y == rnd444.y);
  for (int64_t yy = 0; yy < 4; ++yy)
    for (int64_t x = 0; x < 4; ++x) {
      const uint32_t sum = rnd444.cb[static_cast<size_t>(2 * yy * 8 + 2 * x)] +
                           rnd444.cb[static_cast<size_t>(2 * yy * 8 + 2 * x + 1)] +
                           rnd444.cb[static_cast<size_t>((2 * yy + 1) * 8 + 2 * x)] +
                           rnd444.cb[static_cast<size_t>((2 * yy + 1) * 8 + 2 * x + 1)];
      CHECK(down.cb[static_cast<size_t>(yy * 4 + x)] == ((sum + 2) >> 2));
    }

  CHECK_THROWS_AS(convert_420_to_444(rnd444), std::invalid_argument);
  CHECK_THROWS_AS(convert_444_to_420(rnd), std::invalid_argument);
  CHECK_THROWS_AS(PlanarFrame::make(7, 6, 8, ChromaFormat::k420), std::invalid_argument);
}

TEST_CASE("resampling: constants, replication, impulse oracle") {
  PlanarFrame c = PlanarFrame::make(16, 16, 8, ChromaFormat::k444);
  for (auto* plane : {&c.y, &c.cb, &c.cr})
    for (uint16_t& v : *plane) v = 123;
  const PlanarFrame down = downsample2x(c);
  CHECK(down.width == 8);
  for (uint16_t v : down.y) CHECK(v == 123);
  const PlanarFrame up = nn_upsample2x(c);
  CHECK(up.width == 32);
  for (uint16_t v : up.y) CHECK(v == 123);

  PlanarFrame px = PlanarFrame::make(1, 1, 8, ChromaFormat::k444);
  px.y[0] = 200;
  px.cb[0] = 90;
  px.cr[0] = 60;
  const PlanarFrame two = nn_upsample2x(px);
  CHECK(two.width == 2);
  for (uint16_t v : two.y) CHECK(v == 200);
  for (uint16_t v : two.cb) CHECK(v == 90);

  // Single-pixel impulse against a direct tap-convolution oracle.
  PlanarFrame imp = PlanarFrame::make(16, 16, 8, ChromaFormat::k444);
  imp.y[static_cast<size_t>(7 * 16 + 7)] = 255;
  const PlanarFrame di = downsample2x(imp);
  std::array<double, 12> taps{};
  {
    auto lanczos = [](double d) {
      if (d == 0.0) return 1.0;
      if (std::abs(d) >= 3.0) return 0.0;
      const double pix = 3.14159265358979323846 * d;
      return 3.0 * std::sin(pix) * std::sin(pix / 3.0) / (pix * pix);
    };
    double sum = 0.0;
    for (int j = 0; j < 12; ++j) {
      taps[static_cast<size_t>(j)] = lanczos((j - 5.5) / 2.0);
      sum += taps[static_cast<size_t>(j)];
    }
    for (double& v : taps) v /= sum;
  }
  for (int64_t oy = 0; oy < 8; ++oy)
    for (int64_t ox = 0; ox < 8; ++ox) {
      double acc = 0.0;
      for (int jy = 0; jy < 12; ++jy)
        for (int jx = 0; jx < 12; ++jx) {
          const int64_t sy = std::clamp<int64_t>(2 * oy + jy - 5, 0, 15);
          const int64_t sx = std::clamp<int64_t>(2 * ox + jx - 5, 0, 15);
          const double v = (sy == 7 && sx == 7) ? 255.0 : 0.0;
          acc += taps[static_cast<size_t>(jy)] * taps[static_cast<size_t>(jx)] * v;
        }
      const long long want = std::clamp<long long>(std::llround(acc), 0, 255);
      CHECK(di.y[static_cast<size_t>(oy * 8 + ox)] == static_cast<uint16_t>(want));
    }

  CHECK_THROWS_AS(downsample2x(PlanarFrame::make(5, 4, 8, ChromaFormat::k444)),
                  std::invalid_argument);
}

TEST_CASE("raw yuv and y4m round trips") {
  namespace fs = std::filesystem;
  const std::string dir = "video_io_test";
  fs::create_directories(dir);

  for (const int bd : {8, 10}) {
    for (const ChromaFormat fmt : {ChromaFormat::k420, ChromaFormat::k444}) {
      std::vector<PlanarFrame> frames = {random_frame(12, 8, bd, fmt, 3),
                                         random_frame(12, 8, bd, fmt, 4)};
      const std::string path = dir + "/clip.yuv";
      write_yuv(path, frames);
      const std::vector<PlanarFrame> back =
          read_yuv(path, 12, 8, bd, fmt);
      REQUIRE(back.size() == 2);
      CHECK(frames_equal(back[0], frames[0]));
      CHECK(frames_equal(back[1], frames[1]));
    }
  }

  Y4mVideo v;
  v.width = 16;
  v.height = 8;
  v.fps_num = 30;
  v.fps_den = 1;
  v.frames = {random_frame(16, 8, 8, ChromaFormat::k420, 5),
              random_frame(16, 8, 8, ChromaFormat::k420, 6)};
  const std::string y4m = dir + "/clip.y4m";
  write_y4m(y4m, v);
  const Y4mVideo back = read_y4m(y4m);
  CHECK(back.width == 16);
  CHECK(back.fps() == doctest::Approx(30.0));
  REQUIRE(back.frames.size() == 2);
  CHECK(frames_equal(back.frames[0], v.frames[0]));
  CHECK(frames_equal(back.frames[1], v.frames[1]));

  {
    std::ofstream bad(dir + "/bad.y4m");
    bad << "NOTY4M W2 H2\n";
  }
  CHECK_THROWS_AS(read_y4m(dir + "/bad.y4m"), std::runtime_error);
  CHECK_THROWS_AS(read_yuv(dir + "/clip.y4m", 7, 3, 8, ChromaFormat::k444),
                  std::runtime_error);

  // PNG writer emits a well-formed signature and chunks.
  const std::string png = dir + "/dump.png";
  std::vector<unsigned char> rgb(6 * 4 * 3, 128);
  write_png(png, 6, 4, rgb, 3);
  std::ifstream in(png, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  REQUIRE(bytes.size() > 20);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x89);
  CHECK(bytes.substr(1, 3) == "PNG");
  CHECK(bytes.find("IHDR") != std::string::npos);
  CHECK(bytes.find("IDAT") != std::string::npos);
  CHECK(bytes.find("IEND") != std::string::npos);

  fs::remove_all(dir);
}

TEST_CASE("tiling geometry") {
  CHECK(tile_origins_1d(96, 96, 92) == std::vector<int64_t>{0});
  CHECK(tile_origins_1d(188, 96, 92) == std::vector<int64_t>{0, 92});
  CHECK(tile_origins_1d(1920, 96, 92).size() == 21);
  CHECK(tile_origins_1d(1080, 96, 92).size() == 12);
  CHECK(tile_origins_1d(1920, 96, 92).size() * tile_origins_1d(1080, 96, 92).size() == 252);

  PlanarFrame f = random_frame(96, 96, 8, ChromaFormat::k444, 7);
  auto [blocks, map] = segment_blocks(f);
  CHECK(blocks.size() == 1);
  CHECK(map.origins[0] == std::pair<int64_t, int64_t>(0, 0));

  PlanarFrame wide = random_frame(188, 96, 8, ChromaFormat::k444, 8);
  auto [wblocks, wmap] = segment_blocks(wide);
  REQUIRE(wblocks.size() == 2);
  CHECK(wmap.origins[0] == std::pair<int64_t, int64_t>(0, 0));
  CHECK(wmap.origins[1] == std::pair<int64_t, int64_t>(92, 0));

  // Clamped final tiles never leave the frame.
  for (auto [w, h] : std::vector<std::pair<int64_t, int64_t>>{{97, 101}, {250, 130}, {384, 224}}) {
    PlanarFrame g = random_frame(w, h, 8, ChromaFormat::k444, 9);
    auto [bs, m] = segment_blocks(g);
    for (auto [x0, y0] : m.origins) {
      CHECK(x0 >= 0);
      CHECK(y0 >= 0);
      CHECK(x0 + 96 <= m.padded_width);
      CHECK(y0 + 96 <= m.padded_height);
    }
    // Coverage: every pixel belongs to at least one tile.
    std::vector<int> covered(static_cast<size_t>(m.padded_width * m.padded_height), 0);
    for (auto [x0, y0] : m.origins)
      for (int64_t y = y0; y < y0 + 96; ++y)
        for (int64_t x = x0; x < x0 + 96; ++x) covered[static_cast<size_t>(y * m.padded_width + x)] = 1;
    for (int c : covered) CHECK(c == 1);
  }
}

TEST_CASE("aggregate of segment is the identity") {
  for (auto [w, h] : std::vector<std::pair<int64_t, int64_t>>{
           {96, 96}, {188, 96}, {250, 130}, {50, 40}, {97, 103}}) {
    PlanarFrame f444 = random_frame(w, h, 8, ChromaFormat::k444, 10 + static_cast<uint64_t>(w));
    auto [blocks, map] = segment_blocks(f444);
    CHECK(frames_equal(aggregate_blocks(blocks, map), f444));
  }
  // 4:2:0 frames: luma and chroma both survive the round trip.
  PlanarFrame f420 = random_frame(188, 120, 10, ChromaFormat::k420, 20);
  auto [blocks, map] = segment_blocks(f420);
  CHECK(frames_equal(aggregate_blocks(blocks, map), f420));
}

TEST_CASE("overlap averaging on the 0/1 two-block construction") {
  TileMap map;
  map.frame_width = 188;
  map.frame_height = 96;
  map.padded_width = 188;
  map.padded_height = 96;
  map.block = 96;
  map.overlap = 4;
  map.bit_depth = 8;
  map.source_chroma = ChromaFormat::k444;
  map.origins = {{0, 0}, {92, 0}};
  std::vector<Tensor> blocks = {Tensor({96, 96, 3}), Tensor::full({96, 96, 3}, 1.0)};
  const Tensor img = aggregate_blocks_image(blocks, map);
  for (int64_t y = 0; y < 96; ++y) {
    CHECK(img[(y * 188 + 50) * 3] == 0.0);
    CHECK(img[(y * 188 + 150) * 3] == 1.0);
    for (int64_t x = 92; x < 96; ++x) CHECK(img[(y * 188 + x) * 3] == 0.5);
  }
}

TEST_CASE("stub codec: fidelity ladder, determinism, idempotence") {
  std::vector<PlanarFrame> src = {textured_frame(96, 64, 8, ChromaFormat::k420, 30),
                                  textured_frame(96, 64, 8, ChromaFormat::k420, 31)};
  CodecAdapter stub;

  const CodecResult lossless = codec_run(src, stub, 4);
  CHECK(psnr(lossless.frames[0], src[0]) > 50.0);
  CHECK(lossless.payload_bytes > 0);

  const CodecResult q22 = codec_run(src, stub, 22);
  const CodecResult q37 = codec_run(src, stub, 37);
  CHECK(psnr(q22.frames[0], src[0]) > psnr(q37.frames[0], src[0]));
  CHECK(q22.payload_bytes > q37.payload_bytes);

  // Deterministic.
  const CodecResult again = codec_run(src, stub, 22);
  CHECK(frames_equal(again.frames[0], q22.frames[0]));
  CHECK(again.payload_bytes == q22.payload_bytes);

  // Idempotent in the decoded domain.
  const CodecResult recoded = codec_run(q22.frames, stub, 22);
  const double p1 = psnr(q22.frames[0], src[0]);
  const double p2 = psnr(recoded.frames[0], src[0]);
  CHECK(std::abs(p1 - p2) < 0.5);

  // Zero frames decode to zero with a positive byte count.
  std::vector<PlanarFrame> zero = {PlanarFrame::make(32, 32, 8, ChromaFormat::k420)};
  const CodecResult zres = codec_run(zero, stub, 22);
  CHECK(zres.payload_bytes > 0);
  for (uint16_t v : zres.frames[0].y) CHECK(v == 0);
}

TEST_CASE("external codec adapter: passthrough and failure capture") {
  const std::string work = "codec_ext_test";
  std::filesystem::create_directories(work);
  CodecAdapter ext;
  ext.mode = CodecAdapter::Mode::kExternal;
  ext.work_dir = work;
  ext.encode_cmd = "cp {input} {output}";
  ext.decode_cmd = "cp {input} {output}";
  std::vector<PlanarFrame> src = {random_frame(16, 8, 8, ChromaFormat::k420, 40)};
  const CodecResult res = codec_run(src, ext, 22);
  CHECK(frames_equal(res.frames[0], src[0]));
  CHECK(res.payload_bytes == yuv_frame_bytes(16, 8, 8, ChromaFormat::k420));

  // Failures surface the command and keep its inputs in the work dir.
  CodecAdapter broken = ext;
  broken.encode_cmd = "false {input} {output} {qp}";
  CHECK_THROWS_WITH_AS(codec_run(src, broken, 22), doctest::Contains("encode command failed"),
                       std::runtime_error);
  std::filesystem::remove_all(work);
}

TEST_CASE("training pairs: alignment, sra trace, determinism, files") {
  std::vector<PlanarFrame> sources = {textured_frame(192, 192, 8, ChromaFormat::k420, 50)};
  CodecAdapter stub;
  BuildPairsOptions opts;
  opts.crops_per_frame = 4;
  opts.seed = 77;

  SUBCASE("pp pairs bit-match source crops on the target side") {
    const PairDataset ds = build_training_pairs(sources, stub, {32}, "pp", opts);
    REQUIRE(ds.samples.size() == 4);
    const Tensor src_img = frame_to_image(sources[0]);
    Rng rng(opts.seed);
    for (const PairSample& s : ds.samples) {
      const int64_t x0 = rng.uniform_int(0, 192 - 96);
      const int64_t y0 = rng.uniform_int(0, 192 - 96);
      for (int64_t y = 0; y < 96; ++y)
        for (int64_t x = 0; x < 96; ++x)
          for (int64_t c = 0; c < 3; ++c)
            CHECK(s.target[(y * 96 + x) * 3 + c] == src_img[((y0 + y) * 192 + (x0 + x)) * 3 + c]);
      CHECK(s.qp == 32);
    }
  }

  SUBCASE("sra degraded blocks come from the coded half-resolution intermediate") {
    const PairDataset ds = build_training_pairs(sources, stub, {27}, "sra", opts);
    REQUIRE(ds.samples.size() == 4);
    // Independent pipeline trace.
    const PlanarFrame low = downsample2x(sources[0]);
    CHECK(low.width == 96);
    const CodecResult coded = codec_run({low}, stub, 27);
    const PlanarFrame up = nn_upsample2x(coded.frames[0]);
    CHECK(up.width == 192);
    const Tensor up_img = frame_to_image(up);
    Rng rng(opts.seed);
    for (const PairSample& s : ds.samples) {
      const int64_t x0 = rng.uniform_int(0, 96);
      const int64_t y0 = rng.uniform_int(0, 96);
      for (int64_t y = 0; y < 96; ++y)
        for (int64_t x = 0; x < 96; ++x)
          for (int64_t c = 0; c < 3; ++c)
            CHECK(s.degraded[(y * 96 + x) * 3 + c] ==
                  up_img[((y0 + y) * 192 + (x0 + x)) * 3 + c]);
    }
  }

  SUBCASE("fixed seeds reproduce crop coordinates") {
    const PairDataset a = build_training_pairs(sources, stub, {32, 37}, "pp", opts);
    const PairDataset b = build_training_pairs(sources, stub, {32, 37}, "pp", opts);
    REQUIRE(a.samples.size() == b.samples.size());
    for (size_t i = 0; i < a.samples.size(); ++i)
      for (int64_t j = 0; j < a.samples[i].degraded.numel(); ++j) {
        CHECK(a.samples[i].degraded[j] == b.samples[i].degraded[j]);
        CHECK(a.samples[i].target[j] == b.samples[i].target[j]);
      }
  }

  SUBCASE("dataset files round trip through the manifest") {
    const PairDataset ds = build_training_pairs(sources, stub, {37}, "pp", opts);
    const std::string dir = "pairs_test";
    const std::string manifest = save_pair_dataset(dir, ds);
    const PairDataset back = load_pair_dataset(manifest);
    REQUIRE(back.samples.size() == ds.samples.size());
    CHECK(back.tool == "pp");
    for (size_t i = 0; i < ds.samples.size(); ++i) {
      CHECK(back.samples[i].qp == ds.samples[i].qp);
      for (int64_t j = 0; j < ds.samples[i].degraded.numel(); ++j) {
        CHECK(back.samples[i].degraded[j] == ds.samples[i].degraded[j]);
        CHECK(back.samples[i].target[j] == ds.samples[i].target[j]);
      }
    }
    std::filesystem::remove_all(dir);
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(build_training_pairs({}, stub, {32}, "pp", opts), std::invalid_argument);
    CHECK_THROWS_AS(build_training_pairs(sources, stub, {32}, "ilf", opts),
                    std::invalid_argument);
    CHECK_THROWS_AS(build_training_pairs(sources, stub, {}, "pp", opts), std::invalid_argument);
  }
}

TEST_CASE("nn upsampling commutes with pixelwise maps") {
  auto pixmap = [](PlanarFrame f) {
    for (auto* plane : {&f.y, &f.cb, &f.cr})
      for (uint16_t& v : *plane)
        v = static_cast<uint16_t>(
            std::min<long long>(std::llround(16.0 * std::sqrt(static_cast<double>(v))), 255));
    return f;
  };
  for (uint64_t seed = 70; seed < 73; ++seed) {
    const PlanarFrame f = random_frame(12, 8, 8, ChromaFormat::k420, seed);
    CHECK(frames_equal(nn_upsample2x(pixmap(f)), pixmap(nn_upsample2x(f))));
  }
}

TEST_CASE("frame psnr sentinel and geometry check") {
  const PlanarFrame f = random_frame(16, 16, 8, ChromaFormat::k420, 80);
  CHECK(std::isinf(psnr(f, f)));
  const PlanarFrame other = random_frame(16, 16, 10, ChromaFormat::k420, 81);
  CHECK_THROWS_AS(psnr(f, other), std::invalid_argument);
}

TEST_CASE("enhancement paths: identity generator and sra geometry") {
  NetConfig cfg = tiny_net();
  Cvenet identity_gen(cfg);  // zero tail: identity map

  PlanarFrame decoded = textured_frame(188, 120, 8, ChromaFormat::k420, 60);
  const PlanarFrame enhanced = pp_enhance_frame(decoded, identity_gen);
  CHECK(frames_equal(enhanced, decoded));

  PlanarFrame low = textured_frame(96, 64, 8, ChromaFormat::k420, 61);
  const std::vector<PlanarFrame> restored = sra_restore({low}, identity_gen);
  REQUIRE(restored.size() == 1);
  CHECK(restored[0].width == 192);
  CHECK(restored[0].height == 128);
}
