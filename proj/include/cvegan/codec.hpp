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

#include <cstdlib>
#include <filesystem>
#include <map>

#include "cvegan/frame.hpp"

namespace cvegan {

// Codec boundary for the coding workflows. The builtin stub applies 8x8
// blockwise DCT with a uniform quantizer whose step follows the HEVC
// relation delta = 2^((QP-4)/6) and reports an entropy-proxy byte count, so
// QP ladders behave realistically without an external encoder. External
// mode shells out to configured encode/decode command templates over raw
// YUV files.

struct CodecAdapter {
  enum class Mode { kStub, kExternal };
  Mode mode = Mode::kStub;
  // Placeholders: {input} {output} {qp} {width} {height} {fps} {bitdepth}
  std::string encode_cmd;
  std::string decode_cmd;
  std::string work_dir = "/tmp";
  std::vector<int> qp_ladder = {22, 27, 32, 37};
};

struct CodecResult {
  std::vector<PlanarFrame> frames;
  int64_t payload_bytes = 0;
};

inline double bitrate_kbps(int64_t payload_bytes, double fps, size_t frame_count) {
  if (frame_count == 0) throw std::invalid_argument("bitrate_kbps: no frames");
  return static_cast<double>(payload_bytes) * 8.0 * fps / static_cast<double>(frame_count) /
         1000.0;
}

namespace detail {

inline const std::array<std::array<double, 8>, 8>& dct8_basis() {
  static const std::array<std::array<double, 8>, 8> basis = [] {
    std::array<std::array<double, 8>, 8> c{};
    for (int u = 0; u < 8; ++u) {
      const double alpha = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x)
        c[static_cast<size_t>(u)][static_cast<size_t>(x)] =
            alpha * std::cos((2.0 * x + 1.0) * u * 3.14159265358979323846 / 16.0);
    }
    return c;
  }();
  return basis;
}

// Quantized 8x8 DCT round trip over one plane; quantized levels are
// appended to `levels` for the entropy proxy.
inline void stub_code_plane(std::vector<uint16_t>& plane, int64_t w, int64_t h, double qstep,
                            uint16_t maxv, std::map<int32_t, int64_t>* levels) {
  const auto& c = dct8_basis();
  double block[8][8], tmp[8][8], coef[8][8];
  for (int64_t by = 0; by < h; by += 8)
    for (int64_t bx = 0; bx < w; bx += 8) {
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const int64_t sy = std::min<int64_t>(by + y, h - 1);
          const int64_t sx = std::min<int64_t>(bx + x, w - 1);
          block[y][x] = static_cast<double>(plane[static_cast<size_t>(sy * w + sx)]);
        }
      // coef = C * block * C^T
      for (int u = 0; u < 8; ++u)
        for (int x = 0; x < 8; ++x) {
          double s = 0.0;
          for (int y = 0; y < 8; ++y) s += c[u][y] * block[y][x];
          tmp[u][x] = s;
        }
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
          double s = 0.0;
          for (int x = 0; x < 8; ++x) s += tmp[u][x] * c[v][x];
          const int32_t q = static_cast<int32_t>(std::llround(s / qstep));
          if (levels) ++(*levels)[q];
          coef[u][v] = static_cast<double>(q) * qstep;
        }
      // block = C^T * coef * C
      for (int y = 0; y < 8; ++y)
        for (int v = 0; v < 8; ++v) {
          double s = 0.0;
          for (int u = 0; u < 8; ++u) s += c[u][y] * coef[u][v];
          tmp[y][v] = s;
        }
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          double s = 0.0;
          for (int v = 0; v < 8; ++v) s += tmp[y][v] * c[v][x];
          const int64_t sy = by + y, sx = bx + x;
          if (sy >= h || sx >= w) continue;
          plane[static_cast<size_t>(sy * w + sx)] = static_cast<uint16_t>(
              std::min<long long>(std::max<long long>(std::llround(s), 0), maxv));
        }
    }
}

inline int64_t entropy_bytes(const std::map<int32_t, int64_t>& levels) {
  int64_t total = 0;
  for (const auto& [level, count] : levels) total += count;
  if (total == 0) return 0;
  double bits = 0.0;
  for (const auto& [level, count] : levels)
    bits += static_cast<double>(count) *
            std::log2(static_cast<double>(total) / static_cast<double>(count));
  return static_cast<int64_t>(std::ceil(bits / 8.0));
}

inline std::string fill_template(std::string tpl,
                                 const std::vector<std::pair<std::string, std::string>>& subs) {
  for (const auto& [key, value] : subs) {
    size_t at;
    while ((at = tpl.find(key)) != std::string::npos) tpl.replace(at, key.size(), value);
  }
  return tpl;
}

inline void run_command(const std::string& cmd, const std::string& log_path,
                        const char* what) {
  const std::string full = cmd + " > " + log_path + " 2>&1";
  const int rc = std::system(full.c_str());
  if (rc != 0) {
    std::string captured;
    try {
      for (const std::string& line : read_lines(log_path)) captured += line + "\n";
    } catch (const std::exception&) {
    }
    throw std::runtime_error(std::string(what) + " command failed (exit " + std::to_string(rc) +
                             "): " + cmd + "\n" + captured);
  }
}

}  // namespace detail

inline CodecResult codec_run(const std::vector<PlanarFrame>& frames, const CodecAdapter& adapter,
                             int qp, double fps = 25.0) {
  if (frames.empty()) throw std::invalid_argument("codec_run: no frames");
  for (const PlanarFrame& f : frames)
    if (!f.same_geometry(frames[0])) throw std::invalid_argument("codec_run: mixed geometry");

  if (adapter.mode == CodecAdapter::Mode::kStub) {
    const double qstep = std::exp2((static_cast<double>(qp) - 4.0) / 6.0);
    CodecResult result;
    std::map<int32_t, int64_t> levels;
    for (const PlanarFrame& src : frames) {
      PlanarFrame f = src;
      detail::stub_code_plane(f.y, f.width, f.height, qstep, f.max_value(), &levels);
      detail::stub_code_plane(f.cb, f.chroma_width(), f.chroma_height(), qstep, f.max_value(),
                              &levels);
      detail::stub_code_plane(f.cr, f.chroma_width(), f.chroma_height(), qstep, f.max_value(),
                              &levels);
      result.frames.push_back(std::move(f));
    }
    result.payload_bytes =
        detail::entropy_bytes(levels) + 16 * static_cast<int64_t>(frames.size());
    return result;
  }

  if (adapter.encode_cmd.empty() || adapter.decode_cmd.empty())
    throw std::invalid_argument("codec_run: external mode needs encode_cmd and decode_cmd");
  namespace fs = std::filesystem;
  static int invocation = 0;
  const std::string stem = (fs::path(adapter.work_dir) /
                            ("cvegan_codec_" + std::to_string(++invocation)))
                               .string();
  const std::string raw_in = stem + "_in.yuv";
  const std::string bitstream = stem + ".bin";
  const std::string raw_out = stem + "_out.yuv";
  write_yuv(raw_in, frames);
  const PlanarFrame& g = frames[0];
  const std::vector<std::pair<std::string, std::string>> common = {
      {"{qp}", std::to_string(qp)},
      {"{width}", std::to_string(g.width)},
      {"{height}", std::to_string(g.height)},
      {"{fps}", format_double(fps)},
      {"{bitdepth}", std::to_string(g.bit_depth)},
  };
  auto subs_enc = common;
  subs_enc.push_back({"{input}", raw_in});
  subs_enc.push_back({"{output}", bitstream});
  detail::run_command(detail::fill_template(adapter.encode_cmd, subs_enc), stem + "_enc.log",
                      "encode");
  auto subs_dec = common;
  subs_dec.push_back({"{input}", bitstream});
  subs_dec.push_back({"{output}", raw_out});
  detail::run_command(detail::fill_template(adapter.decode_cmd, subs_dec), stem + "_dec.log",
                      "decode");

  CodecResult result;
  result.payload_bytes = static_cast<int64_t>(fs::file_size(bitstream));
  result.frames = read_yuv(raw_out, g.width, g.height, g.bit_depth, g.chroma,
                           static_cast<int64_t>(frames.size()));
  if (result.frames.size() != frames.size())
    throw std::runtime_error("codec_run: decoder returned a different frame count");
  for (const std::string& p : {raw_in, bitstream, raw_out, stem + "_enc.log", stem + "_dec.log"})
    fs::remove(p);
  return result;
}

}  // namespace cvegan
