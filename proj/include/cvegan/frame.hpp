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
#include <cstring>
#include <fstream>

#include "cvegan/ioutil.hpp"
#include "cvegan/tensor.hpp"

namespace cvegan {

// Planar YCbCr frames (8- or 10-bit, 4:2:0 or 4:4:4) with bit-exact raw YUV
// and Y4M readers/writers, chroma format conversion, and the 2x resampling
// pair used by the resolution-adaptation workflow.

enum class ChromaFormat { k420, k444 };

struct PlanarFrame {
  int64_t width = 0, height = 0;
  int bit_depth = 8;
  ChromaFormat chroma = ChromaFormat::k420;
  std::vector<uint16_t> y, cb, cr;

  static PlanarFrame make(int64_t w, int64_t h, int bit_depth = 8,
                          ChromaFormat chroma = ChromaFormat::k420) {
    if (w < 1 || h < 1) throw std::invalid_argument("PlanarFrame: empty geometry");
    if (bit_depth != 8 && bit_depth != 10)
      throw std::invalid_argument("PlanarFrame: bit depth must be 8 or 10");
    if (chroma == ChromaFormat::k420 && (w % 2 != 0 || h % 2 != 0))
      throw std::invalid_argument("PlanarFrame: 4:2:0 needs even dimensions");
    PlanarFrame f;
    f.width = w;
    f.height = h;
    f.bit_depth = bit_depth;
    f.chroma = chroma;
    f.y.assign(static_cast<size_t>(w * h), 0);
    const size_t csize = static_cast<size_t>(f.chroma_width() * f.chroma_height());
    f.cb.assign(csize, 0);
    f.cr.assign(csize, 0);
    return f;
  }

  int64_t chroma_width() const { return chroma == ChromaFormat::k420 ? width / 2 : width; }
  int64_t chroma_height() const { return chroma == ChromaFormat::k420 ? height / 2 : height; }
  uint16_t max_value() const { return static_cast<uint16_t>((1 << bit_depth) - 1); }

  uint16_t& luma(int64_t x, int64_t yy) { return y[static_cast<size_t>(yy * width + x)]; }
  uint16_t luma(int64_t x, int64_t yy) const { return y[static_cast<size_t>(yy * width + x)]; }

  bool same_geometry(const PlanarFrame& o) const {
    return width == o.width && height == o.height && bit_depth == o.bit_depth &&
           chroma == o.chroma;
  }
};

// --------------------------------------------------------------------------
// Chroma format conversion
// --------------------------------------------------------------------------

// Nearest-neighbour chroma replication.
inline PlanarFrame convert_420_to_444(const PlanarFrame& f) {
  if (f.chroma != ChromaFormat::k420) throw std::invalid_argument("convert_420_to_444: not 4:2:0");
  PlanarFrame out = PlanarFrame::make(f.width, f.height, f.bit_depth, ChromaFormat::k444);
  out.y = f.y;
  const int64_t cw = f.chroma_width();
  for (int64_t yy = 0; yy < f.height; ++yy)
    for (int64_t x = 0; x < f.width; ++x) {
      const size_t src = static_cast<size_t>((yy / 2) * cw + (x / 2));
      const size_t dst = static_cast<size_t>(yy * f.width + x);
      out.cb[dst] = f.cb[src];
      out.cr[dst] = f.cr[src];
    }
  return out;
}

// 2x2 chroma averaging with round-half-up.
inline PlanarFrame convert_444_to_420(const PlanarFrame& f) {
  if (f.chroma != ChromaFormat::k444) throw std::invalid_argument("convert_444_to_420: not 4:4:4");
  if (f.width % 2 != 0 || f.height % 2 != 0)
    throw std::invalid_argument("convert_444_to_420: odd dimensions");
  PlanarFrame out = PlanarFrame::make(f.width, f.height, f.bit_depth, ChromaFormat::k420);
  out.y = f.y;
  const int64_t cw = out.chroma_width();
  for (int64_t yy = 0; yy < out.chroma_height(); ++yy)
    for (int64_t x = 0; x < cw; ++x) {
      const size_t i00 = static_cast<size_t>((2 * yy) * f.width + 2 * x);
      const size_t i01 = i00 + 1;
      const size_t i10 = i00 + static_cast<size_t>(f.width);
      const size_t i11 = i10 + 1;
      const size_t dst = static_cast<size_t>(yy * cw + x);
      out.cb[dst] = static_cast<uint16_t>(
          (static_cast<uint32_t>(f.cb[i00]) + f.cb[i01] + f.cb[i10] + f.cb[i11] + 2) >> 2);
      out.cr[dst] = static_cast<uint16_t>(
          (static_cast<uint32_t>(f.cr[i00]) + f.cr[i01] + f.cr[i10] + f.cr[i11] + 2) >> 2);
    }
  return out;
}

// --------------------------------------------------------------------------
// 2x resampling
// --------------------------------------------------------------------------

namespace detail {

// Lanczos3 taps for factor-2 decimation centred between source pixels.
inline const std::array<double, 12>& lanczos3_half_taps() {
  static const std::array<double, 12> taps = [] {
    std::array<double, 12> t{};
    auto lanczos = [](double d) {
      if (d == 0.0) return 1.0;
      if (std::abs(d) >= 3.0) return 0.0;
      const double pix = 3.14159265358979323846 * d;
      return 3.0 * std::sin(pix) * std::sin(pix / 3.0) / (pix * pix);
    };
    double sum = 0.0;
    for (int j = 0; j < 12; ++j) {
      // offsets j-5..j+6 relative to the source position 2i+0.5, scaled by 2
      const double d = (static_cast<double>(j) - 5.5) / 2.0;
      t[static_cast<size_t>(j)] = lanczos(d);
      sum += t[static_cast<size_t>(j)];
    }
    for (double& v : t) v /= sum;
    return t;
  }();
  return taps;
}

inline std::vector<uint16_t> downsample_plane(const std::vector<uint16_t>& src, int64_t w,
                                              int64_t h, uint16_t maxv) {
  const auto& taps = lanczos3_half_taps();
  const int64_t ow = w / 2, oh = h / 2;
  std::vector<double> horiz(static_cast<size_t>(ow * h));
  for (int64_t yy = 0; yy < h; ++yy)
    for (int64_t ox = 0; ox < ow; ++ox) {
      double acc = 0.0;
      for (int j = 0; j < 12; ++j) {
        const int64_t sx = std::min(std::max<int64_t>(2 * ox + j - 5, 0), w - 1);
        acc += taps[static_cast<size_t>(j)] * src[static_cast<size_t>(yy * w + sx)];
      }
      horiz[static_cast<size_t>(yy * ow + ox)] = acc;
    }
  std::vector<uint16_t> out(static_cast<size_t>(ow * oh));
  for (int64_t oy = 0; oy < oh; ++oy)
    for (int64_t ox = 0; ox < ow; ++ox) {
      double acc = 0.0;
      for (int j = 0; j < 12; ++j) {
        const int64_t sy = std::min(std::max<int64_t>(2 * oy + j - 5, 0), h - 1);
        acc += taps[static_cast<size_t>(j)] * horiz[static_cast<size_t>(sy * ow + ox)];
      }
      const long long r = std::llround(acc);
      out[static_cast<size_t>(oy * ow + ox)] =
          static_cast<uint16_t>(std::min<long long>(std::max<long long>(r, 0), maxv));
    }
  return out;
}

inline std::vector<uint16_t> replicate2x_plane(const std::vector<uint16_t>& src, int64_t w,
                                               int64_t h) {
  std::vector<uint16_t> out(static_cast<size_t>(4 * w * h));
  for (int64_t yy = 0; yy < 2 * h; ++yy)
    for (int64_t x = 0; x < 2 * w; ++x)
      out[static_cast<size_t>(yy * 2 * w + x)] = src[static_cast<size_t>((yy / 2) * w + x / 2)];
  return out;
}

}  // namespace detail

// Lanczos3 2x downsampling of every plane; plane dimensions must be even.
inline PlanarFrame downsample2x(const PlanarFrame& f) {
  if (f.width % 2 != 0 || f.height % 2 != 0 || f.chroma_width() % 2 != 0 ||
      f.chroma_height() % 2 != 0)
    throw std::invalid_argument("downsample2x: plane dimensions must be even");
  PlanarFrame out = PlanarFrame::make(f.width / 2, f.height / 2, f.bit_depth, f.chroma);
  out.y = detail::downsample_plane(f.y, f.width, f.height, f.max_value());
  out.cb = detail::downsample_plane(f.cb, f.chroma_width(), f.chroma_height(), f.max_value());
  out.cr = detail::downsample_plane(f.cr, f.chroma_width(), f.chroma_height(), f.max_value());
  return out;
}

// Exact nearest-neighbour 2x upsampling.
inline PlanarFrame nn_upsample2x(const PlanarFrame& f) {
  PlanarFrame out = PlanarFrame::make(f.width * 2, f.height * 2, f.bit_depth, f.chroma);
  out.y = detail::replicate2x_plane(f.y, f.width, f.height);
  out.cb = detail::replicate2x_plane(f.cb, f.chroma_width(), f.chroma_height());
  out.cr = detail::replicate2x_plane(f.cr, f.chroma_width(), f.chroma_height());
  return out;
}

// --------------------------------------------------------------------------
// Raw YUV I/O (planar; 8-bit one byte per sample, 10-bit little-endian words)
// --------------------------------------------------------------------------

namespace detail {

inline void read_plane(std::istream& in, std::vector<uint16_t>& plane, bool wide,
                       const std::string& context) {
  if (wide) {
    std::vector<unsigned char> buf(plane.size() * 2);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size())
      throw std::runtime_error(context + ": truncated plane");
    for (size_t i = 0; i < plane.size(); ++i)
      plane[i] = static_cast<uint16_t>(buf[2 * i] | (buf[2 * i + 1] << 8));
  } else {
    std::vector<unsigned char> buf(plane.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size())
      throw std::runtime_error(context + ": truncated plane");
    for (size_t i = 0; i < plane.size(); ++i) plane[i] = buf[i];
  }
}

inline void write_plane(std::ostream& out, const std::vector<uint16_t>& plane, bool wide) {
  if (wide) {
    std::vector<unsigned char> buf(plane.size() * 2);
    for (size_t i = 0; i < plane.size(); ++i) {
      buf[2 * i] = static_cast<unsigned char>(plane[i] & 0xff);
      buf[2 * i + 1] = static_cast<unsigned char>(plane[i] >> 8);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  } else {
    std::vector<unsigned char> buf(plane.size());
    for (size_t i = 0; i < plane.size(); ++i) buf[i] = static_cast<unsigned char>(plane[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
}

}  // namespace detail

inline int64_t yuv_frame_bytes(int64_t w, int64_t h, int bit_depth, ChromaFormat chroma) {
  const int64_t luma = w * h;
  const int64_t chroma_samples = chroma == ChromaFormat::k420 ? luma / 2 : 2 * luma;
  return (luma + chroma_samples) * (bit_depth > 8 ? 2 : 1);
}

inline std::vector<PlanarFrame> read_yuv(const std::string& path, int64_t w, int64_t h,
                                         int bit_depth, ChromaFormat chroma,
                                         int64_t max_frames = -1) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  in.seekg(0, std::ios::end);
  const int64_t size = static_cast<int64_t>(in.tellg());
  in.seekg(0);
  const int64_t per = yuv_frame_bytes(w, h, bit_depth, chroma);
  if (size % per != 0)
    throw std::runtime_error(path + ": size is not a whole number of frames");
  int64_t n = size / per;
  if (max_frames >= 0) n = std::min(n, max_frames);
  std::vector<PlanarFrame> frames;
  const bool wide = bit_depth > 8;
  for (int64_t i = 0; i < n; ++i) {
    PlanarFrame f = PlanarFrame::make(w, h, bit_depth, chroma);
    detail::read_plane(in, f.y, wide, path);
    detail::read_plane(in, f.cb, wide, path);
    detail::read_plane(in, f.cr, wide, path);
    frames.push_back(std::move(f));
  }
  return frames;
}

inline void write_yuv(const std::string& path, const std::vector<PlanarFrame>& frames) {
  if (frames.empty()) throw std::invalid_argument("write_yuv: no frames");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const bool wide = frames[0].bit_depth > 8;
  for (const PlanarFrame& f : frames) {
    if (!f.same_geometry(frames[0])) throw std::invalid_argument("write_yuv: mixed geometry");
    detail::write_plane(out, f.y, wide);
    detail::write_plane(out, f.cb, wide);
    detail::write_plane(out, f.cr, wide);
  }
}

// --------------------------------------------------------------------------
// Y4M (8-bit)
// --------------------------------------------------------------------------

struct Y4mVideo {
  int64_t width = 0, height = 0;
  int64_t fps_num = 25, fps_den = 1;
  ChromaFormat chroma = ChromaFormat::k420;
  std::vector<PlanarFrame> frames;

  double fps() const { return static_cast<double>(fps_num) / static_cast<double>(fps_den); }
};

inline Y4mVideo read_y4m(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("YUV4MPEG2", 0) != 0)
    throw std::runtime_error(path + ": not a Y4M file");
  Y4mVideo v;
  for (const std::string& tok : split(header, ' ')) {
    if (tok.empty() || tok == "YUV4MPEG2") continue;
    switch (tok[0]) {
      case 'W': v.width = static_cast<int64_t>(parse_double(tok.substr(1), path)); break;
      case 'H': v.height = static_cast<int64_t>(parse_double(tok.substr(1), path)); break;
      case 'F': {
        const auto parts = split(tok.substr(1), ':');
        if (parts.size() != 2) throw std::runtime_error(path + ": bad frame rate");
        v.fps_num = static_cast<int64_t>(parse_double(parts[0], path));
        v.fps_den = static_cast<int64_t>(parse_double(parts[1], path));
        break;
      }
      case 'C': {
        const std::string c = tok.substr(1);
        if (c.rfind("420", 0) == 0) v.chroma = ChromaFormat::k420;
        else if (c.rfind("444", 0) == 0) v.chroma = ChromaFormat::k444;
        else throw std::runtime_error(path + ": unsupported chroma sampling " + c);
        break;
      }
      default: break;  // interlacing/aspect tokens ignored
    }
  }
  if (v.width < 1 || v.height < 1) throw std::runtime_error(path + ": missing geometry");
  std::string marker;
  while (std::getline(in, marker)) {
    if (marker.rfind("FRAME", 0) != 0) throw std::runtime_error(path + ": bad frame marker");
    PlanarFrame f = PlanarFrame::make(v.width, v.height, 8, v.chroma);
    detail::read_plane(in, f.y, false, path);
    detail::read_plane(in, f.cb, false, path);
    detail::read_plane(in, f.cr, false, path);
    v.frames.push_back(std::move(f));
  }
  return v;
}

inline void write_y4m(const std::string& path, const Y4mVideo& v) {
  if (v.frames.empty()) throw std::invalid_argument("write_y4m: no frames");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "YUV4MPEG2 W" << v.width << " H" << v.height << " F" << v.fps_num << ":" << v.fps_den
      << " Ip A1:1 C" << (v.chroma == ChromaFormat::k420 ? "420" : "444") << "\n";
  for (const PlanarFrame& f : v.frames) {
    if (f.bit_depth != 8) throw std::invalid_argument("write_y4m: 8-bit only");
    out << "FRAME\n";
    detail::write_plane(out, f.y, false);
    detail::write_plane(out, f.cb, false);
    detail::write_plane(out, f.cr, false);
  }
}

// --------------------------------------------------------------------------
// Minimal PNG writer (8-bit, stored deflate) for debug dumps
// --------------------------------------------------------------------------

namespace detail {

inline uint32_t crc32_bytes(const unsigned char* data, size_t n, uint32_t crc = 0) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xffffffffu;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

inline void png_chunk(std::ostream& out, const char type[4], const std::string& payload) {
  auto put_be = [&out](uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  put_be(static_cast<uint32_t>(payload.size()));
  std::string body(type, 4);
  body += payload;
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  put_be(crc32_bytes(reinterpret_cast<const unsigned char*>(body.data()), body.size()));
}

inline std::string deflate_stored(const std::string& raw) {
  std::string z;
  z.push_back(0x78);
  z.push_back(0x01);
  size_t off = 0;
  do {
    const size_t chunk = std::min<size_t>(raw.size() - off, 65535);
    const bool last = off + chunk == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<char>(chunk & 0xff));
    z.push_back(static_cast<char>(chunk >> 8));
    z.push_back(static_cast<char>(~chunk & 0xff));
    z.push_back(static_cast<char>((~chunk >> 8) & 0xff));
    z.append(raw, off, chunk);
    off += chunk;
  } while (off < raw.size());
  uint32_t a = 1, b = 0;
  for (unsigned char c : raw) {
    a = (a + c) % 65521;
    b = (b + a) % 65521;
  }
  const uint32_t adler = (b << 16) | a;
  z.push_back(static_cast<char>(adler >> 24));
  z.push_back(static_cast<char>((adler >> 16) & 0xff));
  z.push_back(static_cast<char>((adler >> 8) & 0xff));
  z.push_back(static_cast<char>(adler & 0xff));
  return z;
}

}  // namespace detail

// rgb: interleaved 8-bit, row-major, 3 bytes per pixel (or 1 for grayscale).
inline void write_png(const std::string& path, int64_t w, int64_t h,
                      const std::vector<unsigned char>& pixels, int channels = 3) {
  if (channels != 1 && channels != 3) throw std::invalid_argument("write_png: channels 1 or 3");
  if (static_cast<int64_t>(pixels.size()) != w * h * channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  out.write(reinterpret_cast<const char*>(sig), 8);
  std::string ihdr;
  auto push_be = [&ihdr](uint32_t v) {
    ihdr.push_back(static_cast<char>(v >> 24));
    ihdr.push_back(static_cast<char>((v >> 16) & 0xff));
    ihdr.push_back(static_cast<char>((v >> 8) & 0xff));
    ihdr.push_back(static_cast<char>(v & 0xff));
  };
  push_be(static_cast<uint32_t>(w));
  push_be(static_cast<uint32_t>(h));
  ihdr.push_back(8);                              // bit depth
  ihdr.push_back(channels == 3 ? 2 : 0);          // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  std::string raw;
  raw.reserve(static_cast<size_t>(h * (w * channels + 1)));
  for (int64_t yy = 0; yy < h; ++yy) {
    raw.push_back(0);  // filter: none
    raw.append(reinterpret_cast<const char*>(pixels.data() + yy * w * channels),
               static_cast<size_t>(w * channels));
  }
  detail::png_chunk(out, "IDAT", detail::deflate_stored(raw));
  detail::png_chunk(out, "IEND", "");
}

// BT.601 conversion of a normalized [H,W,3] YCbCr block to 8-bit RGB for dumps.
inline std::vector<unsigned char> block_to_rgb8(const Tensor& block) {
  if (block.ndim() != 3 || block.dim(2) != 3)
    throw std::invalid_argument("block_to_rgb8: expects [H,W,3]");
  std::vector<unsigned char> rgb(static_cast<size_t>(block.dim(0) * block.dim(1) * 3));
  for (int64_t i = 0; i < block.dim(0) * block.dim(1); ++i) {
    const double yv = block[i * 3 + 0];
    const double cb = block[i * 3 + 1] - 0.5;
    const double cr = block[i * 3 + 2] - 0.5;
    const double r = yv + 1.402 * cr;
    const double g = yv - 0.344136 * cb - 0.714136 * cr;
    const double b = yv + 1.772 * cb;
    auto q = [](double v) {
      return static_cast<unsigned char>(std::min(std::max(std::llround(v * 255.0), 0ll), 255ll));
    };
    rgb[static_cast<size_t>(3 * i)] = q(r);
    rgb[static_cast<size_t>(3 * i + 1)] = q(g);
    rgb[static_cast<size_t>(3 * i + 2)] = q(b);
  }
  return rgb;
}

// --------------------------------------------------------------------------
// Frame-level quality metrics on the luma plane
// --------------------------------------------------------------------------

inline std::vector<double> luma_as_doubles(const PlanarFrame& f) {
  std::vector<double> out(f.y.size());
  for (size_t i = 0; i < f.y.size(); ++i) out[i] = static_cast<double>(f.y[i]);
  return out;
}

inline Tensor luma_as_block(const PlanarFrame& f) {
  Tensor t({1, f.height, f.width, 1});
  const double scale = 1.0 / static_cast<double>(f.max_value());
  for (size_t i = 0; i < f.y.size(); ++i) t[static_cast<int64_t>(i)] = f.y[i] * scale;
  return t;
}

}  // namespace cvegan
