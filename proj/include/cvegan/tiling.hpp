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

#include "cvegan/frame.hpp"
#include "cvegan/metrics.hpp"

namespace cvegan {

// Overlapping-block segmentation and aggregation. Frames convert to
// normalized 4:4:4 images first, tile at stride (block - overlap) with the
// final row/column clamped into the frame, and aggregate back by averaging
// every covering block per pixel.

struct TileMap {
  int64_t frame_width = 0, frame_height = 0;    // original geometry
  int64_t padded_width = 0, padded_height = 0;  // >= block after replication padding
  int64_t block = 96;
  int64_t overlap = 4;
  int bit_depth = 8;
  ChromaFormat source_chroma = ChromaFormat::k420;
  std::vector<std::pair<int64_t, int64_t>> origins;  // (x, y) top-left corners

  int64_t stride() const { return block - overlap; }
};

// Normalized [H,W,3] 4:4:4 image from any supported frame.
inline Tensor frame_to_image(const PlanarFrame& f) {
  const PlanarFrame full = f.chroma == ChromaFormat::k420 ? convert_420_to_444(f) : f;
  Tensor img({full.height, full.width, 3});
  const double scale = 1.0 / static_cast<double>(full.max_value());
  for (int64_t i = 0; i < full.height * full.width; ++i) {
    img[i * 3 + 0] = full.y[static_cast<size_t>(i)] * scale;
    img[i * 3 + 1] = full.cb[static_cast<size_t>(i)] * scale;
    img[i * 3 + 2] = full.cr[static_cast<size_t>(i)] * scale;
  }
  return img;
}

inline PlanarFrame image_to_frame(const Tensor& img, int bit_depth, ChromaFormat target) {
  if (img.ndim() != 3 || img.dim(2) != 3)
    throw std::invalid_argument("image_to_frame: expects [H,W,3]");
  PlanarFrame full = PlanarFrame::make(img.dim(1), img.dim(0), bit_depth, ChromaFormat::k444);
  const double maxv = static_cast<double>(full.max_value());
  auto q = [maxv](double v) {
    return static_cast<uint16_t>(
        std::min<long long>(std::max<long long>(std::llround(v * maxv), 0), (long long)maxv));
  };
  for (int64_t i = 0; i < img.dim(0) * img.dim(1); ++i) {
    full.y[static_cast<size_t>(i)] = q(img[i * 3 + 0]);
    full.cb[static_cast<size_t>(i)] = q(img[i * 3 + 1]);
    full.cr[static_cast<size_t>(i)] = q(img[i * 3 + 2]);
  }
  return target == ChromaFormat::k420 ? convert_444_to_420(full) : full;
}

inline std::vector<int64_t> tile_origins_1d(int64_t size, int64_t block, int64_t stride) {
  std::vector<int64_t> out;
  int64_t pos = 0;
  while (true) {
    if (pos + block >= size) {
      out.push_back(size - block);
      break;
    }
    out.push_back(pos);
    pos += stride;
  }
  return out;
}

inline std::pair<std::vector<Tensor>, TileMap> segment_blocks(const PlanarFrame& f,
                                                              int64_t block = 96,
                                                              int64_t overlap = 4) {
  if (block < 2 || overlap < 0 || overlap >= block)
    throw std::invalid_argument("segment_blocks: need 0 <= overlap < block");
  Tensor img = frame_to_image(f);
  TileMap map;
  map.frame_width = f.width;
  map.frame_height = f.height;
  map.block = block;
  map.overlap = overlap;
  map.bit_depth = f.bit_depth;
  map.source_chroma = f.chroma;
  map.padded_width = std::max(f.width, block);
  map.padded_height = std::max(f.height, block);

  if (map.padded_width != f.width || map.padded_height != f.height) {
    Tensor padded({map.padded_height, map.padded_width, 3});
    for (int64_t y = 0; y < map.padded_height; ++y)
      for (int64_t x = 0; x < map.padded_width; ++x)
        for (int64_t c = 0; c < 3; ++c)
          padded[(y * map.padded_width + x) * 3 + c] =
              img[(std::min(y, f.height - 1) * f.width + std::min(x, f.width - 1)) * 3 + c];
    img = std::move(padded);
  }

  const std::vector<int64_t> xs = tile_origins_1d(map.padded_width, block, map.stride());
  const std::vector<int64_t> ys = tile_origins_1d(map.padded_height, block, map.stride());
  std::vector<Tensor> blocks;
  for (int64_t y0 : ys)
    for (int64_t x0 : xs) {
      map.origins.emplace_back(x0, y0);
      Tensor b({block, block, 3});
      for (int64_t y = 0; y < block; ++y)
        for (int64_t x = 0; x < block; ++x)
          for (int64_t c = 0; c < 3; ++c)
            b[(y * block + x) * 3 + c] =
                img[((y0 + y) * map.padded_width + (x0 + x)) * 3 + c];
      blocks.push_back(std::move(b));
    }
  return {std::move(blocks), std::move(map)};
}

// Per-pixel average over all covering blocks, in the normalized 4:4:4
// domain, cropped back to the original geometry.
inline Tensor aggregate_blocks_image(const std::vector<Tensor>& blocks, const TileMap& map) {
  if (blocks.size() != map.origins.size())
    throw std::invalid_argument("aggregate_blocks: block count does not match tile map");
  Tensor acc({map.padded_height, map.padded_width, 3});
  std::vector<double> count(static_cast<size_t>(map.padded_height * map.padded_width), 0.0);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const Tensor& b = blocks[i];
    if (b.ndim() != 3 || b.dim(0) != map.block || b.dim(1) != map.block || b.dim(2) != 3)
      throw std::invalid_argument("aggregate_blocks: block geometry mismatch");
    const auto [x0, y0] = map.origins[i];
    if (x0 < 0 || y0 < 0 || x0 + map.block > map.padded_width ||
        y0 + map.block > map.padded_height)
      throw std::invalid_argument("aggregate_blocks: tile outside the frame");
    for (int64_t y = 0; y < map.block; ++y)
      for (int64_t x = 0; x < map.block; ++x) {
        const int64_t p = (y0 + y) * map.padded_width + (x0 + x);
        for (int64_t c = 0; c < 3; ++c)
          acc[p * 3 + c] += b[(y * map.block + x) * 3 + c];
        count[static_cast<size_t>(p)] += 1.0;
      }
  }
  Tensor out({map.frame_height, map.frame_width, 3});
  for (int64_t y = 0; y < map.frame_height; ++y)
    for (int64_t x = 0; x < map.frame_width; ++x) {
      const int64_t p = y * map.padded_width + x;
      const double n = count[static_cast<size_t>(p)];
      if (n <= 0.0) throw std::logic_error("aggregate_blocks: uncovered pixel");
      for (int64_t c = 0; c < 3; ++c)
        out[(y * map.frame_width + x) * 3 + c] = acc[p * 3 + c] / n;
    }
  return out;
}

inline PlanarFrame aggregate_blocks(const std::vector<Tensor>& blocks, const TileMap& map) {
  return image_to_frame(aggregate_blocks_image(blocks, map), map.bit_depth, map.source_chroma);
}

// Luma PSNR between frames of identical geometry; +inf for identical planes.
inline double psnr(const PlanarFrame& a, const PlanarFrame& b) {
  if (!a.same_geometry(b)) throw std::invalid_argument("psnr: geometry mismatch");
  double mse = 0.0;
  for (size_t i = 0; i < a.y.size(); ++i) {
    const double d = static_cast<double>(a.y[i]) - static_cast<double>(b.y[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.y.size());
  return psnr_from_mse(mse, static_cast<double>(a.max_value()));
}

// Frame-level SSIM / MS-SSIM on the normalized luma plane.
inline double frame_ssim(const PlanarFrame& a, const PlanarFrame& b) {
  if (!a.same_geometry(b)) throw std::invalid_argument("frame_ssim: geometry mismatch");
  return ssim(luma_as_block(a), luma_as_block(b));
}

inline double frame_msssim(const PlanarFrame& a, const PlanarFrame& b, int scales = 4) {
  if (!a.same_geometry(b)) throw std::invalid_argument("frame_msssim: geometry mismatch");
  return ms_ssim(luma_as_block(a), luma_as_block(b), scales);
}

}  // namespace cvegan
