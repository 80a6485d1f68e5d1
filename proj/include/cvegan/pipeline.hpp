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

#include <filesystem>

#include "cvegan/codec.hpp"
#include "cvegan/tiling.hpp"
#include "cvegan/trainer.hpp"

namespace cvegan {

// Training-pair generation for the post-processing (PP) and spatial
// resolution adaptation (SRA) tools, dataset serialization, and the
// frame-level enhancement paths.

struct BuildPairsOptions {
  int crops_per_frame = 4;
  int64_t block = 96;
  uint64_t seed = 1;
};

namespace detail {

inline Tensor crop_image(const Tensor& img, int64_t x0, int64_t y0, int64_t block) {
  Tensor out({block, block, 3});
  const int64_t w = img.dim(1);
  for (int64_t y = 0; y < block; ++y)
    for (int64_t x = 0; x < block; ++x)
      for (int64_t c = 0; c < 3; ++c)
        out[(y * block + x) * 3 + c] = img[((y0 + y) * w + (x0 + x)) * 3 + c];
  return out;
}

}  // namespace detail

// Aligned degraded/target crops per QP sub-group. PP degrades by coding the
// source directly; SRA downsamples 2x before coding and NN-upsamples the
// decoded frames back, so both tools feed the same block geometry.
inline PairDataset build_training_pairs(const std::vector<PlanarFrame>& sources,
                                        const CodecAdapter& adapter, const std::vector<int>& qps,
                                        const std::string& tool,
                                        const BuildPairsOptions& opts = {}) {
  if (sources.empty()) throw std::invalid_argument("build_training_pairs: no sources");
  if (tool != "pp" && tool != "sra")
    throw std::invalid_argument("build_training_pairs: tool must be 'pp' or 'sra'");
  if (qps.empty()) throw std::invalid_argument("build_training_pairs: no QPs");
  for (const PlanarFrame& f : sources)
    if (f.width < opts.block || f.height < opts.block)
      throw std::invalid_argument("build_training_pairs: source smaller than the crop block");

  Rng rng(opts.seed);
  PairDataset ds;
  ds.tool = tool;
  for (int qp : qps) {
    std::vector<PlanarFrame> degraded_frames;
    if (tool == "pp") {
      degraded_frames = codec_run(sources, adapter, qp).frames;
    } else {
      std::vector<PlanarFrame> low;
      for (const PlanarFrame& f : sources) low.push_back(downsample2x(f));
      const CodecResult coded = codec_run(low, adapter, qp);
      for (const PlanarFrame& f : coded.frames) degraded_frames.push_back(nn_upsample2x(f));
    }
    for (size_t i = 0; i < sources.size(); ++i) {
      const Tensor src_img = frame_to_image(sources[i]);
      const Tensor deg_img = frame_to_image(degraded_frames[i]);
      for (int k = 0; k < opts.crops_per_frame; ++k) {
        const int64_t x0 = rng.uniform_int(0, sources[i].width - opts.block);
        const int64_t y0 = rng.uniform_int(0, sources[i].height - opts.block);
        ds.samples.push_back({detail::crop_image(deg_img, x0, y0, opts.block),
                              detail::crop_image(src_img, x0, y0, opts.block), qp});
      }
    }
  }
  return ds;
}

// --------------------------------------------------------------------------
// Dataset files: one .blk tensor file per side plus a manifest CSV listing
// `degraded_path,target_path,qp,tool`.
// --------------------------------------------------------------------------

namespace detail {

constexpr char kBlkMagic[8] = {'C', 'V', 'B', 'L', 'K', '0', '0', '1'};

}  // namespace detail

inline void write_block_file(const std::string& path, const Tensor& block) {
  if (block.ndim() != 3) throw std::invalid_argument("write_block_file: expects [H,W,C]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(detail::kBlkMagic, sizeof(detail::kBlkMagic));
  const int64_t dims[3] = {block.dim(0), block.dim(1), block.dim(2)};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(block.data()),
            static_cast<std::streamsize>(sizeof(double) * block.numel()));
}

inline Tensor read_block_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, detail::kBlkMagic, 8) != 0)
    throw std::runtime_error(path + ": not a block file");
  int64_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (in.gcount() != sizeof(dims)) throw std::runtime_error(path + ": truncated header");
  Tensor t({dims[0], dims[1], dims[2]});
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(sizeof(double) * t.numel()));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * t.numel()))
    throw std::runtime_error(path + ": truncated data");
  return t;
}

inline std::string save_pair_dataset(const std::string& dir, const PairDataset& ds) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string manifest = (fs::path(dir) / "manifest.csv").string();
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("cannot write " + manifest);
  out << "degraded_path,target_path,qp,tool\n";
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    const std::string deg = (fs::path(dir) / ("pair_" + std::to_string(i) + "_deg.blk")).string();
    const std::string tgt = (fs::path(dir) / ("pair_" + std::to_string(i) + "_tgt.blk")).string();
    write_block_file(deg, ds.samples[i].degraded);
    write_block_file(tgt, ds.samples[i].target);
    out << deg << "," << tgt << "," << ds.samples[i].qp << "," << ds.tool << "\n";
  }
  return manifest;
}

inline PairDataset load_pair_dataset(const std::string& manifest_path) {
  const std::vector<std::string> lines = read_lines(manifest_path);
  if (lines.empty() || trim(lines[0]) != "degraded_path,target_path,qp,tool")
    throw std::invalid_argument(manifest_path + ": missing dataset manifest header");
  PairDataset ds;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const std::vector<std::string> f = split(lines[i], ',');
    if (f.size() != 4)
      throw std::invalid_argument(manifest_path + ": line " + std::to_string(i + 1) +
                                  ": want 4 fields");
    ds.samples.push_back({read_block_file(f[0]), read_block_file(f[1]),
                          static_cast<int>(parse_double(f[2], manifest_path))});
    ds.tool = f[3];
  }
  if (ds.samples.empty()) throw std::invalid_argument(manifest_path + ": empty dataset");
  return ds;
}

// --------------------------------------------------------------------------
// Enhancement paths
// --------------------------------------------------------------------------

inline PlanarFrame pp_enhance_frame(const PlanarFrame& decoded, const Cvenet& gen,
                                    int64_t batch = 8) {
  auto [blocks, map] = segment_blocks(decoded);
  std::vector<Tensor> out_blocks;
  for (size_t at = 0; at < blocks.size(); at += static_cast<size_t>(batch)) {
    const size_t end = std::min(blocks.size(), at + static_cast<size_t>(batch));
    Tensor stacked({static_cast<int64_t>(end - at), map.block, map.block, 3});
    const int64_t per = map.block * map.block * 3;
    for (size_t b = at; b < end; ++b)
      std::copy(blocks[b].data(), blocks[b].data() + per,
                stacked.data() + static_cast<int64_t>(b - at) * per);
    const Tensor enhanced = gen.infer(stacked);
    for (size_t b = at; b < end; ++b) {
      Tensor one({map.block, map.block, 3});
      std::copy(enhanced.data() + static_cast<int64_t>(b - at) * per,
                enhanced.data() + static_cast<int64_t>(b - at + 1) * per, one.data());
      out_blocks.push_back(std::move(one));
    }
  }
  return aggregate_blocks(out_blocks, map);
}

inline std::vector<PlanarFrame> pp_enhance(const std::vector<PlanarFrame>& decoded,
                                           const Cvenet& gen, int64_t batch = 8) {
  std::vector<PlanarFrame> out;
  for (const PlanarFrame& f : decoded) out.push_back(pp_enhance_frame(f, gen, batch));
  return out;
}

// NN-upsample the decoded low-resolution frames first (matching the training
// distribution), then run the PP path.
inline std::vector<PlanarFrame> sra_restore(const std::vector<PlanarFrame>& decoded_low,
                                            const Cvenet& gen, int64_t batch = 8) {
  std::vector<PlanarFrame> out;
  for (const PlanarFrame& f : decoded_low)
    out.push_back(pp_enhance_frame(nn_upsample2x(f), gen, batch));
  return out;
}

}  // namespace cvegan
