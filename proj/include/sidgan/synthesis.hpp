#pragma once

// Paired long/short exposure video synthesis: domain-A clips are pushed frame by
// frame through G_AB and then G_BC.

#include <filesystem>
#include <functional>
#include <string>
#include <utility>

#include <torch/torch.h>

#include "sidgan/domains.hpp"
#include "sidgan/manifest.hpp"
#include "sidgan/nets.hpp"

namespace sidgan::synth {

// Maps one (H, W, C) symmetric-range frame to another.
using FrameMap = std::function<torch::Tensor(const torch::Tensor&)>;

struct GeneratorRef {
  FrameMap map;
  std::string checkpoint_id;
  std::int64_t in_channels = 3;
  std::int64_t out_channels = 3;
};

// Full-frame inference with replicate padding to the U-Net divisor.
GeneratorRef generator_ref(nets::UNet& g, std::string checkpoint_id);

struct SyntheticPair {
  std::string source_id;
  data::VideoClip long_frames;
  data::VideoClip short_frames;
  std::pair<std::string, std::string> generator_checkpoint_ids;

  void validate() const;
};

SyntheticPair synthesize_pair(const data::VideoClip& clip, const GeneratorRef& g_ab, const GeneratorRef& g_bc,
                              const std::string& source_id = {});

struct SynthesisOptions {
  io::Split source_split = io::Split::Train;
  io::Split output_split = io::Split::Train;
  std::size_t count = 0;  // 0 = every clip
  // Recorded on the emitted B / C entries.
  double long_exposure_seconds = 1.0;
  double short_exposure_seconds = 0.1;
};

// Writes `out_dir/long/<id>/` and `out_dir/short/<id>/` frame directories for the first
// `count` A clips and `out_dir/manifest.json` holding paired B (long) / C (short) video
// entries. Entry attributes record the source clip and both generator checkpoint ids.
io::ManifestSet synthesize_dataset(const io::ManifestSet& set, const data::FrameSource& source,
                                   const GeneratorRef& g_ab, const GeneratorRef& g_bc,
                                   const std::filesystem::path& out_dir, const SynthesisOptions& options);

}  // namespace sidgan::synth
