#pragma once

// Procedural analytic domains for desk-scale experiments.
//
//   A: smooth procedural RGB scenes; videos pan across a larger canvas.
//   B: clip(M a)^(1/2.2) for a fixed 3x3 colour matrix M.
//   C: clip(0.1 b + n), n ~ N(0, 0.01^2) per pixel.
//
// Stored frames use the symmetric [-1, 1] range; clean targets stay in [0, 1].

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sidgan/domains.hpp"
#include "sidgan/manifest.hpp"

namespace sidgan::toy {

inline constexpr double kShortScale = 0.1;
inline constexpr double kNoiseSigma = 0.01;
inline constexpr double kGamma = 2.2;

struct ToySpec {
  std::int64_t size = 64;
  std::size_t n_train = 200;
  std::size_t n_val = 20;
  // Domain A videos and their length.
  std::size_t n_videos = 40;
  std::uint32_t video_frames = 7;
  // Static real clips for the forward task (C frames of one B scene).
  std::size_t n_static = 40;
  std::size_t n_static_val = 10;
  std::uint32_t static_frames = 4;
  std::uint64_t seed = 2024;
};

torch::Tensor color_matrix();

// (H, W, 3) unit-range scene.
torch::Tensor procedural_image(std::int64_t h, std::int64_t w, std::mt19937_64& rng);
std::vector<torch::Tensor> procedural_video(std::int64_t size, std::uint32_t frames, std::mt19937_64& rng);

// Unit-range analytic maps.
torch::Tensor a_to_b(const torch::Tensor& a);
torch::Tensor b_to_c_clean(const torch::Tensor& b);
torch::Tensor b_to_c(const torch::Tensor& b, std::mt19937_64& rng);

torch::Tensor to_symmetric(const torch::Tensor& unit);
torch::Tensor to_unit(const torch::Tensor& symmetric);

struct ToyData {
  io::ManifestSet set;
  data::MemoryFrameSource frames;
  // Noise-free 0.1 * B targets (unit range) for C entries, keyed by C id.
  std::map<std::string, torch::Tensor> clean_c;
  // Unit-range B frames keyed by B id.
  std::map<std::string, torch::Tensor> clean_b;
};

// Splits: A train videos; B/C train + val image pairs.
ToyData make_cyclegan_toy(const ToySpec& spec);

// Forward-model real data: per scene a static C clip (independent noise per frame)
// paired with its B image. Train and val splits.
ToyData make_forward_toy(const ToySpec& spec);

// Nested subsets of the first `count` entries (in a seed-fixed order) of the C manifest
// of `split`, together with their B pairs.
io::ManifestSet subset_pairs(const io::ManifestSet& set, io::Split split, std::size_t count, std::uint64_t seed);

// Writes every frame of `data` under `dir` and saves `dir/manifest.json` with relative paths.
void write_to_disk(const ToyData& data, const std::filesystem::path& dir);

}  // namespace sidgan::toy
