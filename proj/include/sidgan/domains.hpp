#pragma once

// In-memory data model for the three domains and deterministic sampling.
//
// Frames are (H, W, 3) f32 tensors. On disk an image entry is a single tensor
// file; a video entry is a directory of frame_<t>.sgt files (t zero-based).

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "sidgan/isp.hpp"
#include "sidgan/manifest.hpp"

namespace sidgan::data {

inline constexpr std::int64_t kMinSide = 16;

struct RgbImage {
  torch::Tensor data;
  isp::ValueRange range = isp::ValueRange::Symmetric;

  // Throws ShapeError unless data is (H, W, 3), H, W >= 16, and within range.
  void validate() const;
};

struct ShortExposureFrame {
  torch::Tensor data;
  double exposure_seconds = 1.0;
  double gain_applied = 1.0;
  isp::ValueRange range = isp::ValueRange::Symmetric;

  void validate() const;
};

struct VideoClip {
  std::vector<torch::Tensor> frames;
  double fps = 30.0;
  bool static_flag = false;

  void validate() const;
  std::size_t size() const { return frames.size(); }
  torch::Tensor stacked() const;  // (T, H, W, 3)
};

// One crop drawn from a manifest entry.
struct Sample {
  std::string id;
  std::uint32_t frame_index = 0;
  std::int64_t top = 0, left = 0;
  torch::Tensor image;  // (crop, crop, 3)
};

struct SampleBatch {
  std::vector<Sample> a, b, c;
  bool paired = false;

  // If paired: b and c have equal length and aligned windows.
  void validate() const;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual torch::Tensor frame(const io::ManifestEntry& entry, std::uint32_t index) const = 0;
};

// Reads entries from disk relative to the manifest set's base directory and
// caches decoded frames.
class DiskFrameSource final : public FrameSource {
 public:
  explicit DiskFrameSource(std::filesystem::path base_dir) : base_dir_(std::move(base_dir)) {}
  torch::Tensor frame(const io::ManifestEntry& entry, std::uint32_t index) const override;

 private:
  std::filesystem::path base_dir_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<std::string, std::uint32_t>, torch::Tensor> cache_;
};

// Frames held in memory, keyed by entry id.
class MemoryFrameSource final : public FrameSource {
 public:
  void add(const std::string& id, std::vector<torch::Tensor> frames);
  torch::Tensor frame(const io::ManifestEntry& entry, std::uint32_t index) const override;

 private:
  std::map<std::string, std::vector<torch::Tensor>> frames_;
};

std::filesystem::path frame_file(const std::filesystem::path& video_dir, std::uint32_t index);
void write_video(const std::filesystem::path& dir, const std::vector<torch::Tensor>& frames);
std::vector<torch::Tensor> read_video(const std::filesystem::path& dir);

// Uniform crop position over all valid top-left corners.
std::pair<std::int64_t, std::int64_t> draw_window(std::int64_t h, std::int64_t w, std::int64_t crop,
                                                  std::mt19937_64& rng);

Sample draw_sample(const io::DatasetManifest& m, std::size_t index, const FrameSource& src, std::int64_t crop,
                   std::mt19937_64& rng);

// One crop from each domain, independently drawn.
SampleBatch sample_unpaired(const io::DatasetManifest& a, const io::DatasetManifest& b, const FrameSource& src,
                            std::uint64_t seed, std::int64_t crop);
SampleBatch sample_unpaired(const io::DatasetManifest& a, const io::DatasetManifest& b, const FrameSource& src,
                            std::mt19937_64& rng, std::int64_t crop);

// Aligned (long, short) crops from the same window of B entry `b_index` and its pair.
SampleBatch sample_pair_at(const io::DatasetManifest& b, const io::DatasetManifest& c, std::size_t b_index,
                           const FrameSource& src, std::mt19937_64& rng, std::int64_t crop);
SampleBatch sample_paired(const io::DatasetManifest& b, const io::DatasetManifest& c, const FrameSource& src,
                          std::uint64_t seed, std::int64_t crop);

struct FramePair {
  torch::Tensor first, second;
  std::size_t i = 0, j = 0;
};

// Two distinct frames, uniform over unordered pairs (order then randomized).
FramePair sample_two_frames(const VideoClip& clip, std::uint64_t seed);
FramePair sample_two_frames(const VideoClip& clip, std::mt19937_64& rng);
std::pair<std::size_t, std::size_t> draw_frame_indices(std::size_t length, std::mt19937_64& rng);

// Epoch schedules. Unpaired: one pass over the smaller domain, each element
// matched with a uniform draw from the larger one. Paired: a permutation of
// the B entries (identity order when shuffle is false).
std::vector<std::pair<std::size_t, std::size_t>> unpaired_epoch(std::size_t n_a, std::size_t n_b,
                                                                 std::mt19937_64& rng);
std::vector<std::size_t> paired_epoch(std::size_t n_b, std::mt19937_64& rng, bool shuffle = true);

// Bilinear resampling of an (H, W, C) image (half-pixel centers, no antialiasing).
torch::Tensor resize_bilinear(const torch::Tensor& img, std::int64_t height, std::int64_t width);

// HWC list -> NCHW batch and back.
torch::Tensor to_nchw(const std::vector<torch::Tensor>& images);
std::vector<torch::Tensor> from_nchw(const torch::Tensor& batch);

}  // namespace sidgan::data
