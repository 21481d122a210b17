#include "sidgan/domains.hpp"

#include <algorithm>
#include <cstdio>

#include "sidgan/error.hpp"
#include "sidgan/tensorio.hpp"

namespace sidgan::data {

namespace {

void check_hwc3(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() != 3 || t.size(2) != 3)
    throw ShapeError(std::string(what) + " must be an (H, W, 3) tensor");
}

void check_range(const torch::Tensor& t, isp::ValueRange range, const char* what) {
  constexpr double kSlack = 1e-6;
  if (t.numel() == 0) return;
  const double lo = t.min().item<double>(), hi = t.max().item<double>();
  const double lo_bound = range == isp::ValueRange::Unit ? 0.0 : -1.0;
  if (lo < lo_bound - kSlack || hi > 1.0 + kSlack)
    throw ShapeError(std::string(what) + " has values outside its declared range");
}

}  // namespace

void RgbImage::validate() const {
  check_hwc3(data, "image");
  if (data.size(0) < kMinSide || data.size(1) < kMinSide) throw ShapeError("image sides must be at least 16");
  check_range(data, range, "image");
}

void ShortExposureFrame::validate() const {
  check_hwc3(data, "short-exposure frame");
  if (!(exposure_seconds > 0) || !(gain_applied > 0)) throw ShapeError("exposure and gain must be positive");
  check_range(data, range, "short-exposure frame");
}

void VideoClip::validate() const {
  if (frames.empty()) throw ShapeError("clip has no frames");
  if (!(fps > 0)) throw ShapeError("fps must be positive");
  for (const auto& f : frames) {
    check_hwc3(f, "clip frame");
    if (!f.sizes().equals(frames.front().sizes())) throw ShapeError("clip frames differ in shape");
  }
}

torch::Tensor VideoClip::stacked() const {
  validate();
  return torch::stack(frames);
}

void SampleBatch::validate() const {
  if (!paired) return;
  if (b.size() != c.size()) throw ShapeError("paired batch has unequal B and C counts");
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b[i].top != c[i].top || b[i].left != c[i].left) throw ShapeError("paired crops are misaligned");
    if (!b[i].image.sizes().equals(c[i].image.sizes())) throw ShapeError("paired crops differ in shape");
  }
}

std::filesystem::path frame_file(const std::filesystem::path& video_dir, std::uint32_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "frame_%04u.sgt", index);
  return video_dir / name;
}

void write_video(const std::filesystem::path& dir, const std::vector<torch::Tensor>& frames) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < frames.size(); ++t)
    io::write_tensor(frame_file(dir, static_cast<std::uint32_t>(t)), frames[t]);
}

std::vector<torch::Tensor> read_video(const std::filesystem::path& dir) {
  std::vector<torch::Tensor> frames;
  for (std::uint32_t t = 0;; ++t) {
    const auto f = frame_file(dir, t);
    if (!std::filesystem::exists(f)) break;
    frames.push_back(io::read_tensor(f).to(torch::kFloat32));
  }
  if (frames.empty()) throw IoError("no frames found in " + dir.string());
  return frames;
}

torch::Tensor DiskFrameSource::frame(const io::ManifestEntry& entry, std::uint32_t index) const {
  if (index >= entry.frame_count)
    throw ShapeError("frame " + std::to_string(index) + " out of range for entry '" + entry.id + "'");
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find({entry.id, index}); it != cache_.end()) return it->second;
  }
  std::filesystem::path p = entry.path;
  if (p.is_relative()) p = base_dir_ / p;
  if (entry.kind == io::EntryKind::Video) p = frame_file(p, index);
  auto t = io::read_tensor(p).to(torch::kFloat32);
  check_hwc3(t, "stored frame");
  std::lock_guard lock(mu_);
  cache_.emplace(std::make_pair(entry.id, index), t);
  return t;
}

void MemoryFrameSource::add(const std::string& id, std::vector<torch::Tensor> frames) {
  for (const auto& f : frames) check_hwc3(f, "frame");
  frames_[id] = std::move(frames);
}

torch::Tensor MemoryFrameSource::frame(const io::ManifestEntry& entry, std::uint32_t index) const {
  const auto it = frames_.find(entry.id);
  if (it == frames_.end()) throw IoError("no frames registered for '" + entry.id + "'");
  if (index >= it->second.size()) throw ShapeError("frame index out of range for '" + entry.id + "'");
  return it->second[index];
}

std::pair<std::int64_t, std::int64_t> draw_window(std::int64_t h, std::int64_t w, std::int64_t crop,
                                                  std::mt19937_64& rng) {
  if (crop < 1) throw ShapeError("crop must be positive");
  if (crop > h || crop > w)
    throw ShapeError("crop " + std::to_string(crop) + " exceeds frame " + std::to_string(h) + "x" +
                     std::to_string(w));
  const auto top = std::uniform_int_distribution<std::int64_t>(0, h - crop)(rng);
  const auto left = std::uniform_int_distribution<std::int64_t>(0, w - crop)(rng);
  return {top, left};
}

Sample draw_sample(const io::DatasetManifest& m, std::size_t index, const FrameSource& src, std::int64_t crop,
                   std::mt19937_64& rng) {
  const auto& e = m.entries.at(index);
  Sample s;
  s.id = e.id;
  s.frame_index = e.frame_count > 1 ? std::uniform_int_distribution<std::uint32_t>(0, e.frame_count - 1)(rng) : 0;
  const auto f = src.frame(e, s.frame_index);
  std::tie(s.top, s.left) = draw_window(f.size(0), f.size(1), crop, rng);
  s.image = f.narrow(0, s.top, crop).narrow(1, s.left, crop).contiguous();
  return s;
}

SampleBatch sample_unpaired(const io::DatasetManifest& a, const io::DatasetManifest& b, const FrameSource& src,
                            std::mt19937_64& rng, std::int64_t crop) {
  if (a.empty() || b.empty()) throw ManifestError("unpaired sampling needs non-empty manifests");
  SampleBatch batch;
  const auto ia = std::uniform_int_distribution<std::size_t>(0, a.size() - 1)(rng);
  batch.a.push_back(draw_sample(a, ia, src, crop, rng));
  const auto ib = std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng);
  batch.b.push_back(draw_sample(b, ib, src, crop, rng));
  return batch;
}

SampleBatch sample_unpaired(const io::DatasetManifest& a, const io::DatasetManifest& b, const FrameSource& src,
                            std::uint64_t seed, std::int64_t crop) {
  std::mt19937_64 rng(seed);
  return sample_unpaired(a, b, src, rng, crop);
}

SampleBatch sample_pair_at(const io::DatasetManifest& b, const io::DatasetManifest& c, std::size_t b_index,
                           const FrameSource& src, std::mt19937_64& rng, std::int64_t crop) {
  const auto& eb = b.entries.at(b_index);
  if (!eb.pair_id) throw ManifestError("entry '" + eb.id + "' has no pair");
  const auto* ec = c.find(*eb.pair_id);
  if (!ec) throw ManifestError("pair '" + *eb.pair_id + "' of '" + eb.id + "' does not resolve");
  const auto fb = src.frame(eb, 0);
  const auto fc = src.frame(*ec, 0);
  if (!fb.sizes().equals(fc.sizes())) throw ShapeError("pair '" + eb.id + "' members differ in shape");
  const auto [top, left] = draw_window(fb.size(0), fb.size(1), crop, rng);
  SampleBatch batch;
  batch.paired = true;
  batch.b.push_back({eb.id, 0, top, left, fb.narrow(0, top, crop).narrow(1, left, crop).contiguous()});
  batch.c.push_back({ec->id, 0, top, left, fc.narrow(0, top, crop).narrow(1, left, crop).contiguous()});
  return batch;
}

SampleBatch sample_paired(const io::DatasetManifest& b, const io::DatasetManifest& c, const FrameSource& src,
                          std::uint64_t seed, std::int64_t crop) {
  if (b.empty()) throw ManifestError("paired sampling needs a non-empty B manifest");
  std::mt19937_64 rng(seed);
  const auto i = std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng);
  return sample_pair_at(b, c, i, src, rng, crop);
}

std::pair<std::size_t, std::size_t> draw_frame_indices(std::size_t n, std::mt19937_64& rng) {
  if (n < 2) throw ShapeError("two-frame sampling needs at least 2 frames");
  // k indexes the unordered pairs (i < j) in row-major order.
  auto k = std::uniform_int_distribution<std::size_t>(0, n * (n - 1) / 2 - 1)(rng);
  std::size_t i = 0;
  while (k >= n - 1 - i) {
    k -= n - 1 - i;
    ++i;
  }
  const std::size_t j = i + 1 + k;
  if (std::uniform_int_distribution<int>(0, 1)(rng)) return {j, i};
  return {i, j};
}

FramePair sample_two_frames(const VideoClip& clip, std::mt19937_64& rng) {
  const auto [i, j] = draw_frame_indices(clip.size(), rng);
  return {clip.frames[i], clip.frames[j], i, j};
}

FramePair sample_two_frames(const VideoClip& clip, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_two_frames(clip, rng);
}

std::vector<std::pair<std::size_t, std::size_t>> unpaired_epoch(std::size_t n_a, std::size_t n_b,
                                                                 std::mt19937_64& rng) {
  if (n_a == 0 || n_b == 0) throw ManifestError("unpaired epoch needs non-empty domains");
  const bool a_smaller = n_a <= n_b;
  std::vector<std::size_t> order(a_smaller ? n_a : n_b);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> other(0, (a_smaller ? n_b : n_a) - 1);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(order.size());
  for (auto i : order) {
    const auto j = other(rng);
    out.emplace_back(a_smaller ? i : j, a_smaller ? j : i);
  }
  return out;
}

std::vector<std::size_t> paired_epoch(std::size_t n_b, std::mt19937_64& rng, bool shuffle) {
  if (n_b == 0) throw ManifestError("paired epoch needs a non-empty B manifest");
  std::vector<std::size_t> order(n_b);
  for (std::size_t i = 0; i < n_b; ++i) order[i] = i;
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  return order;
}

torch::Tensor resize_bilinear(const torch::Tensor& img, std::int64_t height, std::int64_t width) {
  if (img.dim() != 3) throw ShapeError("resize expects an (H, W, C) tensor");
  if (height < 1 || width < 1) throw ShapeError("resize target must be positive");
  namespace F = torch::nn::functional;
  const auto x = img.to(torch::kFloat32).permute({2, 0, 1}).unsqueeze(0);
  const auto y = F::interpolate(x, F::InterpolateFuncOptions()
                                       .size(std::vector<std::int64_t>{height, width})
                                       .mode(torch::kBilinear)
                                       .align_corners(false));
  return y.squeeze(0).permute({1, 2, 0}).contiguous();
}

torch::Tensor to_nchw(const std::vector<torch::Tensor>& images) {
  if (images.empty()) throw ShapeError("empty image list");
  return torch::stack(images).permute({0, 3, 1, 2}).contiguous();
}

std::vector<torch::Tensor> from_nchw(const torch::Tensor& batch) {
  if (batch.dim() != 4) throw ShapeError("expected an NCHW batch");
  std::vector<torch::Tensor> out;
  const auto hwc = batch.permute({0, 2, 3, 1}).contiguous();
  for (std::int64_t i = 0; i < hwc.size(0); ++i) out.push_back(hwc[i]);
  return out;
}

}  // namespace sidgan::data
