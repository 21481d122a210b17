#pragma once

// Image, video and distribution metrics.
//
// Images are (H, W) or (H, W, C) tensors, clips are (T, H, W, C). Feature
// sets for FID/KID are (n, d) tensors. Everything is evaluated in double.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace sidgan::metrics {

inline constexpr double kPsnrCap = 100.0;
inline constexpr double kFidEpsilon = 1e-6;

// 10 log10(peak^2 / MSE), capped at 100 dB for identical inputs.
double psnr(const torch::Tensor& x, const torch::Tensor& y, double peak = 1.0);

// Mean local SSIM over the valid region of an 11x11 Gaussian window (sigma 1.5),
// averaged over channels.
double ssim(const torch::Tensor& x, const torch::Tensor& y, double peak = 1.0);

struct TemporalScores {
  double tpsnr = 0;
  double tssim = 0;
};

// Mean PSNR / SSIM over consecutive frame pairs of one clip.
TemporalScores temporal_metrics(const torch::Tensor& clip, double peak = 1.0);

double fid(const torch::Tensor& features_x, const torch::Tensor& features_y);

// Unbiased MMD^2 with the cubic polynomial kernel k(a, b) = (a.b / d + 1)^3.
double kid(const torch::Tensor& features_x, const torch::Tensor& features_y);

// Dense displacement (H, W, 2) holding (dx, dy) and a validity mask (H, W).
// Pixel (y, x) of frame t corresponds to (y + dy, x + dx) in frame t-1.
struct FlowField {
  torch::Tensor displacement;
  torch::Tensor mask;
};

using FlowProvider = std::function<FlowField(const torch::Tensor& frame, const torch::Tensor& previous)>;

FlowProvider zero_flow();
FlowProvider constant_flow(double dx, double dy);

// Bilinear backward warp of `previous` by `flow`; out-of-bounds samples come
// back with mask 0. Returns {warped (H, W, C), mask (H, W)}.
std::pair<torch::Tensor, torch::Tensor> warp(const torch::Tensor& previous, const FlowField& flow);

// Mean over t of the masked MSE between frame t and frame t-1 warped onto it.
double warp_error(const torch::Tensor& clip, const FlowProvider& flow);

// Image -> fixed-length embedding used by FID/KID.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  // images: (N, C, H, W) -> (N, d) double
  virtual torch::Tensor extract(const torch::Tensor& images) const = 0;
  virtual std::int64_t dim() const = 0;
};

// Fixed-seed random convolution stack followed by spatial mean and standard
// deviation pooling. Deterministic and download-free.
class RandomConvEmbedding final : public FeatureExtractor {
 public:
  explicit RandomConvEmbedding(std::uint64_t seed = 1234, std::int64_t in_channels = 3, std::int64_t width = 16);
  torch::Tensor extract(const torch::Tensor& images) const override;
  std::int64_t dim() const override { return 4 * width_; }

 private:
  std::int64_t width_;
  std::vector<torch::Tensor> weights_;
};

struct MetricReport {
  std::string checkpoint_id;
  std::string split;
  std::optional<double> psnr, ssim, tpsnr, tssim, fid, kid, e_warp;
  std::size_t sample_count = 0;

  std::optional<double> kid_x100() const;
  std::optional<double> e_warp_x1e5() const;
};

inline constexpr const char* kReportHeader =
    "checkpoint_id,split,psnr,ssim,tpsnr,tssim,fid,kid_raw,kid_x100,e_warp_x1e5,sample_count";

std::string to_csv_row(const MetricReport& r);
MetricReport parse_csv_row(const std::string& line);
void write_reports(const std::filesystem::path& path, const std::vector<MetricReport>& reports);
std::vector<MetricReport> read_reports(const std::filesystem::path& path);

}  // namespace sidgan::metrics
