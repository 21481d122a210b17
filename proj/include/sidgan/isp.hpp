#pragma once

// RAW preprocessing for short/long exposure sensor data: black-level
// subtraction with green averaging per CFA block, 2x2 binning, global digital
// gain with exposure-ratio scaling, and normalization to the training range.
//
// All stages compute in double and round once to f32, so results are
// reproducible bit-for-bit across platforms with IEEE doubles.

#include <cstdint>
#include <string>

#include <torch/torch.h>

namespace sidgan::isp {

enum class CfaPattern { RGGB, BGGR, GRBG, GBRG };

// [0, 1] or [-1, 1].
enum class ValueRange { Unit, Symmetric };

CfaPattern parse_cfa(const std::string& s);
std::string to_string(CfaPattern p);
ValueRange parse_range(const std::string& s);
std::string to_string(ValueRange r);

struct RawFrame {
  torch::Tensor mosaic;  // u16, (H, W), H and W even
  CfaPattern cfa = CfaPattern::RGGB;
  std::uint32_t black_level = 0;
  std::uint32_t white_level = 1023;
  double exposure_seconds = 1.0;
};

struct IspConfig {
  double digital_gain = 1.0;
  ValueRange target_range = ValueRange::Symmetric;
  bool bin = true;
  // Records whether frames were denoised externally before ingestion.
  bool denoised = false;
};

void validate(const RawFrame& raw);

// (H, W) mosaic -> (H/2, W/2, 3) f32 in [0, 1].
torch::Tensor pack_green_average(const RawFrame& raw);

// Mean of each 2x2 block per channel: (H, W, C) -> (H/2, W/2, C) f32.
torch::Tensor bin2x2(const torch::Tensor& img);

// clip(img * digital_gain * (long_exposure / short_exposure), 0, 1).
torch::Tensor apply_gain_and_ev(const torch::Tensor& img, double short_exposure, double long_exposure,
                                double digital_gain);

// Input must lie in [0, 1] (1e-6 slack); Symmetric maps to 2x - 1.
torch::Tensor normalize(const torch::Tensor& img, ValueRange target);
torch::Tensor denormalize(const torch::Tensor& img, ValueRange source);

// Full chain for one frame: pack, optional bin, gain + EV scaling, normalize.
torch::Tensor preprocess(const RawFrame& raw, const IspConfig& cfg, double long_exposure);

}  // namespace sidgan::isp
