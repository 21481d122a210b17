#include "sidgan/isp.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "sidgan/error.hpp"

namespace sidgan::isp {

namespace {

// Offsets within a 2x2 CFA block: {row, col} of R, G1, G2, B.
struct CfaLayout {
  std::array<int, 2> r, g1, g2, b;
};

CfaLayout layout_of(CfaPattern p) {
  switch (p) {
    case CfaPattern::RGGB: return {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    case CfaPattern::BGGR: return {{1, 1}, {0, 1}, {1, 0}, {0, 0}};
    case CfaPattern::GRBG: return {{0, 1}, {0, 0}, {1, 1}, {1, 0}};
    case CfaPattern::GBRG: return {{1, 0}, {0, 0}, {1, 1}, {0, 1}};
  }
  throw ShapeError("unknown CFA pattern");
}

double clip01(double v) { return std::clamp(v, 0.0, 1.0); }

torch::Tensor as_f32_cpu(const torch::Tensor& t) { return t.to(torch::kCPU, torch::kFloat32).contiguous(); }

}  // namespace

CfaPattern parse_cfa(const std::string& s) {
  if (s == "RGGB") return CfaPattern::RGGB;
  if (s == "BGGR") return CfaPattern::BGGR;
  if (s == "GRBG") return CfaPattern::GRBG;
  if (s == "GBRG") return CfaPattern::GBRG;
  throw ShapeError("unknown CFA pattern '" + s + "'");
}

std::string to_string(CfaPattern p) {
  switch (p) {
    case CfaPattern::RGGB: return "RGGB";
    case CfaPattern::BGGR: return "BGGR";
    case CfaPattern::GRBG: return "GRBG";
    case CfaPattern::GBRG: return "GBRG";
  }
  return "?";
}

ValueRange parse_range(const std::string& s) {
  if (s == "unit") return ValueRange::Unit;
  if (s == "symmetric") return ValueRange::Symmetric;
  throw ShapeError("unknown value range '" + s + "'");
}

std::string to_string(ValueRange r) { return r == ValueRange::Unit ? "unit" : "symmetric"; }

void validate(const RawFrame& raw) {
  if (!raw.mosaic.defined() || raw.mosaic.dim() != 2)
    throw ShapeError("RAW mosaic must be a 2-D tensor");
  if (raw.mosaic.scalar_type() != torch::kUInt16) throw ShapeError("RAW mosaic must be u16");
  if (raw.mosaic.size(0) % 2 != 0 || raw.mosaic.size(1) % 2 != 0)
    throw ShapeError("RAW mosaic dimensions must be even");
  if (raw.black_level >= raw.white_level) throw ShapeError("black level must be below white level");
  if (!(raw.exposure_seconds > 0)) throw ShapeError("exposure must be positive");
  if (raw.mosaic.numel() > 0 && raw.mosaic.to(torch::kInt32).max().item<int>() > static_cast<int>(raw.white_level))
    throw ShapeError("mosaic value exceeds white level");
}

torch::Tensor pack_green_average(const RawFrame& raw) {
  validate(raw);
  const auto layout = layout_of(raw.cfa);
  const auto mosaic = raw.mosaic.contiguous();
  const auto h = mosaic.size(0), w = mosaic.size(1);
  const auto* src = mosaic.data_ptr<std::uint16_t>();
  auto out = torch::empty({h / 2, w / 2, 3}, torch::kFloat32);
  auto o = out.accessor<float, 3>();

  const double black = raw.black_level;
  const double range = static_cast<double>(raw.white_level) - black;
  auto at = [&](std::int64_t y, std::int64_t x, const std::array<int, 2>& off) {
    return static_cast<double>(src[(y + off[0]) * w + (x + off[1])]);
  };
  for (std::int64_t i = 0; i < h / 2; ++i) {
    for (std::int64_t j = 0; j < w / 2; ++j) {
      const std::int64_t y = 2 * i, x = 2 * j;
      const double r = (at(y, x, layout.r) - black) / range;
      const double g = ((at(y, x, layout.g1) - black) + (at(y, x, layout.g2) - black)) / 2.0 / range;
      const double b = (at(y, x, layout.b) - black) / range;
      o[i][j][0] = static_cast<float>(clip01(r));
      o[i][j][1] = static_cast<float>(clip01(g));
      o[i][j][2] = static_cast<float>(clip01(b));
    }
  }
  return out;
}

torch::Tensor bin2x2(const torch::Tensor& img) {
  if (img.dim() != 3) throw ShapeError("bin2x2 expects an (H, W, C) tensor");
  if (img.size(0) % 2 != 0 || img.size(1) % 2 != 0) throw ShapeError("bin2x2 needs even dimensions");
  const auto in = as_f32_cpu(img);
  const auto a = in.accessor<float, 3>();
  const auto h = in.size(0) / 2, w = in.size(1) / 2, c = in.size(2);
  auto out = torch::empty({h, w, c}, torch::kFloat32);
  auto o = out.accessor<float, 3>();
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j)
      for (std::int64_t k = 0; k < c; ++k) {
        const double s = static_cast<double>(a[2 * i][2 * j][k]) + static_cast<double>(a[2 * i][2 * j + 1][k]) +
                         static_cast<double>(a[2 * i + 1][2 * j][k]) +
                         static_cast<double>(a[2 * i + 1][2 * j + 1][k]);
        o[i][j][k] = static_cast<float>(s / 4.0);
      }
  return out;
}

torch::Tensor apply_gain_and_ev(const torch::Tensor& img, double short_exposure, double long_exposure,
                                double digital_gain) {
  if (!(short_exposure > 0) || !(long_exposure > 0)) throw ShapeError("exposures must be positive");
  if (!(digital_gain > 0)) throw ShapeError("digital gain must be positive");
  const double ratio = long_exposure / short_exposure;
  auto out = as_f32_cpu(img).clone();
  auto* p = out.data_ptr<float>();
  for (std::int64_t i = 0; i < out.numel(); ++i)
    p[i] = static_cast<float>(clip01(static_cast<double>(p[i]) * digital_gain * ratio));
  return out;
}

torch::Tensor normalize(const torch::Tensor& img, ValueRange target) {
  constexpr double kSlack = 1e-6;
  const auto in = as_f32_cpu(img);
  if (in.numel() > 0) {
    const double lo = in.min().item<double>(), hi = in.max().item<double>();
    if (lo < -kSlack || hi > 1.0 + kSlack) throw ShapeError("normalize expects input in [0, 1]");
  }
  if (target == ValueRange::Unit) return in.clone();
  return in * 2.0f - 1.0f;
}

torch::Tensor denormalize(const torch::Tensor& img, ValueRange source) {
  if (source == ValueRange::Unit) return img.clone();
  return (img + 1.0f) * 0.5f;
}

torch::Tensor preprocess(const RawFrame& raw, const IspConfig& cfg, double long_exposure) {
  if (!(cfg.digital_gain > 0)) throw ShapeError("digital gain must be positive");
  auto rgb = pack_green_average(raw);
  if (cfg.bin) rgb = bin2x2(rgb);
  rgb = apply_gain_and_ev(rgb, raw.exposure_seconds, long_exposure, cfg.digital_gain);
  return normalize(rgb, cfg.target_range);
}

}  // namespace sidgan::isp
