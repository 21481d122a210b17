#include "sidgan/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sidgan/error.hpp"

namespace sidgan::metrics {

namespace {

torch::Tensor as_double(const torch::Tensor& t) { return t.detach().to(torch::kCPU, torch::kFloat64).contiguous(); }

void require_same_shape(const torch::Tensor& x, const torch::Tensor& y, const char* what) {
  if (!x.sizes().equals(y.sizes()))
    throw ShapeError(std::string(what) + ": shape mismatch " + c10::str(x.sizes()) + " vs " + c10::str(y.sizes()));
}

// (H, W) or (H, W, C) -> (C, 1, H, W)
torch::Tensor to_planes(const torch::Tensor& img) {
  auto t = as_double(img);
  if (t.dim() == 2) return t.unsqueeze(0).unsqueeze(0);
  if (t.dim() == 3) return t.permute({2, 0, 1}).unsqueeze(1).contiguous();
  throw ShapeError("expected an (H, W) or (H, W, C) image");
}

torch::Tensor gaussian_window(int size, double sigma) {
  auto g = torch::empty({size}, torch::kFloat64);
  const double center = (size - 1) / 2.0;
  for (int i = 0; i < size; ++i) g[i] = std::exp(-((i - center) * (i - center)) / (2 * sigma * sigma));
  g /= g.sum();
  return torch::outer(g, g).reshape({1, 1, size, size});
}

torch::Tensor covariance(const torch::Tensor& f) {
  const auto n = f.size(0);
  const auto centered = f - f.mean(0, true);
  return centered.t().matmul(centered) / static_cast<double>(n - 1);
}

torch::Tensor sym_sqrt(const torch::Tensor& m) {
  auto [evals, evecs] = torch::linalg_eigh(m);
  return evecs.matmul(torch::diag(evals.clamp_min(0).sqrt())).matmul(evecs.t());
}

void check_features(const torch::Tensor& f, const char* what) {
  if (f.dim() != 2 || f.size(0) == 0) throw ShapeError(std::string(what) + ": expected a non-empty (n, d) set");
  if (!torch::isfinite(f).all().item<bool>()) throw ShapeError(std::string(what) + ": non-finite features");
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), *v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ProtocolError("bad numeric field '" + s + "' in metric report");
  return v;
}

}  // namespace

double psnr(const torch::Tensor& x, const torch::Tensor& y, double peak) {
  require_same_shape(x, y, "psnr");
  if (!(peak > 0)) throw ShapeError("psnr: peak must be positive");
  const double mse = (as_double(x) - as_double(y)).pow(2).mean().item<double>();
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const torch::Tensor& x, const torch::Tensor& y, double peak) {
  require_same_shape(x, y, "ssim");
  constexpr int kWin = 11;
  const auto px = to_planes(x), py = to_planes(y);
  if (px.size(2) < kWin || px.size(3) < kWin) throw ShapeError("ssim: image smaller than the 11x11 window");
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const auto w = gaussian_window(kWin, 1.5);
  auto filt = [&](const torch::Tensor& t) { return torch::conv2d(t, w); };
  const auto mx = filt(px), my = filt(py);
  const auto sxx = filt(px * px) - mx * mx;
  const auto syy = filt(py * py) - my * my;
  const auto sxy = filt(px * py) - mx * my;
  const auto map = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean().item<double>();
}

TemporalScores temporal_metrics(const torch::Tensor& clip, double peak) {
  if (clip.dim() < 3 || clip.size(0) < 2) throw ProtocolError("temporal metrics need a clip of at least 2 frames");
  TemporalScores s;
  const auto n = clip.size(0) - 1;
  for (std::int64_t t = 1; t <= n; ++t) {
    s.tpsnr += psnr(clip[t], clip[t - 1], peak);
    s.tssim += ssim(clip[t], clip[t - 1], peak);
  }
  s.tpsnr /= static_cast<double>(n);
  s.tssim /= static_cast<double>(n);
  return s;
}

double fid(const torch::Tensor& features_x, const torch::Tensor& features_y) {
  check_features(features_x, "fid");
  check_features(features_y, "fid");
  if (features_x.size(1) != features_y.size(1)) throw ShapeError("fid: feature dimensions differ");
  if (features_x.size(0) < 2 || features_y.size(0) < 2) throw ShapeError("fid: need at least 2 samples per set");
  const auto x = as_double(features_x), y = as_double(features_y);
  const auto d = x.size(1);
  const auto eye = torch::eye(d, torch::kFloat64) * kFidEpsilon;
  const auto cx = covariance(x) + eye;
  const auto cy = covariance(y) + eye;
  const auto root_x = sym_sqrt(cx);
  auto inner = root_x.matmul(cy).matmul(root_x);
  inner = 0.5 * (inner + inner.t());
  const double tr_cross = torch::linalg_eigvalsh(inner).clamp_min(0).sqrt().sum().item<double>();
  const double mean_term = (x.mean(0) - y.mean(0)).pow(2).sum().item<double>();
  return mean_term + cx.trace().item<double>() + cy.trace().item<double>() - 2.0 * tr_cross;
}

double kid(const torch::Tensor& features_x, const torch::Tensor& features_y) {
  check_features(features_x, "kid");
  check_features(features_y, "kid");
  if (features_x.size(1) != features_y.size(1)) throw ShapeError("kid: feature dimensions differ");
  const auto m = features_x.size(0), n = features_y.size(0);
  if (m < 2 || n < 2) throw ShapeError("kid: need at least 2 samples per set");
  const auto x = as_double(features_x), y = as_double(features_y);
  const double d = static_cast<double>(x.size(1));
  auto kernel = [d](const torch::Tensor& a, const torch::Tensor& b) { return (a.matmul(b.t()) / d + 1.0).pow(3); };
  const auto kxx = kernel(x, x), kyy = kernel(y, y), kxy = kernel(x, y);
  const double sxx = (kxx.sum() - kxx.diagonal().sum()).item<double>();
  const double syy = (kyy.sum() - kyy.diagonal().sum()).item<double>();
  const double sxy = kxy.sum().item<double>();
  return sxx / static_cast<double>(m * (m - 1)) + syy / static_cast<double>(n * (n - 1)) -
         2.0 * sxy / static_cast<double>(m * n);
}

FlowProvider zero_flow() { return constant_flow(0.0, 0.0); }

FlowProvider constant_flow(double dx, double dy) {
  return [dx, dy](const torch::Tensor& frame, const torch::Tensor&) {
    FlowField f;
    f.displacement = torch::empty({frame.size(0), frame.size(1), 2}, torch::kFloat64);
    f.displacement.select(2, 0).fill_(dx);
    f.displacement.select(2, 1).fill_(dy);
    f.mask = torch::ones({frame.size(0), frame.size(1)}, torch::kFloat64);
    return f;
  };
}

std::pair<torch::Tensor, torch::Tensor> warp(const torch::Tensor& previous, const FlowField& flow) {
  if (previous.dim() != 3) throw ShapeError("warp expects an (H, W, C) frame");
  const auto h = previous.size(0), w = previous.size(1), c = previous.size(2);
  if (flow.displacement.dim() != 3 || flow.displacement.size(0) != h || flow.displacement.size(1) != w ||
      flow.displacement.size(2) != 2)
    throw ShapeError("flow shape mismatch: expected (" + std::to_string(h) + ", " + std::to_string(w) + ", 2)");
  if (flow.mask.defined() && (flow.mask.dim() != 2 || flow.mask.size(0) != h || flow.mask.size(1) != w))
    throw ShapeError("flow mask shape mismatch");

  const auto src_t = as_double(previous);
  const auto disp_t = as_double(flow.displacement);
  const auto src = src_t.accessor<double, 3>();
  const auto disp = disp_t.accessor<double, 3>();
  const auto mask_in = flow.mask.defined() ? as_double(flow.mask) : torch::ones({h, w}, torch::kFloat64);
  const auto min = mask_in.accessor<double, 2>();

  auto warped = torch::zeros({h, w, c}, torch::kFloat64);
  auto mask = torch::zeros({h, w}, torch::kFloat64);
  auto out = warped.accessor<double, 3>();
  auto mo = mask.accessor<double, 2>();
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const double sx = x + disp[y][x][0];
      const double sy = y + disp[y][x][1];
      if (min[y][x] == 0 || sx < 0 || sy < 0 || sx > w - 1 || sy > h - 1) continue;
      const auto x0 = static_cast<std::int64_t>(std::floor(sx));
      const auto y0 = static_cast<std::int64_t>(std::floor(sy));
      const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - x0, fy = sy - y0;
      for (std::int64_t k = 0; k < c; ++k) {
        out[y][x][k] = (1 - fy) * ((1 - fx) * src[y0][x0][k] + fx * src[y0][x1][k]) +
                       fy * ((1 - fx) * src[y1][x0][k] + fx * src[y1][x1][k]);
      }
      mo[y][x] = 1.0;
    }
  }
  return {warped, mask};
}

double warp_error(const torch::Tensor& clip, const FlowProvider& flow) {
  if (clip.dim() != 4 || clip.size(0) < 2) throw ProtocolError("warp error needs a (T, H, W, C) clip with T >= 2");
  const auto frames = as_double(clip);
  double total = 0;
  std::int64_t counted = 0;
  for (std::int64_t t = 1; t < frames.size(0); ++t) {
    const auto [warped, mask] = warp(frames[t - 1], flow(frames[t], frames[t - 1]));
    const double valid = mask.sum().item<double>();
    if (valid == 0) continue;
    const auto sq = (frames[t] - warped).pow(2).sum(2);
    total += (sq * mask).sum().item<double>() / (valid * static_cast<double>(frames.size(3)));
    ++counted;
  }
  if (counted == 0) throw ProtocolError("warp error: no valid pixels in any frame pair");
  return total / static_cast<double>(counted);
}

RandomConvEmbedding::RandomConvEmbedding(std::uint64_t seed, std::int64_t in_channels, std::int64_t width)
    : width_(width) {
  auto gen = at::detail::createCPUGenerator(seed);
  auto init = [&](std::int64_t out, std::int64_t in) {
    const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
    return torch::randn({out, in, 3, 3}, gen, torch::kFloat64) * std;
  };
  weights_.push_back(init(width, in_channels));
  weights_.push_back(init(2 * width, width));
}

torch::Tensor RandomConvEmbedding::extract(const torch::Tensor& images) const {
  if (images.dim() != 4) throw ShapeError("feature extractor expects (N, C, H, W)");
  torch::NoGradGuard no_grad;
  auto h = as_double(images);
  h = torch::leaky_relu(torch::conv2d(h, weights_[0], {}, 1, 1), 0.2);
  h = torch::leaky_relu(torch::conv2d(h, weights_[1], {}, 2, 1), 0.2);
  const auto flat = h.flatten(2);
  return torch::cat({flat.mean(2), flat.std(2, false)}, 1);
}

std::optional<double> MetricReport::kid_x100() const {
  if (!kid) return std::nullopt;
  return *kid * 100.0;
}

std::optional<double> MetricReport::e_warp_x1e5() const {
  if (!e_warp) return std::nullopt;
  return *e_warp / 1e-5;
}

std::string to_csv_row(const MetricReport& r) {
  for (const auto& v : {r.psnr, r.ssim, r.tpsnr, r.tssim, r.fid, r.kid, r.e_warp})
    if (v && !std::isfinite(*v)) throw ProtocolError("metric report holds a non-finite value");
  if (r.checkpoint_id.find(',') != std::string::npos || r.split.find(',') != std::string::npos)
    throw ProtocolError("checkpoint id and split may not contain commas");
  std::ostringstream os;
  os << r.checkpoint_id << ',' << r.split << ',' << fmt(r.psnr) << ',' << fmt(r.ssim) << ',' << fmt(r.tpsnr) << ','
     << fmt(r.tssim) << ',' << fmt(r.fid) << ',' << fmt(r.kid) << ',' << fmt(r.kid_x100()) << ','
     << fmt(r.e_warp_x1e5()) << ',' << r.sample_count;
  return os.str();
}

MetricReport parse_csv_row(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cols.push_back(cell);
  if (!line.empty() && line.back() == ',') cols.emplace_back();
  if (cols.size() != 11) throw ProtocolError("metric report row must have 11 columns: " + line);
  MetricReport r;
  r.checkpoint_id = cols[0];
  r.split = cols[1];
  r.psnr = parse_opt(cols[2]);
  r.ssim = parse_opt(cols[3]);
  r.tpsnr = parse_opt(cols[4]);
  r.tssim = parse_opt(cols[5]);
  r.fid = parse_opt(cols[6]);
  r.kid = parse_opt(cols[7]);
  if (const auto ew = parse_opt(cols[9])) r.e_warp = *ew * 1e-5;
  r.sample_count = static_cast<std::size_t>(std::stoull(cols[10]));
  return r;
}

void write_reports(const std::filesystem::path& path, const std::vector<MetricReport>& reports) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << kReportHeader << '\n';
  for (const auto& r : reports) f << to_csv_row(r) << '\n';
}

std::vector<MetricReport> read_reports(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != kReportHeader) throw ProtocolError(path.string() + ": unexpected header");
  std::vector<MetricReport> out;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(parse_csv_row(line));
  return out;
}

}  // namespace sidgan::metrics
