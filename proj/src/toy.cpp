#include "sidgan/toy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "sidgan/error.hpp"
#include "sidgan/tensorio.hpp"

namespace sidgan::toy {

namespace {

std::string make_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04zu", prefix, i);
  return buf;
}

io::ManifestEntry image_entry(const std::string& id, const std::string& dir, double exposure) {
  io::ManifestEntry e;
  e.id = id;
  e.path = dir + "/" + id + ".sgt";
  e.kind = io::EntryKind::Image;
  e.frame_count = 1;
  e.exposure_seconds = exposure;
  return e;
}

io::ManifestEntry video_entry(const std::string& id, const std::string& dir, std::uint32_t frames,
                              std::optional<double> exposure) {
  io::ManifestEntry e;
  e.id = id;
  e.path = dir + "/" + id;
  e.kind = io::EntryKind::Video;
  e.frame_count = frames;
  e.exposure_seconds = exposure;
  return e;
}

void link(io::ManifestEntry& b, io::ManifestEntry& c) {
  b.pair_id = c.id;
  c.pair_id = b.id;
}

constexpr double kLongExposure = 1.0;
constexpr double kShortExposure = kLongExposure * kShortScale;

}  // namespace

torch::Tensor color_matrix() {
  return torch::tensor({0.80, 0.15, 0.05, 0.10, 0.75, 0.15, 0.05, 0.20, 0.70}, torch::kFloat64).reshape({3, 3});
}

torch::Tensor procedural_image(std::int64_t h, std::int64_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  const auto ys = torch::linspace(0, 1, h, opts).view({h, 1, 1});
  const auto xs = torch::linspace(0, 1, w, opts).view({1, w, 1});
  auto rgb = [&] { return torch::tensor({u(rng), u(rng), u(rng)}, opts).view({1, 1, 3}); };

  auto img = 0.15 + 0.3 * rgb() * (u(rng) * ys + u(rng) * xs);
  for (int k = 0; k < 4; ++k) {
    const double cy = u(rng), cx = u(rng), r = 0.08 + 0.25 * u(rng);
    const auto d2 = (ys - cy).pow(2) + (xs - cx).pow(2);
    img = img + 0.5 * rgb() * torch::exp(-d2 / (2 * r * r));
  }
  const double fy = 2 + 6 * u(rng), fx = 2 + 6 * u(rng), ph = 6.28 * u(rng);
  img = img + 0.08 * rgb() * torch::sin(6.2831853 * (fy * ys + fx * xs) + ph);
  return img.clamp(0, 1).to(torch::kFloat32).contiguous();
}

std::vector<torch::Tensor> procedural_video(std::int64_t size, std::uint32_t frames, std::mt19937_64& rng) {
  constexpr std::int64_t kStep = 2;
  const std::int64_t margin = kStep * frames;
  const auto canvas = procedural_image(size + 2 * margin, size + 2 * margin, rng);
  std::uniform_int_distribution<int> dir(-1, 1);
  const std::int64_t dy = dir(rng) * kStep, dx = (dir(rng) | 1) * kStep;
  std::vector<torch::Tensor> out;
  for (std::uint32_t t = 0; t < frames; ++t) {
    const std::int64_t top = margin + dy * t, left = margin + dx * t;
    out.push_back(canvas.narrow(0, top, size).narrow(1, left, size).contiguous());
  }
  return out;
}

torch::Tensor a_to_b(const torch::Tensor& a) {
  const auto mixed = torch::einsum("ck,hwk->hwc", {color_matrix(), a.to(torch::kFloat64)}).clamp(0, 1);
  return mixed.pow(1.0 / kGamma).to(torch::kFloat32).contiguous();
}

torch::Tensor b_to_c_clean(const torch::Tensor& b) { return (b.to(torch::kFloat64) * kShortScale).to(torch::kFloat32); }

torch::Tensor b_to_c(const torch::Tensor& b, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, kNoiseSigma);
  auto out = b.to(torch::kFloat64) * kShortScale;
  auto* p = out.data_ptr<double>();
  for (std::int64_t i = 0; i < out.numel(); ++i) p[i] = std::clamp(p[i] + n(rng), 0.0, 1.0);
  return out.to(torch::kFloat32);
}

torch::Tensor to_symmetric(const torch::Tensor& unit) { return (unit.to(torch::kFloat32) * 2.0f - 1.0f).contiguous(); }
torch::Tensor to_unit(const torch::Tensor& symmetric) { return ((symmetric + 1.0f) * 0.5f).contiguous(); }

ToyData make_cyclegan_toy(const ToySpec& spec) {
  std::mt19937_64 rng(spec.seed);
  ToyData d;
  const std::size_t n_val_a = std::max<std::size_t>(2, spec.n_val / 4);
  for (auto split : {io::Split::Train, io::Split::Val}) {
    const bool train = split == io::Split::Train;
    io::DatasetManifest ma{io::Domain::A, split, {}}, mb{io::Domain::B, split, {}}, mc{io::Domain::C, split, {}};
    const std::size_t na = train ? spec.n_videos : n_val_a;
    for (std::size_t i = 0; i < na; ++i) {
      auto e = video_entry(make_id(train ? "a" : "va", i), "a", spec.video_frames, std::nullopt);
      std::vector<torch::Tensor> frames;
      for (const auto& f : procedural_video(spec.size, spec.video_frames, rng)) frames.push_back(to_symmetric(f));
      d.frames.add(e.id, std::move(frames));
      ma.entries.push_back(std::move(e));
    }
    const std::size_t nbc = train ? spec.n_train : spec.n_val;
    for (std::size_t i = 0; i < nbc; ++i) {
      auto eb = image_entry(make_id(train ? "b" : "vb", i), "b", kLongExposure);
      auto ec = image_entry(make_id(train ? "c" : "vc", i), "c", kShortExposure);
      link(eb, ec);
      const auto b = a_to_b(procedural_image(spec.size, spec.size, rng));
      const auto c = b_to_c(b, rng);
      d.frames.add(eb.id, {to_symmetric(b)});
      d.frames.add(ec.id, {to_symmetric(c)});
      d.clean_b[eb.id] = b;
      d.clean_c[ec.id] = b_to_c_clean(b);
      mb.entries.push_back(std::move(eb));
      mc.entries.push_back(std::move(ec));
    }
    d.set.manifests.push_back(std::move(ma));
    d.set.manifests.push_back(std::move(mb));
    d.set.manifests.push_back(std::move(mc));
  }
  io::validate(d.set);
  return d;
}

ToyData make_forward_toy(const ToySpec& spec) {
  std::mt19937_64 rng(spec.seed ^ 0x5eedULL);
  ToyData d;
  for (auto split : {io::Split::Train, io::Split::Val}) {
    const bool train = split == io::Split::Train;
    io::DatasetManifest mb{io::Domain::B, split, {}}, mc{io::Domain::C, split, {}};
    const std::size_t n = train ? spec.n_static : spec.n_static_val;
    for (std::size_t i = 0; i < n; ++i) {
      auto eb = image_entry(make_id(train ? "rb" : "vrb", i), "real_b", kLongExposure);
      auto ec = video_entry(make_id(train ? "rc" : "vrc", i), "real_c", spec.static_frames, kShortExposure);
      link(eb, ec);
      const auto b = a_to_b(procedural_image(spec.size, spec.size, rng));
      std::vector<torch::Tensor> frames;
      for (std::uint32_t t = 0; t < spec.static_frames; ++t) frames.push_back(to_symmetric(b_to_c(b, rng)));
      d.frames.add(eb.id, {to_symmetric(b)});
      d.frames.add(ec.id, std::move(frames));
      d.clean_b[eb.id] = b;
      d.clean_c[ec.id] = b_to_c_clean(b);
      mb.entries.push_back(std::move(eb));
      mc.entries.push_back(std::move(ec));
    }
    d.set.manifests.push_back(std::move(mb));
    d.set.manifests.push_back(std::move(mc));
  }
  io::validate(d.set);
  return d;
}

io::ManifestSet subset_pairs(const io::ManifestSet& set, io::Split split, std::size_t count, std::uint64_t seed) {
  const auto& b = set.at(io::Domain::B, split);
  const auto& c = set.at(io::Domain::C, split);
  if (count == 0 || count > c.size())
    throw ConfigError("subset size " + std::to_string(count) + " outside 1.." + std::to_string(c.size()));
  std::vector<std::size_t> order(c.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(count);
  std::sort(order.begin(), order.end());

  io::ManifestSet out;
  out.base_dir = set.base_dir;
  for (const auto& m : set.manifests)
    if (m.split != split || (m.domain != io::Domain::B && m.domain != io::Domain::C)) out.manifests.push_back(m);
  io::DatasetManifest nb{io::Domain::B, split, {}}, nc{io::Domain::C, split, {}};
  for (auto i : order) {
    const auto& ec = c.entries[i];
    const auto* eb = ec.pair_id ? b.find(*ec.pair_id) : nullptr;
    if (!eb) throw ManifestError("entry '" + ec.id + "' has no pair");
    nc.entries.push_back(ec);
    nb.entries.push_back(*eb);
  }
  out.manifests.push_back(std::move(nb));
  out.manifests.push_back(std::move(nc));
  io::validate(out);
  return out;
}

void write_to_disk(const ToyData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& m : data.set.manifests)
    for (const auto& e : m.entries) {
      std::vector<torch::Tensor> frames;
      for (std::uint32_t t = 0; t < e.frame_count; ++t) frames.push_back(data.frames.frame(e, t));
      if (e.kind == io::EntryKind::Video) {
        data::write_video(dir / e.path, frames);
      } else {
        std::filesystem::create_directories((dir / e.path).parent_path());
        io::write_tensor(dir / e.path, frames.front());
      }
    }
  for (const auto& [id, t] : data.clean_c) {
    std::filesystem::create_directories(dir / "clean");
    io::write_tensor(dir / "clean" / (id + ".sgt"), t);
  }
  io::save_manifest(dir / "manifest.json", data.set);
}

}  // namespace sidgan::toy
