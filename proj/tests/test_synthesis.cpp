#include <doctest.h>

#include <cmath>

#include "sidgan/error.hpp"
#include "sidgan/synthesis.hpp"
#include "sidgan/tensorio.hpp"
#include "test_util.hpp"

using namespace sidgan;
using sidgan::test::bitwise_equal;
using sidgan::test::TempDir;

namespace {

const double kM[3][3] = {{0.80, 0.15, 0.05}, {0.10, 0.75, 0.15}, {0.05, 0.20, 0.70}};

// Symmetric-range analytic maps evaluated with tensor ops in double.
synth::GeneratorRef analytic_ab() {
  const auto m = torch::tensor({0.80, 0.15, 0.05, 0.10, 0.75, 0.15, 0.05, 0.20, 0.70}, torch::kFloat64).reshape({3, 3});
  return {[m](const torch::Tensor& x) {
            const auto unit = (x.to(torch::kFloat64) + 1) / 2;
            const auto b = torch::matmul(unit, m.t()).clamp(0, 1).pow(1 / 2.2);
            return b * 2 - 1;
          },
          "analytic_ab"};
}

synth::GeneratorRef analytic_bc() {
  return {[](const torch::Tensor& x) { return ((x.to(torch::kFloat64) + 1) / 2 * 0.1) * 2 - 1; }, "analytic_bc"};
}

// Scalar per-pixel reference of the composed map.
double oracle(const torch::Tensor& px, int c) {
  const auto a = px.accessor<float, 1>();
  double v = 0;
  for (int k = 0; k < 3; ++k) v += kM[c][k] * (a[k] + 1.0) / 2.0;
  v = std::pow(std::min(std::max(v, 0.0), 1.0), 1 / 2.2);
  return 0.1 * v * 2 - 1;
}

data::VideoClip random_clip(std::size_t frames, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  torch::manual_seed(seed);
  data::VideoClip clip;
  for (std::size_t t = 0; t < frames; ++t) clip.frames.push_back(torch::rand({h, w, 3}) * 2 - 1);
  return clip;
}

nets::UNetSpec small_unet() {
  nets::UNetSpec s;
  s.levels = 3;
  s.base_width = 4;
  return s;
}

}  // namespace

TEST_SUITE("synthesis") {
  TEST_CASE("composition of analytic generators matches the closed form") {
    const auto clip = random_clip(3, 9, 11, 1);
    const auto p = synth::synthesize_pair(clip, analytic_ab(), analytic_bc(), "x");
    double worst = 0;
    for (std::size_t t = 0; t < clip.frames.size(); ++t)
      for (std::int64_t i = 0; i < 9; ++i)
        for (std::int64_t j = 0; j < 11; ++j)
          for (int c = 0; c < 3; ++c)
            worst = std::max(worst, std::abs(p.short_frames.frames[t][i][j][c].item<double>() -
                                             oracle(clip.frames[t][i][j].contiguous(), c)));
    CHECK(worst < 1e-6);
    CHECK(p.generator_checkpoint_ids == std::pair<std::string, std::string>{"analytic_ab", "analytic_bc"});
  }

  TEST_CASE("identity generators copy the clip") {
    const synth::GeneratorRef id{[](const torch::Tensor& x) { return x.clone(); }, "id"};
    const auto clip = random_clip(2, 8, 8, 2);
    const auto p = synth::synthesize_pair(clip, id, id);
    for (std::size_t t = 0; t < 2; ++t) {
      CHECK(bitwise_equal(p.long_frames.frames[t], clip.frames[t]));
      CHECK(bitwise_equal(p.short_frames.frames[t], clip.frames[t]));
    }
  }

  TEST_CASE("length, determinism, ordering and range with U-Net generators") {
    nets::UNet g_ab(small_unet()), g_bc(small_unet());
    nets::init_weights_he(g_ab, 1);
    nets::init_weights_he(g_bc, 2);
    const auto ab = synth::generator_ref(g_ab, "g_ab@5");
    const auto bc = synth::generator_ref(g_bc, "g_bc@5");
    // 30x22 is not a multiple of the divisor; padding and cropping keep the size.
    const auto clip = random_clip(7, 30, 22, 3);
    const auto p = synth::synthesize_pair(clip, ab, bc);
    REQUIRE(p.long_frames.frames.size() == 7);
    REQUIRE(p.short_frames.frames.size() == 7);
    CHECK(p.short_frames.frames[0].sizes() == clip.frames[0].sizes());

    const auto again = synth::synthesize_pair(clip, ab, bc);
    for (std::size_t t = 0; t < 7; ++t) CHECK(bitwise_equal(p.short_frames.frames[t], again.short_frames.frames[t]));

    data::VideoClip reversed;
    reversed.frames.assign(clip.frames.rbegin(), clip.frames.rend());
    const auto pr = synth::synthesize_pair(reversed, ab, bc);
    for (std::size_t t = 0; t < 7; ++t) CHECK(bitwise_equal(pr.long_frames.frames[t], p.long_frames.frames[6 - t]));

    for (const auto& f : p.short_frames.frames) CHECK(f.abs().max().item<float>() <= 1.0f);
  }

  TEST_CASE("channel mismatch is rejected") {
    auto spec = small_unet();
    spec.in_channels = 4;
    nets::UNet g4(spec);
    nets::UNet g3(small_unet());
    const auto clip = random_clip(1, 8, 8, 4);
    CHECK_THROWS_AS(synth::synthesize_pair(clip, synth::generator_ref(g3, "a"), synth::generator_ref(g4, "b")),
                    ShapeError);
    CHECK_THROWS_AS(synth::synthesize_pair(clip, synth::generator_ref(g4, "a"), synth::generator_ref(g3, "b")),
                    ShapeError);
  }

  TEST_CASE("dataset writing, manifest round trip and supply errors") {
    data::MemoryFrameSource src;
    io::ManifestSet set;
    io::DatasetManifest a{io::Domain::A, io::Split::Train, {}};
    for (int i = 0; i < 5; ++i) {
      io::ManifestEntry e;
      e.id = "clip" + std::to_string(i);
      e.path = "a/" + e.id;
      e.kind = io::EntryKind::Video;
      e.frame_count = 4;
      src.add(e.id, random_clip(4, 8, 8, 10 + i).frames);
      a.entries.push_back(e);
    }
    set.manifests.push_back(a);

    TempDir dir("synth");
    synth::SynthesisOptions opt;
    opt.count = 3;
    const auto out = synth::synthesize_dataset(set, src, analytic_ab(), analytic_bc(), dir.path(), opt);
    CHECK(out.count(io::Domain::B) == 3);
    CHECK(out.count(io::Domain::C) == 3);

    const auto loaded = io::load_manifest(dir / "manifest.json");
    CHECK_NOTHROW(io::validate(loaded));
    const auto& c = loaded.at(io::Domain::C, io::Split::Train);
    const auto& b = loaded.at(io::Domain::B, io::Split::Train);
    CHECK(io::resolve_pairs(b, c).size() == 3);
    for (const auto& e : c.entries) {
      CHECK(e.frame_count == 4);
      CHECK(e.attributes.at("g_ab") == "analytic_ab");
      CHECK(e.attributes.at("g_bc") == "analytic_bc");
    }
    data::DiskFrameSource disk(loaded.base_dir);
    const auto direct = synth::synthesize_pair(
        {{src.frame(a.entries[1], 0), src.frame(a.entries[1], 1), src.frame(a.entries[1], 2),
          src.frame(a.entries[1], 3)}},
        analytic_ab(), analytic_bc());
    CHECK(test::max_abs_diff(disk.frame(c.entries[1], 2), direct.short_frames.frames[2]) < 1e-6);

    opt.count = 10;
    CHECK_THROWS_AS(synth::synthesize_dataset(set, src, analytic_ab(), analytic_bc(), dir / "more", opt),
                    ManifestError);
  }
}
