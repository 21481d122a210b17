#include <doctest.h>

#include <fstream>

#include "sidgan/checkpoint.hpp"
#include "sidgan/cli.hpp"
#include "sidgan/error.hpp"
#include "sidgan/plot.hpp"
#include "sidgan/tensorio.hpp"
#include "test_util.hpp"

using namespace sidgan;
using sidgan::test::bitwise_equal;
using sidgan::test::TempDir;

namespace {

io::ManifestEntry entry(const std::string& id, io::EntryKind kind, std::uint32_t frames, double exposure) {
  io::ManifestEntry e;
  e.id = id;
  e.path = id + (kind == io::EntryKind::Image ? ".sgt" : "");
  e.kind = kind;
  e.frame_count = frames;
  e.exposure_seconds = exposure;
  return e;
}

// Paired static clips whose ground truth equals every input frame.
struct ClipFixture {
  io::ManifestSet set;
  data::MemoryFrameSource frames;
  std::vector<torch::Tensor> truths;

  ClipFixture(std::size_t clips, std::uint32_t length, std::uint64_t seed) {
    torch::manual_seed(seed);
    io::DatasetManifest b{io::Domain::B, io::Split::Val, {}}, c{io::Domain::C, io::Split::Val, {}};
    for (std::size_t i = 0; i < clips; ++i) {
      auto eb = entry("b" + std::to_string(i), io::EntryKind::Image, 1, 1.0);
      auto ec = entry("c" + std::to_string(i), io::EntryKind::Video, length, 0.1);
      eb.pair_id = ec.id;
      ec.pair_id = eb.id;
      const auto gt = torch::rand({24, 24, 3}) * 2 - 1;
      frames.add(eb.id, {gt});
      frames.add(ec.id, std::vector<torch::Tensor>(length, gt));
      truths.push_back(gt);
      b.entries.push_back(eb);
      c.entries.push_back(ec);
    }
    set.manifests = {b, c};
  }
};

nets::BundleSpec tiny_bundle() {
  nets::BundleSpec s;
  s.generator.levels = 2;
  s.generator.base_width = 4;
  s.discriminator.base_width = 4;
  s.discriminator.downsample_layers = 3;
  s.discriminator.input_patch = 32;
  s.forward_model = s.generator;
  return s;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("ablation fractions must be strictly increasing in (0, 1]") {
    cli::AblationSpec s;
    CHECK_NOTHROW(s.validate());
    s.real_fractions = {0.1, 0.1};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.real_fractions = {0.5, 0.2};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.real_fractions = {0.0, 0.5};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.real_fractions = {0.5, 1.2};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.real_fractions = {1.0};
    s.arms = {false, false};
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }

  TEST_CASE("config layering and JSON round trip") {
    CHECK_THROWS_AS(cli::preset("huge"), ConfigError);
    const auto toy = cli::preset("toy");
    CHECK(toy.bundle.generator.levels == 3);
    CHECK_NOTHROW(toy.validate());
    CHECK_NOTHROW(cli::preset("paper").validate());

    auto c = toy;
    c.run_id = "x";
    c.apply_seed(42);
    c.ablation.real_fractions = {0.25, 0.5};
    c.eval.protocol_frame = 3;
    const auto back = cli::config_from_json(cli::to_json(c), cli::preset("paper"));
    CHECK(cli::to_json(back) == cli::to_json(c));
    CHECK(back.forward.seed == 42);

    TempDir dir("cfg");
    {
      std::ofstream f(dir / "c.json");
      f << R"({"preset": "toy", "run_id": "layered", "train_bc": {"base_lr": 0.5}, "seed": 7})";
    }
    const auto loaded = cli::load_config(dir / "c.json", std::nullopt);
    CHECK(loaded.run_id == "layered");
    CHECK(loaded.train_bc.base_lr == 0.5);
    CHECK(loaded.train_bc.crop == 64);
    CHECK(loaded.train_ab.seed == 7);
    {
      std::ofstream f(dir / "bad.json");
      f << "{not json";
    }
    CHECK_THROWS_AS(cli::load_config(dir / "bad.json", std::nullopt), ConfigError);
  }

  TEST_CASE("checkpoint references") {
    const auto a = cli::parse_checkpoint_ref("runs/bc");
    CHECK(a.run_dir == "runs/bc");
    CHECK(!a.epoch);
    const auto b = cli::parse_checkpoint_ref("runs/bc@19");
    CHECK(b.run_dir == "runs/bc");
    CHECK(*b.epoch == 19);
    CHECK_THROWS_AS(cli::parse_checkpoint_ref("runs/bc@x1"), ConfigError);
  }

  TEST_CASE("evaluation protocol") {
    const synth::FrameMap identity = [](const torch::Tensor& x) { return x.clone(); };
    cli::EvalSettings ev;

    SUBCASE("identity model on identical input and ground truth") {
      ClipFixture fx(3, 6, 1);
      const auto r = cli::evaluate_clips(identity, {&fx.set, &fx.frames}, ev, "id");
      CHECK(*r.psnr == doctest::Approx(100.0));
      CHECK(*r.ssim == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(r.sample_count == 3);
      CHECK(r.kid.has_value());
    }
    SUBCASE("clips shorter than the protocol frame are rejected") {
      ClipFixture fx(2, 3, 2);
      CHECK_THROWS_AS(cli::evaluate_clips(identity, {&fx.set, &fx.frames}, ev, "id"), ProtocolError);
    }
    SUBCASE("image metrics use the fifth output frame") {
      ClipFixture fx(2, 6, 3);
      // Model adds a frame-independent offset; compare with direct metric calls.
      const synth::FrameMap shift = [](const torch::Tensor& x) { return (x * 0.9 + 0.05).contiguous(); };
      const auto r = cli::evaluate_clips(shift, {&fx.set, &fx.frames}, ev, "shift");
      double psnr = 0, ssim = 0;
      for (const auto& gt : fx.truths) {
        const auto out = toy::to_unit(shift(gt));
        psnr += metrics::psnr(out, toy::to_unit(gt)) / 2;
        ssim += metrics::ssim(out, toy::to_unit(gt)) / 2;
      }
      CHECK(*r.psnr == doctest::Approx(psnr).epsilon(1e-12));
      CHECK(*r.ssim == doctest::Approx(ssim).epsilon(1e-12));
    }
  }

  TEST_CASE("ablation CSV and plot") {
    const std::vector<cli::AblationRow> rows{
        {0.02, "real_only", 1, 18.5, 0.61}, {0.02, "synthetic", 1, 21.25, 0.7}, {1.0, "real_only", 50, 26, 0.9}};
    TempDir dir("abl");
    cli::write_ablation_csv(dir / "a.csv", rows);
    const auto back = cli::read_ablation_csv(dir / "a.csv");
    REQUIRE(back.size() == 3);
    CHECK(back[1].arm == "synthetic");
    CHECK(back[1].psnr == 21.25);
    CHECK(back[2].real_count == 50);

    cli::plot_ablation(dir / "a.png", rows);
    const auto img = plot::read_png(dir / "a.png");
    CHECK(img.width == 960);
    bool red = false, blue = false;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const auto p = img.at(x, y);
        red |= p == plot::Rgb{200, 60, 40};
        blue |= p == plot::Rgb{40, 90, 200};
      }
    CHECK(red);
    CHECK(blue);
  }

  TEST_CASE("ablation with a single full fraction yields one row per arm") {
    auto spec = toy::ToySpec{};
    spec.size = 32;
    spec.n_static = 3;
    spec.n_static_val = 2;
    spec.static_frames = 5;
    auto real = toy::make_forward_toy(spec);
    auto synth = toy::make_forward_toy(spec);
    cli::AblationInputs in;
    in.real = {&real.set, &real.frames};
    in.synthetic = train::DataView{&synth.set, &synth.frames};
    in.bundle = tiny_bundle();
    in.forward.plan = train::TrainPlan::three_step(1, 1, 1);
    in.forward.total_epochs = 3;
    in.forward.phase_boundary = 2;
    in.forward.crop = 32;
    in.eval.split = io::Split::Val;
    cli::AblationSpec a;
    a.real_fractions = {1.0};
    const auto rows = cli::run_ablation(a, in);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].arm == "real_only");
    CHECK(rows[1].arm == "synthetic");
    CHECK(rows[0].real_count == 3);
  }

  TEST_CASE("preprocess reproduces the golden chain and reruns identically") {
    const auto fixture = test::data_dir() / "isp_golden" / "grbg_full_chain";
    TempDir dir("pre");
    const auto mosaic = io::read_tensor(fixture / "mosaic.sgt").to(torch::kUInt16);
    io::write_tensor(dir / "c0.sgt", mosaic);
    io::write_tensor(dir / "b0.sgt", mosaic);
    io::ManifestSet raw;
    auto eb = entry("b0", io::EntryKind::Image, 1, 1.0);
    auto ec = entry("c0", io::EntryKind::Image, 1, 0.1);
    eb.pair_id = ec.id;
    ec.pair_id = eb.id;
    for (auto* e : {&eb, &ec}) e->attributes = {{"cfa", "GRBG"}, {"black_level", "256"}, {"white_level", "4095"}};
    raw.manifests = {{io::Domain::B, io::Split::Train, {eb}}, {io::Domain::C, io::Split::Train, {ec}}};
    io::save_manifest(dir / "raw.json", raw);

    auto cfg = cli::preset("toy");
    cfg.out_dir = dir / "out";
    cfg.manifest = dir / "raw.json";
    cfg.isp.digital_gain = 1.5;
    cfg.isp.bin = true;
    cfg.isp.target_range = isp::ValueRange::Unit;
    cfg.run_id = "one";
    const auto out = cli::cmd_preprocess(cfg);
    const auto got = io::read_tensor(cfg.run_dir() / "c0.sgt");
    CHECK(bitwise_equal(got, io::read_tensor(fixture / "gained.sgt")));
    CHECK(io::load_manifest(cfg.run_dir() / "manifest.json").at(io::Domain::C, io::Split::Train).entries[0].attributes.at(
              "isp_binned") == "true");

    cfg.run_id = "two";
    cli::cmd_preprocess(cfg);
    CHECK(bitwise_equal(io::read_tensor(cfg.run_dir() / "c0.sgt"), got));

    io::ManifestSet empty;
    empty.manifests = {{io::Domain::B, io::Split::Train, {}}};
    io::save_manifest(dir / "empty.json", empty);
    cfg.manifest = dir / "empty.json";
    CHECK_THROWS_AS(cli::cmd_preprocess(cfg), ManifestError);
  }

  TEST_CASE("zero-lr train-ab run leaves restored parameters unchanged") {
    TempDir dir("ab");
    auto cfg = cli::preset("toy");
    cfg.toy.size = 32;
    cfg.toy.n_train = 3;
    cfg.toy.n_val = 2;
    cfg.toy.n_videos = 2;
    cfg.toy.video_frames = 2;
    cfg.toy.n_static = 2;
    cfg.toy.n_static_val = 1;
    cfg.out_dir = dir.path();
    cfg.run_id = "data";
    cli::cmd_make_toy(cfg);

    cfg.bundle = tiny_bundle();
    cfg.train_ab.base_lr = 0;
    cfg.train_ab.epochs_constant = 1;
    cfg.train_ab.epochs_decay = 1;
    cfg.train_ab.crop = 32;
    cfg.apply_seed(5);
    cfg.run_id = "ab";
    cfg.manifest = dir / "data/cyclegan/manifest.json";
    cli::cmd_train_ab(cfg);

    std::uint32_t epoch = 0;
    const auto loaded = cli::load_bundle({dir / "ab", std::nullopt}, &epoch);
    CHECK(epoch == 1);
    const auto fresh = nets::ModelBundle::create(cfg.bundle, 5);
    CHECK(bitwise_equal(loaded.g_ab->parameters()[0], fresh.g_ab->parameters()[0]));
    CHECK(bitwise_equal(loaded.d_b->parameters().back(), fresh.d_b->parameters().back()));

    cfg.manifest = dir / "missing.json";
    CHECK_THROWS(cli::cmd_train_ab(cfg));
  }
}
