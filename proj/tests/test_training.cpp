#include <doctest.h>

#include <fstream>
#include <set>

#include "sidgan/error.hpp"
#include "sidgan/toy.hpp"
#include "sidgan/training.hpp"
#include "test_util.hpp"

using namespace sidgan;
using sidgan::test::bitwise_equal;
using sidgan::test::TempDir;

namespace {

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

toy::ToySpec tiny_spec() {
  toy::ToySpec t;
  t.size = 32;
  t.n_train = 4;
  t.n_val = 3;
  t.n_videos = 4;
  t.video_frames = 3;
  t.n_static = 3;
  t.n_static_val = 2;
  t.static_frames = 3;
  return t;
}

train::TrainConfig tiny_config(std::uint32_t epochs, double lr) {
  train::TrainConfig c;
  c.epochs_constant = epochs;
  c.epochs_decay = 0;
  c.base_lr = lr;
  c.crop = 32;
  c.seed = 11;
  c.eval_interval = 1;
  return c;
}

std::vector<torch::Tensor> snapshot(const nets::ModelBundle& b) {
  std::vector<torch::Tensor> out;
  for (const auto& [id, n] : b.named())
    for (const auto& p : n->parameters()) out.push_back(p.detach().clone());
  return out;
}

bool all_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!bitwise_equal(a[i], b[i])) return false;
  return true;
}

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("learning rate schedules") {
    train::TrainConfig c;
    CHECK(train::lr_at_epoch(c, 0) == 1e-4);
    CHECK(train::lr_at_epoch(c, 49) == 1e-4);
    CHECK(train::lr_at_epoch(c, 60) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(train::lr_at_epoch(c, 69) == doctest::Approx(5e-6).epsilon(1e-12));
    CHECK_THROWS_AS(train::lr_at_epoch(c, 70), ConfigError);
    for (std::uint32_t e = 1; e < 70; ++e) CHECK(train::lr_at_epoch(c, e) <= train::lr_at_epoch(c, e - 1));

    train::ForwardTrainConfig f;
    CHECK(train::forward_lr_at_epoch(f, 0) == 1e-4);
    CHECK(train::forward_lr_at_epoch(f, 499) == 1e-4);
    CHECK(train::forward_lr_at_epoch(f, 500) == 1e-5);
    CHECK(train::forward_lr_at_epoch(f, 999) == 1e-5);
    CHECK_THROWS_AS(train::forward_lr_at_epoch(f, 1000), ConfigError);
  }

  TEST_CASE("config validation") {
    auto c = tiny_config(1, 1e-4);
    c.crop = 40;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.crop = 32;
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    train::ForwardTrainConfig f;
    f.phase_boundary = 2000;
    CHECK_THROWS_AS(f.validate(), ConfigError);
    f.phase_boundary = 500;
    f.plan.stages = {{train::StageId::FinetuneRealStatic, 1, train::DataSource::Real},
                     {train::StageId::TrainRealStatic, 1, train::DataSource::Real}};
    CHECK_THROWS_AS(f.validate(), ConfigError);
    f.plan = train::TrainPlan::real_only(2, 2);
    CHECK_NOTHROW(f.validate());
    f.plan.stages[0].source = train::DataSource::Synthetic;
    CHECK_THROWS_AS(f.validate(), ConfigError);

    const auto round = train::forward_config_from_json(train::to_json(train::ForwardTrainConfig{}));
    CHECK(train::to_json(round) == train::to_json(train::ForwardTrainConfig{}));
    const auto rc = train::train_config_from_json(train::to_json(c));
    CHECK(train::to_json(rc) == train::to_json(c));
  }

  TEST_CASE("zero learning rate leaves every parameter bit-unchanged") {
    auto toy = toy::make_cyclegan_toy(tiny_spec());
    const train::DataView view{&toy.set, &toy.frames};
    auto bundle = nets::ModelBundle::create(tiny_bundle(), 3);
    const auto before = snapshot(bundle);
    train::train_cyclegan_ab(bundle, view, tiny_config(1, 0.0));
    CHECK(all_equal(before, snapshot(bundle)));
    auto cfg = tiny_config(1, 0.0);
    cfg.weights = losses::LossWeights::bc();
    train::train_cyclegan_bc(bundle, view, cfg);
    CHECK(all_equal(before, snapshot(bundle)));

    auto ftoy = toy::make_forward_toy(tiny_spec());
    train::ForwardTrainConfig f;
    f.plan = train::TrainPlan::real_only(1, 1);
    f.lr_phase1 = f.lr_phase2 = 0.0;
    f.crop = 32;
    train::train_forward(bundle, {{&ftoy.set, &ftoy.frames}, std::nullopt}, f);
    CHECK(all_equal(before, snapshot(bundle)));
  }

  TEST_CASE("training changes parameters and is deterministic for a fixed seed") {
    auto toy = toy::make_cyclegan_toy(tiny_spec());
    const train::DataView view{&toy.set, &toy.frames};
    auto cfg = tiny_config(3, 2e-4);
    auto run = [&](bool bc) {
      auto bundle = nets::ModelBundle::create(tiny_bundle(), 5);
      const auto before = snapshot(bundle);
      auto trace = bc ? train::train_cyclegan_bc(bundle, view, cfg) : train::train_cyclegan_ab(bundle, view, cfg);
      CHECK(!all_equal(before, snapshot(bundle)));
      return std::make_pair(trace, snapshot(bundle));
    };
    for (bool bc : {false, true}) {
      const auto [t1, p1] = run(bc);
      const auto [t2, p2] = run(bc);
      REQUIRE(t1.step_losses.size() == 3 * 4);
      CHECK(t1.step_losses == t2.step_losses);
      CHECK(all_equal(p1, p2));
      for (std::size_t e = 0; e < 3; ++e) CHECK(t1.epochs[e].losses == t2.epochs[e].losses);
      CHECK(t1.epochs.back().metrics.count("kid") == 1);
      if (bc) CHECK(t1.epochs.back().metrics.count("psnr_bc") == 1);
    }
  }

  TEST_CASE("discriminator and generator parameter sets are disjoint") {
    auto bundle = nets::ModelBundle::create(tiny_bundle(), 7);
    std::set<const void*> g, d;
    for (auto* m : {bundle.g_ab.get(), bundle.g_ba.get(), bundle.g_bc.get(), bundle.g_cb.get()})
      for (const auto& p : m->parameters()) g.insert(p.data_ptr());
    for (auto* m : {bundle.d_a.get(), bundle.d_b.get(), bundle.d_c.get()})
      for (const auto& p : m->parameters()) CHECK(g.count(p.data_ptr()) == 0);

    // A discriminator step cannot move generator weights and vice versa.
    torch::optim::Adam opt_d(bundle.d_b->parameters(), torch::optim::AdamOptions(1e-2));
    torch::optim::Adam opt_g(bundle.g_ab->parameters(), torch::optim::AdamOptions(1e-2));
    const auto x = torch::rand({1, 3, 32, 32}) * 2 - 1;
    const auto g_before = snapshot(bundle);
    auto fake = bundle.g_ab->forward(x);
    auto loss_d = losses::gan_loss_d(bundle.d_b->forward(x), bundle.d_b->forward(fake));
    opt_d.zero_grad();
    opt_g.zero_grad();
    loss_d.backward();
    const auto g_params_before = bundle.g_ab->parameters()[0].clone();
    opt_d.step();
    CHECK(bitwise_equal(bundle.g_ab->parameters()[0], g_params_before));
    const auto d_params_before = bundle.d_b->parameters()[0].clone();
    opt_g.zero_grad();
    losses::gan_loss_g(bundle.d_b->forward(bundle.g_ab->forward(x))).backward();
    opt_g.step();
    CHECK(bitwise_equal(bundle.d_b->parameters()[0], d_params_before));
    CHECK(!bitwise_equal(bundle.g_ab->parameters()[0], g_params_before));
  }

  TEST_CASE("perfect-copy task drives the supervised loss toward zero") {
    auto spec = tiny_spec();
    spec.n_train = 4;
    auto toy = toy::make_cyclegan_toy(spec);
    // Make C identical to B.
    for (auto& m : toy.set.manifests) {
      if (m.domain != io::Domain::C) continue;
      for (auto& e : m.entries) toy.frames.add(e.id, {toy.frames.frame(*toy.set.at(io::Domain::B, m.split).find(*e.pair_id), 0)});
    }
    auto bspec = tiny_bundle();
    bspec.generator.base_width = 8;
    auto bundle = nets::ModelBundle::create(bspec, 9);
    auto cfg = tiny_config(50, 1e-3);
    cfg.weights = losses::LossWeights::bc();
    cfg.eval_interval = 0;
    const auto trace = train::train_cyclegan_bc(bundle, {&toy.set, &toy.frames}, cfg);
    const double first = trace.epochs.front().losses.at("supervised");
    const double last = trace.epochs.back().losses.at("supervised");
    MESSAGE("supervised loss " << first << " -> " << last);
    // The adversarial terms stay active, so the loss plateaus above zero.
    CHECK(last < 0.35 * first);
    for (std::size_t e = 10; e < trace.epochs.size(); e += 10)
      CHECK(trace.epochs[e].losses.at("supervised") < trace.epochs[e - 10].losses.at("supervised"));
  }

  TEST_CASE("model selection by KID") {
    train::TrainTrace t;
    t.primary_model = "g_ab";
    const std::vector<double> kids{5.06, 4.78, 4.68, 3.99};
    for (std::uint32_t i = 0; i < kids.size(); ++i) t.epochs.push_back({i * 5 + 4, "", 0, 0, {}, {{"kid", kids[i]}}, {}});
    CHECK(train::select_model_by_kid(t).epoch == 19);
    train::TrainTrace single;
    single.epochs.push_back({4, "", 0, 0, {}, {{"kid", 1.0}}, {}});
    CHECK(train::select_model_by_kid(single).epoch == 4);
    train::TrainTrace tie;
    tie.epochs.push_back({4, "", 0, 0, {}, {{"kid", 4.0}}, {}});
    tie.epochs.push_back({9, "", 0, 0, {}, {{"kid", 4.0}}, {}});
    CHECK(train::select_model_by_kid(tie).epoch == 4);
    train::TrainTrace none;
    none.epochs.push_back({0, "", 0, 0, {}, {}, {}});
    CHECK_THROWS_AS(train::select_model_by_kid(none), ProtocolError);
  }

  TEST_CASE("checkpoints and trace files are written and reloadable") {
    TempDir dir("train");
    auto toy = toy::make_cyclegan_toy(tiny_spec());
    auto bundle = nets::ModelBundle::create(tiny_bundle(), 13);
    auto cfg = tiny_config(4, 1e-4);
    cfg.eval_interval = 2;
    const auto trace = train::train_cyclegan_ab(bundle, {&toy.set, &toy.frames}, cfg, dir.path());
    CHECK(std::filesystem::exists(dir / "trace.json"));
    CHECK(std::filesystem::exists(dir / "losses.csv"));
    CHECK(std::filesystem::exists(io::epoch_dir(dir.path(), 1) / "g_ab.sgt"));
    CHECK(std::filesystem::exists(io::epoch_dir(dir.path(), 3) / "optim_g.optim.sgt"));
    const auto best = train::select_model_by_kid(trace);
    CHECK(!best.parameters.empty());
    auto restored = nets::build_unet(tiny_bundle().generator);
    io::restore_parameters(*restored, io::load_checkpoint(dir.path(), 3, "g_ab").parameters);
    for (std::size_t i = 0; i < restored->parameters().size(); ++i)
      CHECK(bitwise_equal(restored->parameters()[i], bundle.g_ab->parameters()[i]));
    std::ifstream in(dir / "trace.json");
    const auto back = train::TrainTrace::from_json(nlohmann::json::parse(in));
    CHECK(back.step_losses == trace.step_losses);
    CHECK(back.epochs.size() == trace.epochs.size());
    CHECK(back.epochs[1].metrics == trace.epochs[1].metrics);
  }

  TEST_CASE("three-step plan bookkeeping and provenance") {
    auto spec = tiny_spec();
    auto real = toy::make_forward_toy(spec);
    auto synth = toy::make_forward_toy([&] {
      auto s = spec;
      s.seed = 99;
      return s;
    }());
    // Give the synthetic set its own ids and dynamic ground truth.
    toy::ToyData syn;
    for (auto& m : synth.set.manifests) {
      io::DatasetManifest copy{m.domain, m.split, {}};
      for (auto e : m.entries) {
        auto frames = std::vector<torch::Tensor>{};
        for (std::uint32_t t = 0; t < (m.domain == io::Domain::B ? spec.static_frames : e.frame_count); ++t)
          frames.push_back(synth.frames.frame(e, m.domain == io::Domain::B ? 0 : t) * (1.0f - 0.01f * t));
        e.id = "syn_" + e.id;
        if (e.pair_id) e.pair_id = "syn_" + *e.pair_id;
        if (m.domain == io::Domain::B) {
          e.kind = io::EntryKind::Video;
          e.frame_count = spec.static_frames;
        }
        syn.frames.add(e.id, frames);
        copy.entries.push_back(e);
      }
      syn.set.manifests.push_back(copy);
    }
    auto bundle = nets::ModelBundle::create(tiny_bundle(), 17);
    train::ForwardTrainConfig f;
    f.plan = train::TrainPlan::three_step(2, 2, 2);
    f.crop = 32;
    f.seed = 4;
    const train::ForwardData fd{{&real.set, &real.frames}, train::DataView{&syn.set, &syn.frames}};
    const auto trace = train::train_forward(bundle, fd, f);
    REQUIRE(trace.stages.size() == 3);
    CHECK(trace.stages[0].stage == "train_real_static");
    CHECK(trace.stages[1].stage == "finetune_synthetic_dynamic");
    CHECK(trace.stages[2].stage == "finetune_real_static");
    CHECK(trace.stages[1].first_epoch == 2);
    CHECK(trace.stages[2].first_epoch == 4);
    CHECK(trace.epochs.size() == 6);
    std::set<std::string> real_ids, syn_ids;
    for (const auto& e : real.set.at(io::Domain::C, io::Split::Train).entries) real_ids.insert(e.id);
    for (const auto& e : syn.set.at(io::Domain::C, io::Split::Train).entries) syn_ids.insert(e.id);
    for (const auto& s : trace.samples) {
      const bool synthetic_stage = s.stage == "finetune_synthetic_dynamic";
      CHECK(s.source == (synthetic_stage ? "synthetic" : "real"));
      CHECK((synthetic_stage ? syn_ids : real_ids).count(s.id) == 1);
    }
    CHECK(trace.samples.size() == 2 * 3 + 2 * 3 + 2 * 3);

    f.plan = train::TrainPlan::real_only(2, 2);
    const auto baseline = train::train_forward(bundle, {{&real.set, &real.frames}, std::nullopt}, f);
    CHECK(baseline.stages.size() == 2);
    for (const auto& s : baseline.samples) CHECK(s.source == "real");

    f.plan = train::TrainPlan::three_step(1, 1, 1);
    CHECK_THROWS_AS(train::train_forward(bundle, {{&real.set, &real.frames}, std::nullopt}, f), ManifestError);
  }

  TEST_CASE("apply_generator pads to the network divisor and crops back") {
    nets::UNetSpec s;
    s.levels = 3;
    s.base_width = 4;
    auto g = nets::build_unet(s);
    const auto out = train::apply_generator(*g, torch::rand({30, 21, 3}));
    CHECK(out.sizes().vec() == std::vector<std::int64_t>{30, 21, 3});
    const auto a = train::apply_generator(*g, torch::rand({32, 32, 3}));
    CHECK(a.sizes().vec() == std::vector<std::int64_t>{32, 32, 3});
  }

  TEST_CASE("forward input scaling by exposure ratio") {
    io::ManifestEntry c, b;
    c.id = "c";
    b.id = "b";
    c.exposure_seconds = 0.1;
    b.exposure_seconds = 1.0;
    // unit 0.05 -> 0.5 -> symmetric 0; unit 0.2 clips to 1
    const auto frame = torch::tensor({-0.9f, -0.6f, -1.0f}).view({1, 1, 3});
    const auto out = train::forward_input(frame, c, b, true);
    CHECK(out.dtype() == torch::kFloat32);
    CHECK(out[0][0][0].item<float>() == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(out[0][0][1].item<float>() == 1.0f);
    CHECK(out[0][0][2].item<float>() == -1.0f);
    CHECK(torch::equal(train::forward_input(frame, c, b, false), frame));
    c.exposure_seconds.reset();
    CHECK_THROWS_AS(train::forward_input(frame, c, b, true), ManifestError);
    CHECK(torch::equal(train::forward_input(frame, c, b, false), frame));
  }
}
