#include "sidgan/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "sidgan/checkpoint.hpp"
#include "sidgan/error.hpp"
#include "sidgan/plot.hpp"
#include "sidgan/tensorio.hpp"

namespace sidgan::cli {

namespace fs = std::filesystem;
using nlohmann::json;

void AblationSpec::validate() const {
  if (real_fractions.empty()) throw ConfigError("ablation needs at least one real fraction");
  for (std::size_t i = 0; i < real_fractions.size(); ++i) {
    const double f = real_fractions[i];
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("real fraction " + std::to_string(f) + " outside (0, 1]");
    if (i > 0 && !(f > real_fractions[i - 1])) throw ConfigError("real fractions must be strictly increasing");
  }
  if (!arms[0] && !arms[1]) throw ConfigError("ablation needs at least one arm");
}

fs::path RunConfig::resolve(const fs::path& p) const {
  if (p.empty() || p.is_absolute() || data_root.empty()) return p;
  return data_root / p;
}

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  train_ab.seed = s;
  train_bc.seed = s;
  forward.seed = s;
}

void RunConfig::validate() const {
  if (run_id.empty()) throw ConfigError("run_id must not be empty");
  train_ab.validate();
  train_bc.validate();
  forward.validate();
  ablation.validate();
  if (eval.protocol_frame < 1) throw ConfigError("protocol_frame is 1-based");
}

RunConfig preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "paper") {
    c.train_bc.weights = losses::LossWeights::bc();
    return c;
  }
  if (name != "toy") throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");

  auto& g = c.bundle.generator;
  g.levels = 3;
  g.base_width = 8;
  c.bundle.forward_model = g;
  c.bundle.discriminator.base_width = 8;
  c.bundle.discriminator.downsample_layers = 3;
  c.bundle.discriminator.input_patch = 48;

  for (auto* t : {&c.train_ab, &c.train_bc}) {
    t->base_lr = 2e-4;
    t->crop = 64;
    t->eval_interval = 5;
  }
  c.train_ab.epochs_constant = 15;
  c.train_ab.epochs_decay = 15;
  c.train_bc.epochs_constant = 20;
  c.train_bc.epochs_decay = 20;
  c.train_bc.weights = losses::LossWeights::bc();

  c.forward.plan = train::TrainPlan::three_step(60, 10, 60);
  c.forward.total_epochs = 130;
  c.forward.phase_boundary = 100;
  c.forward.lr_phase1 = 1e-3;
  c.forward.lr_phase2 = 1e-4;
  c.forward.crop = 64;
  // Toy short clips are not preprocessed, so the forward model brightens them itself.
  c.forward.ev_scale_input = true;

  c.toy.n_static = 50;
  c.toy.static_frames = 6;
  return c;
}

namespace {

json to_json(const isp::IspConfig& c) {
  return {{"digital_gain", c.digital_gain},
          {"target_range", isp::to_string(c.target_range)},
          {"bin", c.bin},
          {"denoised", c.denoised}};
}

isp::IspConfig isp_from_json(const json& j, isp::IspConfig d) {
  d.digital_gain = j.value("digital_gain", d.digital_gain);
  if (j.contains("target_range")) d.target_range = isp::parse_range(j["target_range"].get<std::string>());
  d.bin = j.value("bin", d.bin);
  d.denoised = j.value("denoised", d.denoised);
  return d;
}

json to_json(const toy::ToySpec& t) {
  return {{"size", t.size},         {"n_train", t.n_train},       {"n_val", t.n_val},
          {"n_videos", t.n_videos}, {"video_frames", t.video_frames}, {"n_static", t.n_static},
          {"n_static_val", t.n_static_val}, {"static_frames", t.static_frames}, {"seed", t.seed}};
}

toy::ToySpec toy_from_json(const json& j, toy::ToySpec d) {
  d.size = j.value("size", d.size);
  d.n_train = j.value("n_train", d.n_train);
  d.n_val = j.value("n_val", d.n_val);
  d.n_videos = j.value("n_videos", d.n_videos);
  d.video_frames = j.value("video_frames", d.video_frames);
  d.n_static = j.value("n_static", d.n_static);
  d.n_static_val = j.value("n_static_val", d.n_static_val);
  d.static_frames = j.value("static_frames", d.static_frames);
  d.seed = j.value("seed", d.seed);
  return d;
}

}  // namespace

json to_json(const RunConfig& c) {
  json j;
  j["run_id"] = c.run_id;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir.string();
  j["data_root"] = c.data_root.string();
  j["manifest"] = c.manifest.string();
  j["synthetic_manifest"] = c.synthetic_manifest.string();
  j["checkpoints"] = c.checkpoints;
  j["bundle"] = nets::to_json(c.bundle);
  j["train_ab"] = train::to_json(c.train_ab);
  j["train_bc"] = train::to_json(c.train_bc);
  j["forward"] = train::to_json(c.forward);
  j["isp"] = to_json(c.isp);
  j["raw"] = {{"cfa", c.raw.cfa}, {"black_level", c.raw.black_level}, {"white_level", c.raw.white_level}};
  j["toy"] = to_json(c.toy);
  j["synthesis"] = {{"source_split", io::to_string(c.synthesis.source_split)},
                    {"output_split", io::to_string(c.synthesis.output_split)},
                    {"count", c.synthesis.count},
                    {"long_exposure_seconds", c.synthesis.long_exposure_seconds},
                    {"short_exposure_seconds", c.synthesis.short_exposure_seconds}};
  j["ablation"] = {{"real_fractions", c.ablation.real_fractions},
                   {"real_only_arm", c.ablation.arms[0]},
                   {"synthetic_arm", c.ablation.arms[1]}};
  j["evaluate"] = {{"split", io::to_string(c.eval.split)},
                   {"protocol_frame", c.eval.protocol_frame},
                   {"model_id", c.eval.model_id}};
  return j;
}

RunConfig config_from_json(const json& j, const RunConfig& defaults) {
  RunConfig c = defaults;
  try {
    c.run_id = j.value("run_id", c.run_id);
    c.preset = j.value("preset", c.preset);
    c.out_dir = j.value("out_dir", c.out_dir.string());
    c.data_root = j.value("data_root", c.data_root.string());
    c.manifest = j.value("manifest", c.manifest.string());
    c.synthetic_manifest = j.value("synthetic_manifest", c.synthetic_manifest.string());
    c.checkpoints = j.value("checkpoints", c.checkpoints);
    if (j.contains("bundle")) c.bundle = nets::bundle_spec_from_json(j["bundle"], c.bundle);
    if (j.contains("train_ab")) c.train_ab = train::train_config_from_json(j["train_ab"], c.train_ab);
    if (j.contains("train_bc")) c.train_bc = train::train_config_from_json(j["train_bc"], c.train_bc);
    if (j.contains("forward")) c.forward = train::forward_config_from_json(j["forward"], c.forward);
    if (j.contains("isp")) c.isp = isp_from_json(j["isp"], c.isp);
    if (j.contains("raw")) {
      const auto& r = j["raw"];
      c.raw.cfa = r.value("cfa", c.raw.cfa);
      c.raw.black_level = r.value("black_level", c.raw.black_level);
      c.raw.white_level = r.value("white_level", c.raw.white_level);
    }
    if (j.contains("toy")) c.toy = toy_from_json(j["toy"], c.toy);
    if (j.contains("synthesis")) {
      const auto& s = j["synthesis"];
      if (s.contains("source_split")) c.synthesis.source_split = io::parse_split(s["source_split"]);
      if (s.contains("output_split")) c.synthesis.output_split = io::parse_split(s["output_split"]);
      c.synthesis.count = s.value("count", c.synthesis.count);
      c.synthesis.long_exposure_seconds = s.value("long_exposure_seconds", c.synthesis.long_exposure_seconds);
      c.synthesis.short_exposure_seconds = s.value("short_exposure_seconds", c.synthesis.short_exposure_seconds);
    }
    if (j.contains("ablation")) {
      const auto& a = j["ablation"];
      c.ablation.real_fractions = a.value("real_fractions", c.ablation.real_fractions);
      c.ablation.arms[0] = a.value("real_only_arm", c.ablation.arms[0]);
      c.ablation.arms[1] = a.value("synthetic_arm", c.ablation.arms[1]);
    }
    if (j.contains("evaluate")) {
      const auto& e = j["evaluate"];
      if (e.contains("split")) c.eval.split = io::parse_split(e["split"]);
      c.eval.protocol_frame = e.value("protocol_frame", c.eval.protocol_frame);
      c.eval.model_id = e.value("model_id", c.eval.model_id);
    }
    if (j.contains("seed")) c.apply_seed(j["seed"].get<std::uint64_t>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return c;
}

RunConfig load_config(const std::optional<fs::path>& file, const std::optional<std::string>& preset_name) {
  json j = json::object();
  if (file) {
    std::ifstream f(*file);
    if (!f) throw IoError("cannot open config " + file->string());
    try {
      j = json::parse(f);
    } catch (const json::exception& e) {
      throw ConfigError("config " + file->string() + " is not valid JSON: " + e.what());
    }
  }
  const std::string name = preset_name ? *preset_name : j.value("preset", std::string("toy"));
  auto base = preset(name);
  if (const char* root = std::getenv("SIDGAN_DATA_ROOT")) base.data_root = root;
  auto cfg = config_from_json(j, base);
  cfg.preset = name;
  return cfg;
}

CheckpointRef parse_checkpoint_ref(const std::string& s) {
  CheckpointRef r;
  const auto at = s.rfind('@');
  if (at == std::string::npos) {
    r.run_dir = s;
    return r;
  }
  r.run_dir = s.substr(0, at);
  try {
    std::size_t used = 0;
    r.epoch = static_cast<std::uint32_t>(std::stoul(s.substr(at + 1), &used));
    if (used != s.size() - at - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("bad checkpoint reference '" + s + "' (expected <run_dir>[@<epoch>])");
  }
  return r;
}

namespace {

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open " + p.string());
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream f(p);
  if (!f) throw IoError("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

fs::path prepare_run(const RunConfig& cfg) {
  const auto dir = cfg.run_dir();
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(cfg));
  return dir;
}

void write_run_info(const fs::path& dir, const std::string& trainer, const nets::BundleSpec& spec,
                    bool ev_scale_input = false) {
  write_json(dir / "run.json",
             {{"trainer", trainer}, {"bundle", nets::to_json(spec)}, {"ev_scale_input", ev_scale_input}});
}

io::ManifestSet load_set(const RunConfig& cfg, const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("no ") + what + " manifest configured");
  return io::load_manifest(cfg.resolve(p));
}

std::string checkpoint_label(const CheckpointRef& ref, std::uint32_t epoch) {
  return ref.run_dir.filename().string() + "@" + std::to_string(epoch);
}

}  // namespace

std::uint32_t resolve_epoch(const CheckpointRef& ref) {
  if (ref.epoch) {
    if (!fs::exists(io::epoch_dir(ref.run_dir, *ref.epoch)))
      throw IoError("no checkpoint for epoch " + std::to_string(*ref.epoch) + " in " + ref.run_dir.string());
    return *ref.epoch;
  }
  auto trace = train::TrainTrace::from_json(read_json(ref.run_dir / "trace.json"));
  trace.run_dir.reset();
  std::erase_if(trace.epochs, [](const train::EpochRecord& e) { return !e.checkpoint; });
  if (trace.epochs.empty()) throw IoError("run " + ref.run_dir.string() + " has no checkpoints");
  const bool any_kid = std::any_of(trace.epochs.begin(), trace.epochs.end(),
                                   [](const train::EpochRecord& e) { return e.metrics.count("kid") > 0; });
  return any_kid ? train::select_model_by_kid(trace).epoch : trace.epochs.back().epoch;
}

nets::ModelBundle load_bundle(const CheckpointRef& ref, std::uint32_t* epoch_out) {
  const auto info = read_json(ref.run_dir / "run.json");
  auto bundle = nets::ModelBundle::create(nets::bundle_spec_from_json(info.at("bundle")), 0);
  const auto epoch = resolve_epoch(ref);
  const auto dir = io::epoch_dir(ref.run_dir, epoch);
  std::size_t restored = 0;
  for (const auto& [id, net] : bundle.named()) {
    if (!fs::exists(dir / (id + ".sgt"))) continue;
    io::restore_parameters(*net, io::load_checkpoint(ref.run_dir, epoch, id).parameters);
    ++restored;
  }
  if (restored == 0) throw IoError("checkpoint " + dir.string() + " holds no networks");
  if (epoch_out) *epoch_out = epoch;
  return bundle;
}

metrics::MetricReport evaluate_clips(const synth::FrameMap& model, const train::DataView& data,
                                     const EvalSettings& settings, const std::string& checkpoint_id,
                                     const metrics::FeatureExtractor* features) {
  if (!data.set || !data.source) throw ConfigError("evaluation needs a manifest set and frame source");
  const auto& c = data.set->at(io::Domain::C, settings.split);
  const auto& b = data.set->at(io::Domain::B, settings.split);
  if (c.empty()) throw ManifestError("no clips to evaluate in split " + io::to_string(settings.split));
  const std::uint32_t k = settings.protocol_frame - 1;

  metrics::MetricReport r;
  r.checkpoint_id = checkpoint_id;
  r.split = io::to_string(settings.split);
  double psnr = 0, ssim = 0, tpsnr = 0, tssim = 0, ewarp = 0;
  std::size_t temporal = 0;
  std::vector<torch::Tensor> outs, gts;
  for (const auto& ec : c.entries) {
    const auto* eb = ec.pair_id ? b.find(*ec.pair_id) : nullptr;
    if (!eb) throw ManifestError("clip '" + ec.id + "' has no ground truth");
    if (ec.frame_count < settings.protocol_frame)
      throw ProtocolError("clip '" + ec.id + "' has " + std::to_string(ec.frame_count) + " frames; protocol frame " +
                          std::to_string(settings.protocol_frame) + " is required");
    const bool is_static = eb->frame_count == 1;
    if (!is_static && eb->frame_count != ec.frame_count)
      throw ShapeError("clip '" + ec.id + "' and its ground truth differ in length");
    std::vector<torch::Tensor> clip;
    for (std::uint32_t t = 0; t < ec.frame_count; ++t) {
      const auto in = train::forward_input(data.source->frame(ec, t), ec, *eb, settings.ev_scale_input);
      clip.push_back(toy::to_unit(model(in)));
    }
    const auto gt = toy::to_unit(data.source->frame(*eb, is_static ? 0 : k));
    psnr += metrics::psnr(clip[k], gt);
    ssim += metrics::ssim(clip[k], gt);
    if (clip.size() >= 2) {
      const auto stacked = torch::stack(clip);
      const auto ts = metrics::temporal_metrics(stacked);
      tpsnr += ts.tpsnr;
      tssim += ts.tssim;
      ewarp += metrics::warp_error(stacked, metrics::zero_flow());
      ++temporal;
    }
    outs.push_back(clip[k]);
    gts.push_back(gt);
  }
  const double n = static_cast<double>(c.size());
  r.sample_count = c.size();
  r.psnr = psnr / n;
  r.ssim = ssim / n;
  if (temporal > 0) {
    r.tpsnr = tpsnr / static_cast<double>(temporal);
    r.tssim = tssim / static_cast<double>(temporal);
    r.e_warp = ewarp / static_cast<double>(temporal);
  }
  if (outs.size() >= 2) {
    metrics::RandomConvEmbedding default_fx;
    const auto& fx = features ? *features : static_cast<const metrics::FeatureExtractor&>(default_fx);
    const auto fo = fx.extract(data::to_nchw(outs));
    const auto fg = fx.extract(data::to_nchw(gts));
    r.fid = metrics::fid(fo, fg);
    r.kid = metrics::kid(fo, fg);
  }
  return r;
}

std::vector<AblationRow> run_ablation(const AblationSpec& spec, const AblationInputs& in) {
  spec.validate();
  if (!in.real.set || !in.real.source) throw ConfigError("ablation needs real data");
  if (spec.arms[1] && !in.synthetic) throw ConfigError("synthetic arm requested without synthetic data");
  const auto total = in.real.set->at(io::Domain::C, io::Split::Train).size();
  const auto& plan = in.forward.plan.stages;
  std::uint32_t e_first = 0, e_synth = 0, e_last = 0;
  for (const auto& st : plan) {
    if (st.id == train::StageId::TrainRealStatic) e_first = st.epochs;
    if (st.id == train::StageId::FinetuneSyntheticDynamic) e_synth = st.epochs;
    if (st.id == train::StageId::FinetuneRealStatic) e_last = st.epochs;
  }

  std::vector<AblationRow> rows;
  for (const double f : spec.real_fractions) {
    const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(f * total)), 1, total);
    const auto subset = toy::subset_pairs(*in.real.set, io::Split::Train, count, in.seed);
    for (int arm = 0; arm < 2; ++arm) {
      if (!spec.arms[arm]) continue;
      auto cfg = in.forward;
      cfg.seed = in.seed;
      cfg.plan = arm == 0 ? train::TrainPlan::real_only(e_first, e_last)
                          : train::TrainPlan::three_step(e_first, std::max<std::uint32_t>(e_synth, 1), e_last);
      cfg.total_epochs = std::max(cfg.total_epochs, cfg.plan.total_epochs());
      auto bundle = nets::ModelBundle::create(in.bundle, in.seed);
      train::ForwardData fd{{&subset, in.real.source}, arm == 1 ? in.synthetic : std::nullopt, io::Split::Train};
      train::train_forward(bundle, fd, cfg);
      auto& net = *bundle.forward_model;
      net.eval();
      auto settings = in.eval;
      settings.ev_scale_input = cfg.ev_scale_input;
      const auto rep = evaluate_clips([&net](const torch::Tensor& x) { return train::apply_generator(net, x); },
                                      in.real, settings, "forward");
      rows.push_back({f, arm == 0 ? "real_only" : "synthetic", count, *rep.psnr, *rep.ssim});
    }
  }
  return rows;
}

void write_ablation_csv(const fs::path& path, const std::vector<AblationRow>& rows) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "fraction,arm,real_count,psnr,ssim\n" << std::setprecision(17);
  for (const auto& r : rows) f << r.fraction << ',' << r.arm << ',' << r.real_count << ',' << r.psnr << ',' << r.ssim << '\n';
}

std::vector<AblationRow> read_ablation_csv(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "fraction,arm,real_count,psnr,ssim")
    throw FormatError(path.string() + ": unexpected ablation header");
  std::vector<AblationRow> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell[5];
    for (auto& s : cell)
      if (!std::getline(ss, s, ',')) throw FormatError(path.string() + ": short row '" + line + "'");
    try {
      rows.push_back({std::stod(cell[0]), cell[1], std::stoul(cell[2]), std::stod(cell[3]), std::stod(cell[4])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad row '" + line + "'");
    }
  }
  return rows;
}

void plot_ablation(const fs::path& path, const std::vector<AblationRow>& rows) {
  plot::Panel p_psnr{"psnr", {}, true}, p_ssim{"ssim", {}, true};
  const std::pair<const char*, plot::Rgb> arms[] = {{"real_only", {200, 60, 40}}, {"synthetic", {40, 90, 200}}};
  for (const auto& [arm, color] : arms) {
    plot::Series a{arm, {}, {}, color}, s{arm, {}, {}, color};
    for (const auto& r : rows) {
      if (r.arm != arm) continue;
      a.x.push_back(r.fraction);
      a.y.push_back(r.psnr);
      s.x.push_back(r.fraction);
      s.y.push_back(r.ssim);
    }
    if (a.x.empty()) continue;
    p_psnr.series.push_back(std::move(a));
    p_ssim.series.push_back(std::move(s));
  }
  plot::write_png(path, plot::render({p_psnr, p_ssim}));
}

io::ManifestSet cmd_make_toy(const RunConfig& cfg) {
  const auto dir = prepare_run(cfg);
  const auto cyc = toy::make_cyclegan_toy(cfg.toy);
  toy::write_to_disk(cyc, dir / "cyclegan");
  const auto fwd = toy::make_forward_toy(cfg.toy);
  toy::write_to_disk(fwd, dir / "forward");
  return io::load_manifest(dir / "cyclegan" / "manifest.json");
}

io::ManifestSet cmd_preprocess(const RunConfig& cfg) {
  const auto in = load_set(cfg, cfg.manifest, "raw");
  std::size_t total = 0;
  for (const auto& m : in.manifests) total += m.size();
  if (total == 0) throw ManifestError("raw manifest has no entries");
  const auto dir = prepare_run(cfg);

  io::ManifestSet out;
  for (const auto& m : in.manifests) {
    const auto* b = m.domain == io::Domain::C ? in.get(io::Domain::B, m.split) : nullptr;
    io::DatasetManifest om{m.domain, m.split, {}};
    for (const auto& e : m.entries) {
      isp::RawFrame raw;
      raw.cfa = isp::parse_cfa(e.attributes.count("cfa") ? e.attributes.at("cfa") : cfg.raw.cfa);
      raw.black_level = e.attributes.count("black_level") ? std::stoul(e.attributes.at("black_level")) : cfg.raw.black_level;
      raw.white_level = e.attributes.count("white_level") ? std::stoul(e.attributes.at("white_level")) : cfg.raw.white_level;
      raw.exposure_seconds = e.exposure_seconds.value_or(1.0);
      double long_exposure = raw.exposure_seconds;
      if (b && e.pair_id)
        if (const auto* eb = b->find(*e.pair_id); eb && eb->exposure_seconds) long_exposure = *eb->exposure_seconds;

      const auto src = in.resolve(e);
      const auto dst = dir / e.path;
      auto process = [&](const fs::path& from, const fs::path& to) {
        raw.mosaic = io::read_tensor(from);
        fs::create_directories(to.parent_path());
        io::write_tensor(to, isp::preprocess(raw, cfg.isp, long_exposure));
      };
      if (e.kind == io::EntryKind::Video) {
        for (std::uint32_t t = 0; t < e.frame_count; ++t) process(data::frame_file(src, t), data::frame_file(dst, t));
      } else {
        process(src, dst);
      }
      auto oe = e;
      oe.attributes["isp_digital_gain"] = std::to_string(cfg.isp.digital_gain);
      oe.attributes["isp_binned"] = cfg.isp.bin ? "true" : "false";
      oe.attributes["isp_range"] = isp::to_string(cfg.isp.target_range);
      oe.attributes["denoised"] = cfg.isp.denoised ? "true" : "false";
      om.entries.push_back(std::move(oe));
    }
    out.manifests.push_back(std::move(om));
  }
  io::validate(out);
  io::save_manifest(dir / "manifest.json", out);
  out.base_dir = dir;
  return out;
}

namespace {

train::TrainTrace run_cyclegan(const RunConfig& cfg, bool ab) {
  const auto set = load_set(cfg, cfg.manifest, "training");
  const auto dir = prepare_run(cfg);
  const auto& tc = ab ? cfg.train_ab : cfg.train_bc;
  auto bundle = nets::ModelBundle::create(cfg.bundle, tc.seed);
  write_run_info(dir, ab ? "cyclegan_ab" : "cyclegan_bc", cfg.bundle);
  data::DiskFrameSource source(set.base_dir);
  return ab ? train::train_cyclegan_ab(bundle, {&set, &source}, tc, dir)
            : train::train_cyclegan_bc(bundle, {&set, &source}, tc, dir);
}

}  // namespace

train::TrainTrace cmd_train_ab(const RunConfig& cfg) { return run_cyclegan(cfg, true); }
train::TrainTrace cmd_train_bc(const RunConfig& cfg) { return run_cyclegan(cfg, false); }

io::ManifestSet cmd_synthesize(const RunConfig& cfg) {
  if (cfg.checkpoints.empty() || cfg.checkpoints.size() > 2)
    throw ConfigError("synthesize needs --checkpoint <ab_run> [--checkpoint <bc_run>]");
  const auto set = load_set(cfg, cfg.manifest, "domain A");
  const auto ref_ab = parse_checkpoint_ref(cfg.checkpoints.front());
  const auto ref_bc = parse_checkpoint_ref(cfg.checkpoints.back());
  std::uint32_t ep_ab = 0, ep_bc = 0;
  auto bundle_ab = load_bundle(ref_ab, &ep_ab);
  auto bundle_bc = load_bundle(ref_bc, &ep_bc);
  const auto dir = prepare_run(cfg);
  data::DiskFrameSource source(set.base_dir);
  bundle_ab.g_ab->eval();
  bundle_bc.g_bc->eval();
  const auto g_ab = synth::generator_ref(*bundle_ab.g_ab, "g_ab:" + checkpoint_label(ref_ab, ep_ab));
  const auto g_bc = synth::generator_ref(*bundle_bc.g_bc, "g_bc:" + checkpoint_label(ref_bc, ep_bc));
  return synth::synthesize_dataset(set, source, g_ab, g_bc, dir, cfg.synthesis);
}

train::TrainTrace cmd_train_forward(const RunConfig& cfg) {
  const auto real = load_set(cfg, cfg.manifest, "real");
  std::optional<io::ManifestSet> synthetic;
  if (!cfg.synthetic_manifest.empty()) synthetic = load_set(cfg, cfg.synthetic_manifest, "synthetic");
  const auto dir = prepare_run(cfg);
  auto bundle = nets::ModelBundle::create(cfg.bundle, cfg.forward.seed);
  write_run_info(dir, "forward", cfg.bundle, cfg.forward.ev_scale_input);
  data::DiskFrameSource real_src(real.base_dir);
  std::optional<data::DiskFrameSource> synth_src;
  train::ForwardData fd{{&real, &real_src}, std::nullopt, io::Split::Train};
  if (synthetic) {
    synth_src.emplace(synthetic->base_dir);
    fd.synthetic = train::DataView{&*synthetic, &*synth_src};
  }
  return train::train_forward(bundle, fd, cfg.forward, dir);
}

std::vector<metrics::MetricReport> cmd_evaluate(const RunConfig& cfg) {
  if (cfg.checkpoints.empty()) throw ConfigError("evaluate needs at least one --checkpoint");
  const auto set = load_set(cfg, cfg.manifest, "evaluation");
  data::DiskFrameSource source(set.base_dir);
  std::vector<metrics::MetricReport> reports;
  for (const auto& s : cfg.checkpoints) {
    const auto ref = parse_checkpoint_ref(s);
    std::uint32_t epoch = 0;
    auto bundle = load_bundle(ref, &epoch);
    std::shared_ptr<nets::UNet> net;
    for (const auto& [id, n] : bundle.named())
      if (id == cfg.eval.model_id) net = std::dynamic_pointer_cast<nets::UNet>(n);
    if (!net) throw ConfigError("model '" + cfg.eval.model_id + "' is not an image-to-image network in the bundle");
    net->eval();
    auto settings = cfg.eval;
    settings.ev_scale_input = read_json(ref.run_dir / "run.json").value("ev_scale_input", false);
    reports.push_back(evaluate_clips([&](const torch::Tensor& x) { return train::apply_generator(*net, x); },
                                     {&set, &source}, settings, checkpoint_label(ref, epoch)));
  }
  const auto dir = prepare_run(cfg);
  metrics::write_reports(dir / "metrics.csv", reports);
  return reports;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& cfg) {
  cfg.ablation.validate();
  const auto real = load_set(cfg, cfg.manifest, "real");
  std::optional<io::ManifestSet> synthetic;
  if (cfg.ablation.arms[1]) synthetic = load_set(cfg, cfg.synthetic_manifest, "synthetic");
  const auto dir = prepare_run(cfg);
  data::DiskFrameSource real_src(real.base_dir);
  std::optional<data::DiskFrameSource> synth_src;
  AblationInputs in{{&real, &real_src}, std::nullopt, cfg.bundle, cfg.forward, cfg.eval, cfg.seed};
  if (synthetic) {
    synth_src.emplace(synthetic->base_dir);
    in.synthetic = train::DataView{&*synthetic, &*synth_src};
  }
  const auto rows = run_ablation(cfg.ablation, in);
  write_ablation_csv(dir / "ablation.csv", rows);
  plot_ablation(dir / "ablation.png", rows);
  return rows;
}

json cmd_report(const RunConfig& cfg) {
  if (cfg.checkpoints.empty()) throw ConfigError("report needs at least one --checkpoint run directory");
  const auto dir = prepare_run(cfg);
  json report = json::array();
  plot::Panel losses{"loss", {}, false};
  const plot::Rgb palette[] = {{200, 60, 40}, {40, 90, 200}, {40, 160, 80}, {150, 60, 180}, {220, 150, 30}};
  for (const auto& s : cfg.checkpoints) {
    const auto run = parse_checkpoint_ref(s).run_dir;
    json entry{{"run", run.string()}};
    if (fs::exists(run / "trace.json")) {
      const auto trace = train::TrainTrace::from_json(read_json(run / "trace.json"));
      entry["trainer"] = trace.trainer;
      entry["epochs"] = trace.epochs.size();
      if (!trace.epochs.empty()) entry["final_losses"] = trace.epochs.back().losses;
      json stages = json::array();
      for (const auto& st : trace.stages) stages.push_back({{"stage", st.stage}, {"source", st.source}});
      entry["stages"] = stages;
      try {
        entry["selected_epoch"] = resolve_epoch({run, std::nullopt});
      } catch (const Error&) {
      }
      const std::string key = trace.trainer == "forward" ? "total" : "g_total";
      plot::Series series{run.filename().string(), {}, {}, palette[losses.series.size() % 5]};
      for (const auto& e : trace.epochs)
        if (auto it = e.losses.find(key); it != e.losses.end()) {
          series.x.push_back(e.epoch);
          series.y.push_back(it->second);
        }
      if (!series.x.empty()) losses.series.push_back(std::move(series));
    }
    if (fs::exists(run / "metrics.csv")) {
      json rows = json::array();
      for (const auto& r : metrics::read_reports(run / "metrics.csv")) rows.push_back(metrics::to_csv_row(r));
      entry["metrics"] = rows;
    }
    if (fs::exists(run / "ablation.csv")) {
      json rows = json::array();
      for (const auto& r : read_ablation_csv(run / "ablation.csv"))
        rows.push_back({{"fraction", r.fraction}, {"arm", r.arm}, {"psnr", r.psnr}, {"ssim", r.ssim}});
      entry["ablation"] = rows;
    }
    report.push_back(std::move(entry));
  }
  write_json(dir / "report.json", report);
  if (!losses.series.empty()) plot::write_png(dir / "losses.png", plot::render({losses}));
  return report;
}

}  // namespace sidgan::cli
