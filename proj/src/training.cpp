#include "sidgan/training.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "sidgan/error.hpp"
#include "sidgan/isp.hpp"

namespace sidgan::train {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace {

// Independent stream per (seed, epoch, purpose).
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

std::vector<torch::Tensor> params_of(std::initializer_list<torch::nn::Module*> modules) {
  std::vector<torch::Tensor> out;
  for (auto* m : modules)
    for (auto& p : m->parameters()) out.push_back(p);
  return out;
}

std::unique_ptr<torch::optim::Adam> make_adam(const std::vector<torch::Tensor>& params, double lr,
                                              const OptimizerConfig& o) {
  return std::make_unique<torch::optim::Adam>(params,
                                              torch::optim::AdamOptions(lr).betas({o.beta1, o.beta2}));
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DivergenceError(std::string("non-finite ") + what);
}

// Standard fake-image history: once full, each new fake is swapped for a stored one with probability 1/2.
class ReplayPool {
 public:
  explicit ReplayPool(std::size_t capacity) : capacity_(capacity) {}

  torch::Tensor query(const torch::Tensor& fakes, std::mt19937_64& rng) {
    if (capacity_ == 0) return fakes;
    std::vector<torch::Tensor> out;
    for (std::int64_t i = 0; i < fakes.size(0); ++i) {
      auto img = fakes[i].detach().clone();
      if (images_.size() < capacity_) {
        images_.push_back(img);
        out.push_back(img);
      } else if (std::uniform_int_distribution<int>(0, 1)(rng)) {
        const auto k = std::uniform_int_distribution<std::size_t>(0, images_.size() - 1)(rng);
        out.push_back(images_[k]);
        images_[k] = img;
      } else {
        out.push_back(img);
      }
    }
    return torch::stack(out);
  }

 private:
  std::size_t capacity_;
  std::vector<torch::Tensor> images_;
};

torch::Tensor to_unit(const torch::Tensor& x) { return isp::denormalize(x, isp::ValueRange::Symmetric).clamp(0, 1); }

std::vector<std::size_t> val_indices(std::size_t n, std::size_t limit) {
  const std::size_t k = limit == 0 ? n : std::min(n, limit);
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = i;
  return out;
}

torch::Tensor embed(const metrics::FeatureExtractor& fx, const std::vector<torch::Tensor>& frames) {
  std::vector<torch::Tensor> rows;
  for (const auto& f : frames) rows.push_back(fx.extract(to_unit(f).permute({2, 0, 1}).unsqueeze(0)));
  return torch::cat(rows, 0);
}

// Roles of the four networks in one CycleGAN: x -> y by g_fwd, y -> x by g_bwd.
struct CycleRoles {
  std::string name_x, name_y;  // domain letters
  nets::UNet* g_fwd;
  nets::UNet* g_bwd;
  nets::ConvStack* d_x;
  nets::ConvStack* d_y;
  bool supervised;  // auxiliary term: supervised (paired) or identity
  std::int64_t disc_patch;
};

std::string gid(const CycleRoles& r, bool fwd) {
  return "g_" + (fwd ? r.name_x + r.name_y : r.name_y + r.name_x);
}

struct Batch {
  torch::Tensor x, y;
  std::vector<std::string> ids;
};

void save_models(const fs::path& run_dir, std::uint32_t epoch, const CycleRoles& r, torch::optim::Adam& opt_g,
                 torch::optim::Adam& opt_d, const std::map<std::string, double>& metrics) {
  const std::vector<std::pair<std::string, torch::nn::Module*>> models = {
      {gid(r, true), r.g_fwd}, {gid(r, false), r.g_bwd}, {"d_" + r.name_x, r.d_x}, {"d_" + r.name_y, r.d_y}};
  for (const auto& [id, m] : models) {
    io::CheckpointRecord rec;
    rec.epoch = epoch;
    rec.model_id = id;
    rec.parameters = io::snapshot_parameters(*m);
    io::save_checkpoint(run_dir, rec);
  }
  for (auto [id, opt] : {std::pair<const char*, torch::optim::Adam*>{"optim_g", &opt_g}, {"optim_d", &opt_d}}) {
    io::CheckpointRecord rec;
    rec.epoch = epoch;
    rec.model_id = id;
    rec.optimizer_state = io::snapshot_optimizer(*opt);
    io::save_checkpoint(run_dir, rec);
  }
  io::write_metrics_snapshot(run_dir, epoch, metrics);
}

using BatchFn = std::function<std::vector<Batch>(std::uint32_t epoch, std::mt19937_64& rng)>;
using EvalFn = std::function<std::map<std::string, double>()>;

TrainTrace run_cyclegan(const char* trainer, const CycleRoles& r, const TrainConfig& cfg, const BatchFn& batches,
                        const EvalFn& evaluate, const std::optional<fs::path>& run_dir) {
  cfg.validate();
  TrainTrace trace;
  trace.trainer = trainer;
  trace.primary_model = gid(r, true);
  trace.run_dir = run_dir;
  trace.stages.push_back({trainer, r.name_x + r.name_y, 0, cfg.total_epochs()});

  auto opt_g = make_adam(params_of({r.g_fwd, r.g_bwd}), cfg.base_lr, cfg.optimizer);
  auto opt_d = make_adam(params_of({r.d_x, r.d_y}), cfg.base_lr, cfg.optimizer);
  ReplayPool pool_x(cfg.replay_pool ? cfg.pool_size : 0), pool_y(cfg.replay_pool ? cfg.pool_size : 0);

  for (std::uint32_t epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at_epoch(cfg, epoch);
    set_lr(*opt_g, lr);
    set_lr(*opt_d, lr);
    auto rng = stream(cfg.seed, epoch, 1);
    auto crop_rng = stream(cfg.seed, epoch, 2);
    std::map<std::string, double> sums;
    std::size_t steps = 0;
    r.g_fwd->train();
    r.g_bwd->train();
    for (const auto& b : batches(epoch, rng)) {
      for (const auto& id : b.ids) trace.samples.push_back({epoch, trainer, r.name_x + r.name_y, id});
      const auto fake_y = r.g_fwd->forward(b.x);
      const auto fake_x = r.g_bwd->forward(b.y);

      // Discriminators.
      set_requires_grad(*r.d_x, true);
      set_requires_grad(*r.d_y, true);
      const auto hist_y = pool_y.query(fake_y.detach(), rng);
      const auto hist_x = pool_x.query(fake_x.detach(), rng);
      const auto d_y_loss = losses::gan_loss_d(r.d_y->forward(nets::random_patch(b.y, r.disc_patch, crop_rng)),
                                               r.d_y->forward(nets::random_patch(hist_y, r.disc_patch, crop_rng)));
      const auto d_x_loss = losses::gan_loss_d(r.d_x->forward(nets::random_patch(b.x, r.disc_patch, crop_rng)),
                                               r.d_x->forward(nets::random_patch(hist_x, r.disc_patch, crop_rng)));
      const auto d_total = d_x_loss + d_y_loss;
      require_finite(d_total.item<double>(), "discriminator loss");
      opt_d->zero_grad();
      d_total.backward();
      opt_d->step();

      // Generators, with the discriminators frozen.
      set_requires_grad(*r.d_x, false);
      set_requires_grad(*r.d_y, false);
      const auto gan_fwd = losses::gan_loss_g(r.d_y->forward(nets::random_patch(fake_y, r.disc_patch, crop_rng)));
      const auto gan_bwd = losses::gan_loss_g(r.d_x->forward(nets::random_patch(fake_x, r.disc_patch, crop_rng)));
      const auto cycle =
          losses::mean_l1(r.g_fwd->forward(fake_x), b.y) + losses::mean_l1(r.g_bwd->forward(fake_y), b.x);
      torch::Tensor aux;
      if (r.supervised) {
        aux = losses::mean_l1(fake_y, b.y) + losses::mean_l1(fake_x, b.x);
      } else if (cfg.weights.lambda2 > 0) {
        aux = losses::mean_l1(r.g_bwd->forward(b.x), b.x) + losses::mean_l1(r.g_fwd->forward(b.y), b.y);
      } else {
        aux = torch::zeros({}, fake_y.options());
      }
      const losses::ObjectiveParts parts{gan_fwd, gan_bwd, cycle, aux};
      const auto g_total = r.supervised ? losses::total_bc_objective(parts, cfg.weights)
                                        : losses::total_ab_objective(parts, cfg.weights);
      opt_g->zero_grad();
      g_total.backward();
      opt_g->step();

      const double g_val = g_total.item<double>();
      trace.step_losses.push_back(g_val);
      sums["d_" + r.name_x] += d_x_loss.item<double>();
      sums["d_" + r.name_y] += d_y_loss.item<double>();
      sums["gan_" + r.name_x + r.name_y] += gan_fwd.item<double>();
      sums["gan_" + r.name_y + r.name_x] += gan_bwd.item<double>();
      sums["cycle"] += cycle.item<double>();
      sums[r.supervised ? "supervised" : "identity"] += aux.item<double>();
      sums["g_total"] += g_val;
      ++steps;
    }
    set_requires_grad(*r.d_x, true);
    set_requires_grad(*r.d_y, true);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = trainer;
    rec.lr = lr;
    for (const auto& [k, v] : sums) rec.losses[k] = v / static_cast<double>(std::max<std::size_t>(steps, 1));
    const bool last = epoch + 1 == cfg.total_epochs();
    if (cfg.eval_interval > 0 && ((epoch + 1) % cfg.eval_interval == 0 || last)) {
      r.g_fwd->eval();
      r.g_bwd->eval();
      rec.metrics = evaluate();
      if (run_dir) {
        save_models(*run_dir, epoch, r, *opt_g, *opt_d, rec.metrics);
        rec.checkpoint = io::epoch_dir(".", epoch).filename().string();
      }
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    trace.epochs.push_back(std::move(rec));
  }
  if (run_dir) trace.write(*run_dir);
  return trace;
}

std::shared_ptr<metrics::FeatureExtractor> features_or_default(const EvalOptions& e) {
  return e.features ? e.features : std::make_shared<metrics::RandomConvEmbedding>();
}

void require_bundle(std::initializer_list<const void*> parts) {
  for (const void* p : parts)
    if (!p) throw ConfigError("model bundle is missing a network required by this trainer");
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (crop < 16 || crop % 16 != 0) throw ConfigError("crop must be a positive multiple of 16");
  if (total_epochs() == 0) throw ConfigError("training needs at least one epoch");
  if (!(base_lr >= 0)) throw ConfigError("learning rate must be nonnegative");
  weights.validate();
}

std::string to_string(StageId s) {
  switch (s) {
    case StageId::TrainRealStatic: return "train_real_static";
    case StageId::FinetuneSyntheticDynamic: return "finetune_synthetic_dynamic";
    case StageId::FinetuneRealStatic: return "finetune_real_static";
  }
  return "?";
}

StageId parse_stage(const std::string& s) {
  for (auto id : {StageId::TrainRealStatic, StageId::FinetuneSyntheticDynamic, StageId::FinetuneRealStatic})
    if (to_string(id) == s) return id;
  throw ConfigError("unknown training stage '" + s + "'");
}

std::string to_string(DataSource s) { return s == DataSource::Real ? "real" : "synthetic"; }

TrainPlan TrainPlan::three_step(std::uint32_t e1, std::uint32_t e2, std::uint32_t e3) {
  return {{{StageId::TrainRealStatic, e1, DataSource::Real},
           {StageId::FinetuneSyntheticDynamic, e2, DataSource::Synthetic},
           {StageId::FinetuneRealStatic, e3, DataSource::Real}}};
}

TrainPlan TrainPlan::real_only(std::uint32_t e1, std::uint32_t e3) {
  return {{{StageId::TrainRealStatic, e1, DataSource::Real}, {StageId::FinetuneRealStatic, e3, DataSource::Real}}};
}

std::uint32_t TrainPlan::total_epochs() const {
  std::uint32_t n = 0;
  for (const auto& s : stages) n += s.epochs;
  return n;
}

bool TrainPlan::is_three_step_order() const {
  const auto full = three_step(0, 0, 0).stages;
  std::size_t k = 0;
  for (const auto& s : stages) {
    while (k < full.size() && full[k].id != s.id) {
      if (full[k].id != StageId::FinetuneSyntheticDynamic) return false;
      ++k;
    }
    if (k == full.size() || s.source != full[k].source) return false;
    ++k;
  }
  return k == full.size();
}

void ForwardTrainConfig::validate() const {
  if (phase_boundary > total_epochs) throw ConfigError("phase boundary lies beyond the last epoch");
  if (plan.stages.empty()) throw ConfigError("training plan has no stages");
  if (plan.total_epochs() > total_epochs) throw ConfigError("training plan exceeds the epoch budget");
  if (paper_faithful && !plan.is_three_step_order()) throw ConfigError("plan stages are not in three-step order");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (crop < 16 || crop % 16 != 0) throw ConfigError("crop must be a positive multiple of 16");
  if (real_synth_ratio.first < 1 || real_synth_ratio.second < 1) throw ConfigError("data ratio must be positive");
}

double lr_at_epoch(const TrainConfig& cfg, std::uint32_t epoch) {
  if (epoch >= cfg.total_epochs()) throw ConfigError("epoch " + std::to_string(epoch) + " outside the schedule");
  if (epoch < cfg.epochs_constant) return cfg.base_lr;
  const double t = static_cast<double>(epoch - cfg.epochs_constant) / static_cast<double>(cfg.epochs_decay);
  return cfg.base_lr * (1.0 - t);
}

double forward_lr_at_epoch(const ForwardTrainConfig& cfg, std::uint32_t epoch) {
  if (epoch >= cfg.total_epochs) throw ConfigError("epoch " + std::to_string(epoch) + " outside the schedule");
  return epoch < cfg.phase_boundary ? cfg.lr_phase1 : cfg.lr_phase2;
}

torch::Tensor forward_input(const torch::Tensor& frame, const io::ManifestEntry& c, const io::ManifestEntry& b,
                            bool ev_scale) {
  if (!ev_scale) return frame;
  if (!c.exposure_seconds || !b.exposure_seconds)
    throw ManifestError("EV scaling needs exposures on '" + c.id + "' and '" + b.id + "'");
  const auto unit = isp::denormalize(frame.clamp(-1, 1), isp::ValueRange::Symmetric);
  const auto lit = isp::apply_gain_and_ev(unit, *c.exposure_seconds, *b.exposure_seconds, 1.0);
  return isp::normalize(lit, isp::ValueRange::Symmetric).to(torch::kFloat32).contiguous();
}

torch::Tensor apply_generator(nets::UNet& g, const torch::Tensor& frame) {
  if (frame.dim() != 3 || frame.size(2) != g.spec().in_channels)
    throw ShapeError("generator input must be (H, W, " + std::to_string(g.spec().in_channels) + ")");
  const auto div = g.spec().divisor();
  const auto h = frame.size(0), w = frame.size(1);
  const auto ph = (div - h % div) % div, pw = (div - w % div) % div;
  torch::NoGradGuard ng;
  auto x = frame.to(torch::kFloat32).permute({2, 0, 1}).unsqueeze(0);
  if (ph || pw) x = F::pad(x, F::PadFuncOptions({0, pw, 0, ph}).mode(torch::kReplicate));
  auto y = g.forward(x);
  return y.squeeze(0).permute({1, 2, 0}).narrow(0, 0, h).narrow(1, 0, w).contiguous();
}

TrainTrace train_cyclegan_ab(nets::ModelBundle& bundle, const DataView& data, const TrainConfig& cfg,
                             const std::optional<fs::path>& run_dir, const EvalOptions& eval) {
  require_bundle({bundle.g_ab.get(), bundle.g_ba.get(), bundle.d_a.get(), bundle.d_b.get()});
  if (!data.set || !data.source) throw ConfigError("trainer needs a manifest set and frame source");
  const auto& a = data.set->at(io::Domain::A, io::Split::Train);
  const auto& b = data.set->at(io::Domain::B, io::Split::Train);
  if (a.empty() || b.empty()) throw ManifestError("A-B training needs non-empty A and B manifests");

  CycleRoles roles{"a", "b", bundle.g_ab.get(), bundle.g_ba.get(), bundle.d_a.get(), bundle.d_b.get(), false,
                   bundle.spec.discriminator.input_patch};
  const BatchFn batches = [&](std::uint32_t, std::mt19937_64& rng) {
    std::vector<Batch> out;
    const auto schedule = data::unpaired_epoch(a.size(), b.size(), rng);
    for (std::size_t s = 0; s < schedule.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<torch::Tensor> xs, ys;
      Batch batch;
      for (std::size_t k = s; k < std::min(schedule.size(), s + cfg.batch_size); ++k) {
        auto sa = data::draw_sample(a, schedule[k].first, *data.source, cfg.crop, rng);
        auto sb = data::draw_sample(b, schedule[k].second, *data.source, cfg.crop, rng);
        xs.push_back(sa.image);
        ys.push_back(sb.image);
        batch.ids.push_back(sa.id);
        batch.ids.push_back(sb.id);
      }
      batch.x = data::to_nchw(xs);
      batch.y = data::to_nchw(ys);
      out.push_back(std::move(batch));
    }
    return out;
  };
  const auto fx = features_or_default(eval);
  const EvalFn evaluate = [&]() -> std::map<std::string, double> {
    const auto* va = data.set->get(io::Domain::A, io::Split::Val);
    const auto* vb = data.set->get(io::Domain::B, io::Split::Val);
    if (!va || !vb) return {};
    std::vector<torch::Tensor> fakes, reals;
    for (auto i : val_indices(va->size(), cfg.val_count))
      fakes.push_back(apply_generator(*bundle.g_ab, data.source->frame(va->entries[i], 0)));
    for (auto i : val_indices(vb->size(), cfg.val_count)) reals.push_back(data.source->frame(vb->entries[i], 0));
    if (fakes.size() < 2 || reals.size() < 2) return {};
    return {{"kid", metrics::kid(embed(*fx, fakes), embed(*fx, reals))}};
  };
  return run_cyclegan("cyclegan_ab", roles, cfg, batches, evaluate, run_dir);
}

TrainTrace train_cyclegan_bc(nets::ModelBundle& bundle, const DataView& data, const TrainConfig& cfg,
                             const std::optional<fs::path>& run_dir, const EvalOptions& eval) {
  require_bundle({bundle.g_bc.get(), bundle.g_cb.get(), bundle.d_b.get(), bundle.d_c.get()});
  if (!data.set || !data.source) throw ConfigError("trainer needs a manifest set and frame source");
  const auto& b = data.set->at(io::Domain::B, io::Split::Train);
  const auto& c = data.set->at(io::Domain::C, io::Split::Train);
  if (b.empty() || c.empty()) throw ManifestError("B-C training needs non-empty B and C manifests");
  const auto links = io::resolve_pairs(b, c);
  if (links.size() != b.size()) throw ManifestError("B-C training needs every B entry paired");

  CycleRoles roles{"b", "c", bundle.g_bc.get(), bundle.g_cb.get(), bundle.d_b.get(), bundle.d_c.get(), true,
                   bundle.spec.discriminator.input_patch};
  const BatchFn batches = [&](std::uint32_t, std::mt19937_64& rng) {
    std::vector<Batch> out;
    const auto order = data::paired_epoch(b.size(), rng, true);
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<torch::Tensor> xs, ys;
      Batch batch;
      for (std::size_t k = s; k < std::min(order.size(), s + cfg.batch_size); ++k) {
        const auto pair = data::sample_pair_at(b, c, order[k], *data.source, rng, cfg.crop);
        xs.push_back(pair.b[0].image);
        ys.push_back(pair.c[0].image);
        batch.ids.push_back(pair.b[0].id);
        batch.ids.push_back(pair.c[0].id);
      }
      batch.x = data::to_nchw(xs);
      batch.y = data::to_nchw(ys);
      out.push_back(std::move(batch));
    }
    return out;
  };
  const auto fx = features_or_default(eval);
  const EvalFn evaluate = [&]() -> std::map<std::string, double> {
    const auto* vb = data.set->get(io::Domain::B, io::Split::Val);
    const auto* vc = data.set->get(io::Domain::C, io::Split::Val);
    if (!vb || !vc || vb->empty()) return {};
    std::vector<torch::Tensor> fakes_c, reals_c;
    double psnr_bc = 0, ssim_bc = 0, psnr_cb = 0, ssim_cb = 0;
    const auto idx = val_indices(vb->size(), cfg.val_count);
    for (auto i : idx) {
      const auto& eb = vb->entries[i];
      const auto* ec = eb.pair_id ? vc->find(*eb.pair_id) : nullptr;
      if (!ec) throw ManifestError("validation entry '" + eb.id + "' has no pair");
      const auto l = data.source->frame(eb, 0), s = data.source->frame(*ec, 0);
      const auto pred_c = apply_generator(*bundle.g_bc, l), pred_b = apply_generator(*bundle.g_cb, s);
      psnr_bc += metrics::psnr(to_unit(pred_c), to_unit(s));
      ssim_bc += metrics::ssim(to_unit(pred_c), to_unit(s));
      psnr_cb += metrics::psnr(to_unit(pred_b), to_unit(l));
      ssim_cb += metrics::ssim(to_unit(pred_b), to_unit(l));
      fakes_c.push_back(pred_c);
      reals_c.push_back(s);
    }
    const double n = static_cast<double>(idx.size());
    std::map<std::string, double> m{
        {"psnr_bc", psnr_bc / n}, {"ssim_bc", ssim_bc / n}, {"psnr_cb", psnr_cb / n}, {"ssim_cb", ssim_cb / n}};
    if (idx.size() >= 2) m["kid"] = metrics::kid(embed(*fx, fakes_c), embed(*fx, reals_c));
    return m;
  };
  return run_cyclegan("cyclegan_bc", roles, cfg, batches, evaluate, run_dir);
}

io::CheckpointRecord select_model_by_kid(const TrainTrace& trace) {
  const EpochRecord* best = nullptr;
  for (const auto& e : trace.epochs) {
    const auto it = e.metrics.find("kid");
    if (it == e.metrics.end() || !std::isfinite(it->second)) continue;
    if (!best || it->second < best->metrics.at("kid") ||
        (it->second == best->metrics.at("kid") && e.epoch < best->epoch))
      best = &e;
  }
  if (!best) throw ProtocolError("no checkpoint in the trace carries a KID score");
  io::CheckpointRecord rec;
  rec.epoch = best->epoch;
  rec.model_id = trace.primary_model;
  rec.metrics = best->metrics;
  if (trace.run_dir && best->checkpoint) {
    auto loaded = io::load_checkpoint(*trace.run_dir, best->epoch, trace.primary_model);
    rec.parameters = std::move(loaded.parameters);
    rec.optimizer_state = std::move(loaded.optimizer_state);
  }
  return rec;
}

namespace {

// One (short clip, ground truth) source for the forward model.
struct ClipSet {
  const io::DatasetManifest* c = nullptr;
  const io::DatasetManifest* b = nullptr;
  const data::FrameSource* frames = nullptr;
};

ClipSet clip_set(const DataView& view, io::Split split, const char* what) {
  if (!view.set || !view.source) throw ConfigError(std::string(what) + " data is missing");
  ClipSet s;
  s.c = view.set->get(io::Domain::C, split);
  s.b = view.set->get(io::Domain::B, split);
  s.frames = view.source;
  if (!s.c || !s.b || s.c->empty()) throw ManifestError(std::string(what) + " stage data source is empty");
  io::resolve_pairs(*s.b, *s.c);
  return s;
}

}  // namespace

TrainTrace train_forward(nets::ModelBundle& bundle, const ForwardData& data, const ForwardTrainConfig& cfg,
                         const std::optional<fs::path>& run_dir, const losses::PerceptualExtractor* phi) {
  cfg.validate();
  if (!bundle.forward_model) throw ConfigError("model bundle has no forward model");
  auto& net = *bundle.forward_model;
  losses::RandomConvFeatures default_phi;
  const auto& features = phi ? *phi : static_cast<const losses::PerceptualExtractor&>(default_phi);

  // Resolve every stage's data up front so a missing source fails before training starts.
  std::vector<ClipSet> sources;
  for (const auto& st : cfg.plan.stages) {
    if (st.source == DataSource::Real) {
      sources.push_back(clip_set(data.real, data.split, "real"));
    } else {
      if (!data.synthetic) throw ManifestError("synthetic stage data source is empty");
      sources.push_back(clip_set(*data.synthetic, data.split, "synthetic"));
    }
  }

  TrainTrace trace;
  trace.trainer = "forward";
  trace.primary_model = "forward";
  trace.run_dir = run_dir;
  std::unique_ptr<torch::optim::Adam> opt;
  std::uint32_t global = 0;
  for (std::size_t si = 0; si < cfg.plan.stages.size(); ++si) {
    const auto& st = cfg.plan.stages[si];
    const auto& src = sources[si];
    const auto stage_name = to_string(st.id);
    const auto source_name = to_string(st.source);
    trace.stages.push_back({stage_name, source_name, global, st.epochs});
    if (!opt || cfg.reset_optimizer_per_stage)
      opt = make_adam(net.parameters(), forward_lr_at_epoch(cfg, std::min(global, cfg.total_epochs - 1)),
                      cfg.optimizer);

    for (std::uint32_t e = 0; e < st.epochs; ++e, ++global) {
      const auto start = std::chrono::steady_clock::now();
      const double lr = forward_lr_at_epoch(cfg, global);
      set_lr(*opt, lr);
      auto rng = stream(cfg.seed, global, 3);
      const auto order = data::paired_epoch(src.c->size(), rng, true);
      std::map<std::string, double> sums;
      std::size_t steps = 0;
      net.train();
      for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
        torch::Tensor total;
        std::array<torch::Tensor, 3> terms;
        std::size_t n = 0;
        for (std::size_t k = s; k < std::min(order.size(), s + cfg.batch_size); ++k, ++n) {
          const auto& ec = src.c->entries[order[k]];
          const auto* eb = ec.pair_id ? src.b->find(*ec.pair_id) : nullptr;
          if (!eb) throw ManifestError("short clip '" + ec.id + "' has no ground truth");
          const auto [i, j] = data::draw_frame_indices(ec.frame_count, rng);
          const bool is_static = eb->frame_count == 1;
          if (!is_static && eb->frame_count != ec.frame_count)
            throw ShapeError("dynamic clip '" + ec.id + "' and its ground truth differ in length");
          const auto si_ = forward_input(src.frames->frame(ec, static_cast<std::uint32_t>(i)), ec, *eb,
                                         cfg.ev_scale_input);
          const auto sj_ = forward_input(src.frames->frame(ec, static_cast<std::uint32_t>(j)), ec, *eb,
                                         cfg.ev_scale_input);
          const auto gi = src.frames->frame(*eb, is_static ? 0 : static_cast<std::uint32_t>(i));
          const auto gj = is_static ? gi : src.frames->frame(*eb, static_cast<std::uint32_t>(j));
          if (!si_.sizes().equals(gi.sizes())) throw ShapeError("short clip '" + ec.id + "' and ground truth differ in shape");
          const auto [top, left] = data::draw_window(si_.size(0), si_.size(1), cfg.crop, rng);
          auto cut = [&, top = top, left = left](const torch::Tensor& t) {
            return t.narrow(0, top, cfg.crop).narrow(1, left, cfg.crop);
          };
          const auto in = data::to_nchw({cut(si_), cut(sj_)});
          const auto pred = net.forward(in);
          const auto gt = data::to_nchw({cut(gi), cut(gj)});
          const auto t = losses::forward_losses(pred.narrow(0, 0, 1), pred.narrow(0, 1, 1), gt.narrow(0, 0, 1),
                                                gt.narrow(0, 1, 1), features, is_static);
          const auto sample_total = t.total(cfg.weights);
          total = total.defined() ? total + sample_total : sample_total;
          terms[0] = terms[0].defined() ? terms[0] + t.l_a : t.l_a;
          terms[1] = terms[1].defined() ? terms[1] + t.l_b : t.l_b;
          terms[2] = terms[2].defined() ? terms[2] + t.l_c : t.l_c;
          trace.samples.push_back({global, stage_name, source_name, ec.id});
        }
        total = total / static_cast<double>(n);
        const double v = total.item<double>();
        require_finite(v, "forward loss");
        opt->zero_grad();
        total.backward();
        opt->step();
        trace.step_losses.push_back(v);
        sums["l_a"] += terms[0].item<double>() / n;
        sums["l_b"] += terms[1].item<double>() / n;
        sums["l_c"] += terms[2].item<double>() / n;
        sums["total"] += v;
        ++steps;
      }
      EpochRecord rec;
      rec.epoch = global;
      rec.stage = stage_name;
      rec.lr = lr;
      for (const auto& [k, val] : sums) rec.losses[k] = val / static_cast<double>(std::max<std::size_t>(steps, 1));
      if (run_dir && e + 1 == st.epochs) {
        io::CheckpointRecord ck;
        ck.epoch = global;
        ck.model_id = "forward";
        ck.parameters = io::snapshot_parameters(net);
        ck.optimizer_state = io::snapshot_optimizer(*opt);
        io::save_checkpoint(*run_dir, ck);
        rec.checkpoint = io::epoch_dir(".", global).filename().string();
      }
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      trace.epochs.push_back(std::move(rec));
    }
  }
  if (run_dir) trace.write(*run_dir);
  return trace;
}

nlohmann::json TrainTrace::to_json() const {
  nlohmann::json j;
  j["trainer"] = trainer;
  j["primary_model"] = primary_model;
  if (run_dir) j["run_dir"] = run_dir->string();
  auto& ep = j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) {
    nlohmann::json r{{"epoch", e.epoch}, {"stage", e.stage}, {"lr", e.lr}, {"seconds", e.seconds},
                     {"losses", e.losses}, {"metrics", e.metrics}};
    if (e.checkpoint) r["checkpoint"] = *e.checkpoint;
    ep.push_back(std::move(r));
  }
  auto& st = j["stages"] = nlohmann::json::array();
  for (const auto& s : stages)
    st.push_back({{"stage", s.stage}, {"source", s.source}, {"first_epoch", s.first_epoch}, {"epochs", s.epochs}});
  auto& sm = j["samples"] = nlohmann::json::array();
  for (const auto& s : samples) sm.push_back({s.epoch, s.stage, s.source, s.id});
  j["step_losses"] = step_losses;
  return j;
}

TrainTrace TrainTrace::from_json(const nlohmann::json& j) {
  TrainTrace t;
  t.trainer = j.at("trainer").get<std::string>();
  t.primary_model = j.value("primary_model", "");
  if (j.contains("run_dir")) t.run_dir = j["run_dir"].get<std::string>();
  for (const auto& r : j.at("epochs")) {
    EpochRecord e;
    e.epoch = r.at("epoch");
    e.stage = r.value("stage", "");
    e.lr = r.at("lr");
    e.seconds = r.value("seconds", 0.0);
    e.losses = r.at("losses").get<std::map<std::string, double>>();
    e.metrics = r.at("metrics").get<std::map<std::string, double>>();
    if (r.contains("checkpoint")) e.checkpoint = r["checkpoint"].get<std::string>();
    t.epochs.push_back(std::move(e));
  }
  for (const auto& s : j.value("stages", nlohmann::json::array()))
    t.stages.push_back({s.at("stage"), s.at("source"), s.at("first_epoch"), s.at("epochs")});
  for (const auto& s : j.value("samples", nlohmann::json::array()))
    t.samples.push_back({s.at(0), s.at(1), s.at(2), s.at(3)});
  t.step_losses = j.value("step_losses", std::vector<double>{});
  return t;
}

void TrainTrace::write(const fs::path& dir) const {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "trace.json");
    if (!out) throw IoError("cannot write " + (dir / "trace.json").string());
    out << to_json().dump(1) << '\n';
  }
  std::vector<std::string> keys;
  for (const auto& e : epochs)
    for (const auto& [k, v] : e.losses)
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  std::ofstream csv(dir / "losses.csv");
  if (!csv) throw IoError("cannot write " + (dir / "losses.csv").string());
  csv.precision(std::numeric_limits<double>::max_digits10);
  csv << "epoch,stage,lr";
  for (const auto& k : keys) csv << ',' << k;
  csv << '\n';
  for (const auto& e : epochs) {
    csv << e.epoch << ',' << e.stage << ',' << e.lr;
    for (const auto& k : keys) {
      csv << ',';
      if (auto it = e.losses.find(k); it != e.losses.end()) csv << it->second;
    }
    csv << '\n';
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs_constant", c.epochs_constant},
          {"epochs_decay", c.epochs_decay},
          {"base_lr", c.base_lr},
          {"batch_size", c.batch_size},
          {"crop", c.crop},
          {"seed", c.seed},
          {"optimizer", {{"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2}}},
          {"lambda1", c.weights.lambda1},
          {"lambda2", c.weights.lambda2},
          {"eval_interval", c.eval_interval},
          {"val_count", c.val_count},
          {"replay_pool", c.replay_pool},
          {"pool_size", c.pool_size}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.epochs_constant = j.value("epochs_constant", c.epochs_constant);
  c.epochs_decay = j.value("epochs_decay", c.epochs_decay);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.crop = j.value("crop", c.crop);
  c.seed = j.value("seed", c.seed);
  if (j.contains("optimizer")) {
    c.optimizer.beta1 = j["optimizer"].value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = j["optimizer"].value("beta2", c.optimizer.beta2);
  }
  c.weights.lambda1 = j.value("lambda1", c.weights.lambda1);
  c.weights.lambda2 = j.value("lambda2", c.weights.lambda2);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.val_count = j.value("val_count", c.val_count);
  c.replay_pool = j.value("replay_pool", c.replay_pool);
  c.pool_size = j.value("pool_size", c.pool_size);
  return c;
}

nlohmann::json to_json(const ForwardTrainConfig& c) {
  auto stages = nlohmann::json::array();
  for (const auto& s : c.plan.stages)
    stages.push_back({{"stage", to_string(s.id)}, {"epochs", s.epochs}, {"source", to_string(s.source)}});
  return {{"total_epochs", c.total_epochs},
          {"lr_phase1", c.lr_phase1},
          {"lr_phase2", c.lr_phase2},
          {"phase_boundary", c.phase_boundary},
          {"real_synth_ratio", {c.real_synth_ratio.first, c.real_synth_ratio.second}},
          {"plan", stages},
          {"batch_size", c.batch_size},
          {"crop", c.crop},
          {"seed", c.seed},
          {"optimizer", {{"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2}}},
          {"loss_weights", {c.weights.a, c.weights.b, c.weights.c}},
          {"reset_optimizer_per_stage", c.reset_optimizer_per_stage},
          {"paper_faithful", c.paper_faithful},
          {"ev_scale_input", c.ev_scale_input}};
}

ForwardTrainConfig forward_config_from_json(const nlohmann::json& j, ForwardTrainConfig c) {
  c.total_epochs = j.value("total_epochs", c.total_epochs);
  c.lr_phase1 = j.value("lr_phase1", c.lr_phase1);
  c.lr_phase2 = j.value("lr_phase2", c.lr_phase2);
  c.phase_boundary = j.value("phase_boundary", c.phase_boundary);
  if (j.contains("real_synth_ratio"))
    c.real_synth_ratio = {j["real_synth_ratio"].at(0).get<int>(), j["real_synth_ratio"].at(1).get<int>()};
  if (j.contains("plan")) {
    c.plan.stages.clear();
    for (const auto& s : j["plan"]) {
      const auto src = s.at("source").get<std::string>();
      if (src != "real" && src != "synthetic") throw ConfigError("unknown data source '" + src + "'");
      c.plan.stages.push_back({parse_stage(s.at("stage")), s.at("epochs").get<std::uint32_t>(),
                               src == "real" ? DataSource::Real : DataSource::Synthetic});
    }
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.crop = j.value("crop", c.crop);
  c.seed = j.value("seed", c.seed);
  if (j.contains("optimizer")) {
    c.optimizer.beta1 = j["optimizer"].value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = j["optimizer"].value("beta2", c.optimizer.beta2);
  }
  if (j.contains("loss_weights")) {
    const auto& w = j["loss_weights"];
    c.weights = {w.at(0).get<double>(), w.at(1).get<double>(), w.at(2).get<double>()};
  }
  c.reset_optimizer_per_stage = j.value("reset_optimizer_per_stage", c.reset_optimizer_per_stage);
  c.ev_scale_input = j.value("ev_scale_input", c.ev_scale_input);
  c.paper_faithful = j.value("paper_faithful", c.paper_faithful);
  return c;
}

}  // namespace sidgan::train
