#pragma once

// Optimization loops for the two CycleGANs and the forward model, learning
// rate schedules, KID-based model selection and the training trace.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "sidgan/checkpoint.hpp"
#include "sidgan/domains.hpp"
#include "sidgan/losses.hpp"
#include "sidgan/manifest.hpp"
#include "sidgan/metrics.hpp"
#include "sidgan/nets.hpp"

namespace sidgan::train {

struct OptimizerConfig {
  double beta1 = 0.5;
  double beta2 = 0.999;
};

struct TrainConfig {
  std::uint32_t epochs_constant = 50;
  std::uint32_t epochs_decay = 20;
  double base_lr = 1e-4;
  std::int64_t batch_size = 1;
  std::int64_t crop = 256;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  losses::LossWeights weights = losses::LossWeights::ab();
  // Evaluate (and checkpoint, when a run directory is given) every N epochs and after the last one.
  std::uint32_t eval_interval = 5;
  // Number of validation samples used for KID / PSNR; 0 means the whole split.
  std::size_t val_count = 0;
  bool replay_pool = false;
  std::size_t pool_size = 50;

  std::uint32_t total_epochs() const { return epochs_constant + epochs_decay; }
  // Throws ConfigError: batch_size >= 1, crop divisible by 16, positive epochs, lr >= 0.
  void validate() const;
};

enum class StageId { TrainRealStatic, FinetuneSyntheticDynamic, FinetuneRealStatic };
std::string to_string(StageId s);
StageId parse_stage(const std::string& s);

enum class DataSource { Real, Synthetic };
std::string to_string(DataSource s);

struct TrainStage {
  StageId id = StageId::TrainRealStatic;
  std::uint32_t epochs = 0;
  DataSource source = DataSource::Real;
};

struct TrainPlan {
  std::vector<TrainStage> stages;

  // Real static, synthetic dynamic, real static.
  static TrainPlan three_step(std::uint32_t e1, std::uint32_t e2, std::uint32_t e3);
  // Stage 2 omitted: real data only.
  static TrainPlan real_only(std::uint32_t e1, std::uint32_t e3);
  std::uint32_t total_epochs() const;
  // Stages appear in three-step order (stage 2 optional) and each reads its canonical source.
  bool is_three_step_order() const;
};

struct ForwardTrainConfig {
  std::uint32_t total_epochs = 1000;
  double lr_phase1 = 1e-4;
  double lr_phase2 = 1e-5;
  std::uint32_t phase_boundary = 500;
  std::pair<int, int> real_synth_ratio{1, 45};
  TrainPlan plan = TrainPlan::three_step(400, 300, 300);
  std::int64_t batch_size = 1;
  std::int64_t crop = 256;
  std::uint64_t seed = 0;
  OptimizerConfig optimizer;
  losses::ForwardLossWeights weights;
  bool reset_optimizer_per_stage = true;
  // Stage order must be the three-step order when set.
  bool paper_faithful = true;
  // Brighten short frames by the pair's exposure ratio before the network sees them. Off for
  // preprocessed captures, which are already scaled.
  bool ev_scale_input = false;

  void validate() const;
};

struct EpochRecord {
  std::uint32_t epoch = 0;
  std::string stage;
  double lr = 0;
  double seconds = 0;
  std::map<std::string, double> losses;   // means over the epoch's steps
  std::map<std::string, double> metrics;  // present on evaluation epochs
  std::optional<std::string> checkpoint;  // epoch directory relative to the run directory
};

struct StageBoundary {
  std::string stage;
  std::string source;
  std::uint32_t first_epoch = 0;
  std::uint32_t epochs = 0;
};

struct SampleLogEntry {
  std::uint32_t epoch = 0;
  std::string stage;
  std::string source;
  std::string id;
};

struct TrainTrace {
  std::string trainer;
  std::string primary_model;  // model id returned by model selection
  std::vector<EpochRecord> epochs;
  std::vector<StageBoundary> stages;
  std::vector<SampleLogEntry> samples;
  // Per-step generator objective, in step order.
  std::vector<double> step_losses;
  std::optional<std::filesystem::path> run_dir;

  nlohmann::json to_json() const;
  static TrainTrace from_json(const nlohmann::json& j);
  // trace.json plus losses.csv (one row per epoch, wall-clock excluded from the CSV).
  void write(const std::filesystem::path& dir) const;
};

double lr_at_epoch(const TrainConfig& cfg, std::uint32_t epoch);
double forward_lr_at_epoch(const ForwardTrainConfig& cfg, std::uint32_t epoch);

// Datasets handed to a trainer: a manifest set plus the source its entries load from.
struct DataView {
  const io::ManifestSet* set = nullptr;
  const data::FrameSource* source = nullptr;
};

// Evaluation features for KID; defaults to the fixed random embedding.
struct EvalOptions {
  std::shared_ptr<metrics::FeatureExtractor> features;
};

TrainTrace train_cyclegan_ab(nets::ModelBundle& bundle, const DataView& data, const TrainConfig& cfg,
                             const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                             const EvalOptions& eval = {});

TrainTrace train_cyclegan_bc(nets::ModelBundle& bundle, const DataView& data, const TrainConfig& cfg,
                             const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                             const EvalOptions& eval = {});

// Checkpoint with minimal KID; ties resolve to the earliest epoch. Parameters
// are loaded from the run directory when the trace has one.
io::CheckpointRecord select_model_by_kid(const TrainTrace& trace);

// Real and synthetic short-exposure (C) clips paired with their long-exposure
// (B) ground truth. A B entry with one frame marks a static clip.
struct ForwardData {
  DataView real;
  std::optional<DataView> synthetic;
  io::Split split = io::Split::Train;
};

TrainTrace train_forward(nets::ModelBundle& bundle, const ForwardData& data, const ForwardTrainConfig& cfg,
                         const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                         const losses::PerceptualExtractor* phi = nullptr);

// Network input for a frame of short clip `c` whose ground truth is `b`.
torch::Tensor forward_input(const torch::Tensor& frame, const io::ManifestEntry& c, const io::ManifestEntry& b,
                            bool ev_scale);

// Applies a generator to an (H, W, 3) frame; input is padded to the network divisor and cropped back.
torch::Tensor apply_generator(nets::UNet& g, const torch::Tensor& frame);

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig defaults = {});
nlohmann::json to_json(const ForwardTrainConfig& cfg);
ForwardTrainConfig forward_config_from_json(const nlohmann::json& j, ForwardTrainConfig defaults = {});

}  // namespace sidgan::train
