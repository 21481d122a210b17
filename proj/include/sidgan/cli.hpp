#pragma once

// Run configuration, presets and the subcommands behind the `sidgan` tool.
//
// A config file is layered over a named preset ("toy" or "paper"); command-line
// flags override both. Relative data paths resolve against `data_root`, which
// defaults to $SIDGAN_DATA_ROOT. Every command writes into out_dir / run_id.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sidgan/isp.hpp"
#include "sidgan/manifest.hpp"
#include "sidgan/metrics.hpp"
#include "sidgan/nets.hpp"
#include "sidgan/synthesis.hpp"
#include "sidgan/toy.hpp"
#include "sidgan/training.hpp"

namespace sidgan::cli {

struct AblationSpec {
  std::vector<double> real_fractions{0.02, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80, 1.00};
  // {real-only arm, synthetic fine-tuning arm}
  std::array<bool, 2> arms{true, true};

  // Fractions in (0, 1], strictly increasing; at least one arm.
  void validate() const;
};

struct EvalSettings {
  io::Split split = io::Split::Val;
  // 1-based frame compared against the ground truth for image metrics.
  std::uint32_t protocol_frame = 5;
  // Model id loaded from the checkpoint.
  std::string model_id = "forward";
  // Set from the evaluated run; see ForwardTrainConfig::ev_scale_input.
  bool ev_scale_input = false;
};

struct RawDefaults {
  std::string cfa = "RGGB";
  std::uint32_t black_level = 0;
  std::uint32_t white_level = 1023;
};

struct RunConfig {
  std::string run_id = "run";
  std::string preset = "toy";
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs";
  std::filesystem::path data_root;
  std::filesystem::path manifest;
  std::filesystem::path synthetic_manifest;
  // Run directories, optionally suffixed "@<epoch>".
  std::vector<std::string> checkpoints;

  nets::BundleSpec bundle;
  train::TrainConfig train_ab;
  train::TrainConfig train_bc;
  train::ForwardTrainConfig forward;
  isp::IspConfig isp;
  RawDefaults raw;
  toy::ToySpec toy;
  synth::SynthesisOptions synthesis;
  AblationSpec ablation;
  EvalSettings eval;

  std::filesystem::path run_dir() const { return out_dir / run_id; }
  std::filesystem::path resolve(const std::filesystem::path& p) const;
  // Copies `seed` into every trainer config.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

RunConfig preset(const std::string& name);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j, const RunConfig& defaults);
// Preset named by the file (or `preset_name` if given) with the file layered on top.
RunConfig load_config(const std::optional<std::filesystem::path>& file, const std::optional<std::string>& preset_name);

struct CheckpointRef {
  std::filesystem::path run_dir;
  std::optional<std::uint32_t> epoch;
};
CheckpointRef parse_checkpoint_ref(const std::string& s);
// Explicit epoch, else the KID-selected epoch, else the last checkpointed epoch.
std::uint32_t resolve_epoch(const CheckpointRef& ref);
// Rebuilds the run's bundle from run.json and restores every network stored at the epoch.
nets::ModelBundle load_bundle(const CheckpointRef& ref, std::uint32_t* epoch_out = nullptr);

// Forward-model evaluation on the paired C/B clips of a split. Image metrics use the
// protocol frame of each output clip against its ground truth (frame 0 for static
// clips); temporal metrics use every frame. Throws ProtocolError for clips shorter
// than the protocol frame.
metrics::MetricReport evaluate_clips(const synth::FrameMap& model, const train::DataView& data,
                                     const EvalSettings& settings, const std::string& checkpoint_id,
                                     const metrics::FeatureExtractor* features = nullptr);

struct AblationRow {
  double fraction = 0;
  std::string arm;  // "real_only" or "synthetic"
  std::size_t real_count = 0;
  double psnr = 0;
  double ssim = 0;
};

struct AblationInputs {
  train::DataView real;
  std::optional<train::DataView> synthetic;
  nets::BundleSpec bundle;
  train::ForwardTrainConfig forward;
  EvalSettings eval;
  std::uint64_t seed = 0;
};

// One row per (fraction, arm). Subsets are nested and drawn with `seed`.
std::vector<AblationRow> run_ablation(const AblationSpec& spec, const AblationInputs& in);
void write_ablation_csv(const std::filesystem::path& path, const std::vector<AblationRow>& rows);
std::vector<AblationRow> read_ablation_csv(const std::filesystem::path& path);
void plot_ablation(const std::filesystem::path& path, const std::vector<AblationRow>& rows);

// Subcommands. Each writes config.json next to its outputs.
io::ManifestSet cmd_make_toy(const RunConfig& cfg);
io::ManifestSet cmd_preprocess(const RunConfig& cfg);
train::TrainTrace cmd_train_ab(const RunConfig& cfg);
train::TrainTrace cmd_train_bc(const RunConfig& cfg);
io::ManifestSet cmd_synthesize(const RunConfig& cfg);
train::TrainTrace cmd_train_forward(const RunConfig& cfg);
std::vector<metrics::MetricReport> cmd_evaluate(const RunConfig& cfg);
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg);
nlohmann::json cmd_report(const RunConfig& cfg);

}  // namespace sidgan::cli
