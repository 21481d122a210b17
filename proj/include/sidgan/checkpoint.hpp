#pragma once

// Checkpoint directory layout:
//
//   <run_dir>/epoch_<N>/<model_id>.sgt          all parameters, flattened f32
//   <run_dir>/epoch_<N>/<model_id>.shapes.json  names and shapes to unflatten
//   <run_dir>/epoch_<N>/<model_id>.optim.sgt    optimizer moments (optional)
//   <run_dir>/epoch_<N>/metrics.json            metric snapshot for the epoch

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace sidgan::io {

struct NamedTensor {
  std::string name;
  torch::Tensor value;
};

struct CheckpointRecord {
  std::uint32_t epoch = 0;
  std::string model_id;
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> optimizer_state;
  std::map<std::string, double> metrics;
};

std::filesystem::path epoch_dir(const std::filesystem::path& run_dir, std::uint32_t epoch);

// Snapshot of a module's parameters and buffers (deep copies, CPU, f32).
std::vector<NamedTensor> snapshot_parameters(const torch::nn::Module& module);
// Copies values back into the module; names and shapes must match exactly.
void restore_parameters(torch::nn::Module& module, const std::vector<NamedTensor>& params);

// Adam moment buffers in parameter order: exp_avg, exp_avg_sq and step per parameter.
std::vector<NamedTensor> snapshot_optimizer(torch::optim::Adam& optimizer);
void restore_optimizer(torch::optim::Adam& optimizer, const std::vector<NamedTensor>& state);

void save_checkpoint(const std::filesystem::path& run_dir, const CheckpointRecord& record);
CheckpointRecord load_checkpoint(const std::filesystem::path& run_dir, std::uint32_t epoch,
                                 const std::string& model_id);

void write_metrics_snapshot(const std::filesystem::path& run_dir, std::uint32_t epoch,
                            const std::map<std::string, double>& metrics);
std::map<std::string, double> read_metrics_snapshot(const std::filesystem::path& run_dir,
                                                    std::uint32_t epoch);

}  // namespace sidgan::io
