#include "sidgan/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "sidgan/error.hpp"
#include "sidgan/tensorio.hpp"

namespace sidgan::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_collection(const fs::path& blob_path, const fs::path& index_path,
                      const std::vector<NamedTensor>& tensors) {
  json index = json::array();
  std::vector<torch::Tensor> flat;
  for (const auto& t : tensors) {
    index.push_back({{"name", t.name}, {"shape", t.value.sizes().vec()}});
    flat.push_back(t.value.detach().to(torch::kCPU, torch::kFloat32).contiguous().reshape({-1}));
  }
  write_tensor(blob_path, flat.empty() ? torch::zeros({0}) : torch::cat(flat));
  std::ofstream f(index_path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + index_path.string());
  f << index.dump(1) << '\n';
}

std::vector<NamedTensor> read_collection(const fs::path& blob_path, const fs::path& index_path) {
  std::ifstream f(index_path);
  if (!f) throw IoError("cannot open " + index_path.string());
  json index;
  f >> index;
  const torch::Tensor blob = read_tensor(blob_path);
  if (blob.dim() != 1 || blob.scalar_type() != torch::kFloat32)
    throw FormatError(blob_path.string() + ": expected a flat f32 parameter blob");
  std::vector<NamedTensor> out;
  std::int64_t offset = 0;
  for (const auto& item : index) {
    const auto shape = item.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    if (offset + n > blob.numel()) throw FormatError(blob_path.string() + ": blob shorter than index");
    out.push_back({item.at("name").get<std::string>(), blob.narrow(0, offset, n).reshape(shape).clone()});
    offset += n;
  }
  if (offset != blob.numel()) throw FormatError(blob_path.string() + ": blob longer than index");
  return out;
}

}  // namespace

fs::path epoch_dir(const fs::path& run_dir, std::uint32_t epoch) {
  return run_dir / ("epoch_" + std::to_string(epoch));
}

std::vector<NamedTensor> snapshot_parameters(const torch::nn::Module& module) {
  std::vector<NamedTensor> out;
  for (const auto& p : module.named_parameters(true))
    out.push_back({p.key(), p.value().detach().to(torch::kCPU).clone()});
  for (const auto& b : module.named_buffers(true))
    out.push_back({"buffer:" + b.key(), b.value().detach().to(torch::kCPU).clone()});
  return out;
}

void restore_parameters(torch::nn::Module& module, const std::vector<NamedTensor>& params) {
  torch::NoGradGuard no_grad;
  auto named = module.named_parameters(true);
  auto buffers = module.named_buffers(true);
  if (params.size() != named.size() + buffers.size())
    throw ShapeError("checkpoint mismatch: expected " + std::to_string(named.size() + buffers.size()) +
                     " tensors, found " + std::to_string(params.size()));
  std::size_t i = 0;
  auto assign = [&](const std::string& name, torch::Tensor& target) {
    const auto& src = params[i++];
    if (src.name != name || !src.value.sizes().equals(target.sizes()))
      throw ShapeError("checkpoint mismatch at '" + name + "' (found '" + src.name + "')");
    target.copy_(src.value);
  };
  for (auto& p : named) assign(p.key(), p.value());
  for (auto& b : buffers) assign("buffer:" + b.key(), b.value());
}

std::vector<NamedTensor> snapshot_optimizer(torch::optim::Adam& optimizer) {
  std::vector<NamedTensor> out;
  auto& state = optimizer.state();
  std::size_t idx = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      auto it = state.find(p.unsafeGetTensorImpl());
      if (it != state.end()) {
        auto& s = static_cast<torch::optim::AdamParamState&>(*it->second);
        const auto key = std::to_string(idx);
        out.push_back({key + ".exp_avg", s.exp_avg().clone()});
        out.push_back({key + ".exp_avg_sq", s.exp_avg_sq().clone()});
        out.push_back({key + ".step", torch::full({1}, static_cast<float>(s.step()))});
      }
      ++idx;
    }
  }
  return out;
}

void restore_optimizer(torch::optim::Adam& optimizer, const std::vector<NamedTensor>& state) {
  std::map<std::string, torch::Tensor> by_name;
  for (const auto& t : state) by_name[t.name] = t.value;
  auto& slots = optimizer.state();
  slots.clear();
  std::size_t idx = 0;
  for (auto& group : optimizer.param_groups()) {
    for (auto& p : group.params()) {
      const auto key = std::to_string(idx++);
      auto m = by_name.find(key + ".exp_avg");
      if (m == by_name.end()) continue;
      auto s = std::make_unique<torch::optim::AdamParamState>();
      s->exp_avg(m->second.clone().reshape(p.sizes()));
      s->exp_avg_sq(by_name.at(key + ".exp_avg_sq").clone().reshape(p.sizes()));
      s->step(static_cast<std::int64_t>(by_name.at(key + ".step").item<float>()));
      slots[p.unsafeGetTensorImpl()] = std::move(s);
    }
  }
}

void save_checkpoint(const fs::path& run_dir, const CheckpointRecord& record) {
  const auto dir = epoch_dir(run_dir, record.epoch);
  fs::create_directories(dir);
  write_collection(dir / (record.model_id + ".sgt"), dir / (record.model_id + ".shapes.json"),
                   record.parameters);
  if (!record.optimizer_state.empty())
    write_collection(dir / (record.model_id + ".optim.sgt"), dir / (record.model_id + ".optim.json"),
                     record.optimizer_state);
  if (!record.metrics.empty()) {
    auto merged = fs::exists(dir / "metrics.json") ? read_metrics_snapshot(run_dir, record.epoch)
                                                    : std::map<std::string, double>{};
    for (const auto& [k, v] : record.metrics) merged[k] = v;
    write_metrics_snapshot(run_dir, record.epoch, merged);
  }
}

CheckpointRecord load_checkpoint(const fs::path& run_dir, std::uint32_t epoch, const std::string& model_id) {
  const auto dir = epoch_dir(run_dir, epoch);
  CheckpointRecord r;
  r.epoch = epoch;
  r.model_id = model_id;
  if (!fs::exists(dir / (model_id + ".sgt")))
    throw IoError("no checkpoint for model '" + model_id + "' in " + dir.string());
  r.parameters = read_collection(dir / (model_id + ".sgt"), dir / (model_id + ".shapes.json"));
  if (fs::exists(dir / (model_id + ".optim.sgt")))
    r.optimizer_state = read_collection(dir / (model_id + ".optim.sgt"), dir / (model_id + ".optim.json"));
  if (fs::exists(dir / "metrics.json")) r.metrics = read_metrics_snapshot(run_dir, epoch);
  return r;
}

void write_metrics_snapshot(const fs::path& run_dir, std::uint32_t epoch,
                            const std::map<std::string, double>& metrics) {
  const auto dir = epoch_dir(run_dir, epoch);
  fs::create_directories(dir);
  std::ofstream f(dir / "metrics.json", std::ios::trunc);
  if (!f) throw IoError("cannot write metrics snapshot in " + dir.string());
  f << json(metrics).dump(2) << '\n';
}

std::map<std::string, double> read_metrics_snapshot(const fs::path& run_dir, std::uint32_t epoch) {
  std::ifstream f(epoch_dir(run_dir, epoch) / "metrics.json");
  if (!f) throw IoError("no metrics snapshot for epoch " + std::to_string(epoch));
  json j;
  f >> j;
  return j.get<std::map<std::string, double>>();
}

}  // namespace sidgan::io
