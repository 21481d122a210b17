#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sidgan/cli.hpp"
#include "sidgan/error.hpp"

using namespace sidgan;

namespace {

struct Flags {
  std::optional<std::string> config;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> run_id;
  std::optional<std::string> manifest;
  std::optional<std::string> synthetic;
  std::vector<std::string> checkpoints;
};

void add_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--config", f.config, "JSON config layered over the preset")->check(CLI::ExistingFile);
  sub->add_option("--preset", f.preset, "toy or paper")->check(CLI::IsMember({"toy", "paper"}));
  sub->add_option("--seed", f.seed, "master seed");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--run-id", f.run_id, "run name under the output directory");
  sub->add_option("--manifest", f.manifest, "input manifest (relative to SIDGAN_DATA_ROOT)");
  sub->add_option("--synthetic", f.synthetic, "synthetic manifest for forward training and ablation");
  sub->add_option("--checkpoint", f.checkpoints, "run directory, optionally <dir>@<epoch>; repeatable");
}

cli::RunConfig build_config(const Flags& f) {
  auto cfg = cli::load_config(f.config ? std::optional<std::filesystem::path>(*f.config) : std::nullopt, f.preset);
  if (f.seed) cfg.apply_seed(*f.seed);
  if (f.out) cfg.out_dir = *f.out;
  if (f.run_id) cfg.run_id = *f.run_id;
  if (f.manifest) cfg.manifest = *f.manifest;
  if (f.synthetic) cfg.synthetic_manifest = *f.synthetic;
  if (!f.checkpoints.empty()) cfg.checkpoints = f.checkpoints;
  cfg.validate();
  return cfg;
}

void print_trace(const train::TrainTrace& t) {
  if (t.epochs.empty()) return;
  const auto& last = t.epochs.back();
  std::cout << t.trainer << ": " << t.epochs.size() << " epochs";
  for (const auto& [k, v] : last.losses) std::cout << ' ' << k << '=' << v;
  std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Paired low-light video synthesis and forward-model training"};
  app.require_subcommand(1);
  Flags flags;

  struct Command {
    const char* name;
    const char* help;
    std::function<void(const cli::RunConfig&)> run;
  };
  const std::vector<Command> commands{
      {"make-toy", "write the procedural toy datasets",
       [](const cli::RunConfig& c) {
         const auto set = cli::cmd_make_toy(c);
         std::cout << "wrote " << (c.run_dir() / "cyclegan").string() << " and " << (c.run_dir() / "forward").string()
                   << '\n';
       }},
      {"preprocess", "run the RAW pipeline over a raw manifest",
       [](const cli::RunConfig& c) {
         const auto set = cli::cmd_preprocess(c);
         std::cout << "wrote " << (c.run_dir() / "manifest.json").string() << '\n';
       }},
      {"train-ab", "train the A-B CycleGAN", [](const cli::RunConfig& c) { print_trace(cli::cmd_train_ab(c)); }},
      {"train-bc", "train the semi-supervised B-C CycleGAN",
       [](const cli::RunConfig& c) { print_trace(cli::cmd_train_bc(c)); }},
      {"synthesize", "emit paired long/short synthetic videos",
       [](const cli::RunConfig& c) {
         const auto set = cli::cmd_synthesize(c);
         std::cout << "synthesized " << set.count(io::Domain::C) << " pairs into " << c.run_dir().string() << '\n';
       }},
      {"train-forward", "train the forward model with the staged plan",
       [](const cli::RunConfig& c) { print_trace(cli::cmd_train_forward(c)); }},
      {"evaluate", "evaluate checkpoints on a split (fifth-frame protocol)",
       [](const cli::RunConfig& c) {
         std::cout << metrics::kReportHeader << '\n';
         for (const auto& r : cli::cmd_evaluate(c)) std::cout << metrics::to_csv_row(r) << '\n';
       }},
      {"ablate", "real-fraction ablation with and without synthetic fine-tuning",
       [](const cli::RunConfig& c) {
         std::cout << "fraction,arm,real_count,psnr,ssim\n";
         for (const auto& r : cli::cmd_ablate(c))
           std::cout << r.fraction << ',' << r.arm << ',' << r.real_count << ',' << r.psnr << ',' << r.ssim << '\n';
       }},
      {"report", "summarize run directories", [](const cli::RunConfig& c) { std::cout << cli::cmd_report(c).dump(2) << '\n'; }},
  };

  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_flags(sub, flags);
    subs.emplace_back(sub, &c);
  }

  CLI11_PARSE(app, argc, argv);
  try {
    for (const auto& [sub, cmd] : subs) {
      if (!sub->parsed()) continue;
      const auto cfg = build_config(flags);
      cmd->run(cfg);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
