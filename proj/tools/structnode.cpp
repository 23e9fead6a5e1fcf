#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>

#include "structnode/xcli/commands.hpp"

namespace xcli = structnode::xcli;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool deterministic = false;
  std::optional<std::string> out;
};

xcli::ExperimentConfig resolve(const Flags& f) {
  auto c = xcli::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.threads) {
    if (*f.threads < 1) throw structnode::SchemaError("--threads must be >= 1");
    c.threads = *f.threads;
  }
  if (f.deterministic) c.deterministic = true;
  if (f.out) c.out = *f.out;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured neural ODE experiments"};
  app.require_subcommand(1);
  Flags flags;
  using Runner = std::function<xcli::json(const xcli::ExperimentConfig&)>;
  const std::map<std::string, std::pair<std::string, Runner>> commands = {
      {"generate", {"Generate training and test datasets", xcli::run_generate}},
      {"train", {"Train a model on the generated dataset", xcli::run_train}},
      {"eval", {"Evaluate a trained model on the test dataset", xcli::run_eval}},
      {"ablate", {"Train and evaluate over one hyperparameter axis", xcli::run_ablate}},
      {"ekf", {"Run the EKF with a trained model", xcli::run_ekf}},
  };
  for (const auto& [name, cmd] : commands) {
    CLI::App* sub = app.add_subcommand(name, cmd.first);
    sub->add_option("--config", flags.config, "Experiment config (JSON)")->required();
    sub->add_option("--seed", flags.seed, "Override the config seed");
    sub->add_option("--threads", flags.threads, "Worker threads");
    sub->add_flag("--deterministic", flags.deterministic, "Serial, fixed-order reductions");
    sub->add_option("--out", flags.out, "Output directory");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : xcli::kUsage;
  }
  try {
    for (const auto& [name, cmd] : commands) {
      if (app.got_subcommand(name)) {
        auto result = cmd.second(resolve(flags));
        for (const char* key : {"rmse", "train_loss", "val_loss"}) result.erase(key);
        std::cout << result.dump(2) << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return xcli::exit_code_for(e);
  }
  return xcli::kOk;
}
