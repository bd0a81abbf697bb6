#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace rfa::cli {

enum ExitCode : int { kOk = 0, kValidationError = 1, kRuntimeError = 2 };

struct ConfigArgs {
  /// Empty: built-in desk defaults, paths relative to the working directory.
  std::filesystem::path config;
  std::vector<std::string> overrides;
  std::optional<int> threads;
};

struct SynthArgs {
  ConfigArgs cfg;
  std::filesystem::path out;
  bool force = false;
};

struct TrainArgs {
  ConfigArgs cfg;
  bool force = false;
};

struct EmbedArgs {
  ConfigArgs cfg;
  /// Empty: the config's paths.model / paths.embeddings.
  std::filesystem::path model;
  std::filesystem::path out;
};

struct EvalArgs {
  ConfigArgs cfg;
  std::optional<std::filesystem::path> model;
};

struct GradcheckArgs {
  int d = 6;
  int h = 4;
  int n = 3;
  int l = 5;
  std::uint64_t seed = 1;
  bool diagonal = false;
  bool last_step = false;
  /// Negative control: perturbs one analytic gradient entry so the check must fail.
  bool corrupt = false;
};

/// Largest parameter count gradcheck accepts (one forward pass pair per parameter).
constexpr std::size_t kGradcheckMaxParams = 20000;

/// Writes the synthetic dataset (and the noise pool under <out>/noise) as PPM files plus manifests.
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);
/// Trains on trial 0's training identities; writes the model and a per-epoch loss CSV.
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
/// Embeds every sequence of the manifest with a trained model.
int cmd_embed(const EmbedArgs& args, std::ostream& out, std::ostream& err);
/// Runs the configured experiments; with a model, evaluates it on trial 0's split only.
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);
/// Prints the effective configuration as JSON.
int cmd_config(const ConfigArgs& args, bool full, std::ostream& out, std::ostream& err);

/// Maps library exceptions to exit codes and prints "error: ..." to err.
int guarded(const std::function<int()>& body, std::ostream& err);

}  // namespace rfa::cli
