#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rfa/eval.hpp"
#include "rfa/features.hpp"
#include "rfa/synthetic.hpp"

namespace rfa::config {

struct Paths {
  std::filesystem::path manifest = "data/manifest.json";
  /// Frames used as replacement noise; only needed for noise sweeps.
  std::filesystem::path noise_manifest = "data/noise/manifest.json";
  std::filesystem::path model = "out/model.rfanet";
  std::filesystem::path loss_csv = "out/loss.csv";
  std::filesystem::path embeddings = "out/embeddings.rfaemb";
  std::filesystem::path report = "out/report.json";
  std::filesystem::path report_csv = "out/report.csv";
};

/// Every tunable of a run. Relative paths resolve against base_dir (the config file's directory).
struct RunConfig {
  features::FeaturePipeline pipeline;
  eval::ExperimentConfig experiment;
  std::vector<eval::ExperimentSpec> experiments;
  eval::SyntheticConfig synthetic;
  /// Distractor identities written next to the dataset as the noise pool.
  eval::SyntheticConfig noise_pool;
  Paths paths;
  int threads = 1;
  std::filesystem::path base_dir = ".";

  int subseq_len() const { return experiment.train.subseq_len; }
  std::filesystem::path resolve(const std::filesystem::path& p) const;
  /// Throws ConfigError on any inconsistency.
  void validate() const;
};

/// 32x16 frames, 8x4 patches, H=16, L=5, 20 identities: runs end to end in about a minute.
RunConfig desk_config();
/// 128x64 frames, 16x8 patches, H=512, L=10 as in the original setup.
RunConfig full_config();

nlohmann::json to_json(const RunConfig& cfg);

/// Fields missing from `doc` keep the desk defaults; unknown keys are rejected.
RunConfig from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// "train.epochs=50": the value is parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, std::string_view assignment);

/// Reads a config file (or the desk defaults when `path` is empty), applies overrides, validates.
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace rfa::config
