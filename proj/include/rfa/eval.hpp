#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rfa/aggregate.hpp"
#include "rfa/features.hpp"
#include "rfa/matching.hpp"
#include "rfa/rnn.hpp"

namespace rfa::eval {

// ---- dataset manifest ----

struct PersonEntry {
  std::uint32_t id = 0;
  /// Ordered frame paths, relative to the manifest's directory.
  std::vector<std::filesystem::path> camera_a;
  std::vector<std::filesystem::path> camera_b;

  friend bool operator==(const PersonEntry&, const PersonEntry&) = default;
};

struct DatasetManifest {
  std::vector<PersonEntry> persons;

  /// Throws DataError: no persons, duplicate ids, or an empty frame list.
  void validate() const;
  std::vector<std::uint32_t> ids() const;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// {"format": "rfa-manifest", "version": 1, "persons": [{"id", "camera_a": [...], "camera_b": [...]}]}
DatasetManifest parse_manifest(std::string_view json_text);
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Per-person frame features for both cameras.
struct PersonSequences {
  std::uint32_t id = 0;
  features::FeatureMatrix camera_a;
  features::FeatureMatrix camera_b;
};

struct FeatureDataset {
  std::vector<PersonSequences> persons;

  int feature_dim() const;
  std::vector<std::uint32_t> ids() const;
  const PersonSequences& person(std::uint32_t id) const;
};

/// Reads and featurizes every frame; errors name the person, camera and file.
FeatureDataset load_features(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
                             const features::FeaturePipeline& pipeline);

/// All frames of a manifest stacked into one matrix (noise pools).
features::FeatureMatrix load_frame_pool(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
                                        const features::FeaturePipeline& pipeline);

// ---- splits ----

struct SplitSpec {
  std::uint64_t seed = 0;
  /// Both sorted ascending.
  std::vector<std::uint32_t> train_ids;
  std::vector<std::uint32_t> test_ids;

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

/// floor(N/2) identities train, the rest test; trial t uses seed derive_seed(master_seed, {t}).
std::vector<SplitSpec> make_splits(std::span<const std::uint32_t> ids, int num_trials, std::uint64_t master_seed);

// ---- CMC ----

struct CmcCurve {
  /// rates[k - 1] is the rank-k matching rate.
  std::vector<double> rates;

  double rank(int k) const { return rates.at(static_cast<std::size_t>(k - 1)); }
  std::size_t size() const { return rates.size(); }
  friend bool operator==(const CmcCurve&, const CmcCurve&) = default;
};

/// Rank of each probe's true match under rank_gallery (ties broken by gallery order).
/// Each probe identity must occur exactly once in the gallery.
CmcCurve compute_cmc(std::span<const aggregate::SequenceEmbedding> probes,
                     std::span<const aggregate::SequenceEmbedding> gallery, const matching::Scorer& scorer);

CmcCurve mean_cmc(std::span<const CmcCurve> curves);

// ---- noise injection ----

/// ceil(p*T) distinct positions, each paired with a uniformly drawn pool index.
std::vector<std::pair<std::size_t, std::size_t>> plan_noise(std::size_t num_frames, std::size_t pool_size,
                                                            double fraction, std::uint64_t seed);

std::size_t noise_count(std::size_t num_frames, double fraction);

features::FeatureMatrix inject_noise(const features::FeatureMatrix& frames, const features::FeatureMatrix& pool,
                                     double fraction, std::uint64_t seed);

std::vector<features::RawImage> inject_noise(std::span<const features::RawImage> frames,
                                             std::span<const features::RawImage> pool, double fraction,
                                             std::uint64_t seed);

// ---- experiments ----

enum class ExperimentKind { Standard, NoiseSweep, DepthSweep, SubseqSweep };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view name);

struct ExperimentSpec {
  ExperimentKind kind = ExperimentKind::Standard;
  /// Noise fractions, or subsequence counts. Depth sweeps use 1..L when empty.
  std::vector<double> levels;
};

/// Throws ConfigError for out-of-range levels (noise in [0,1], integer K >= 1, depth in 1..L).
void validate_specs(std::span<const ExperimentSpec> specs, int subseq_len);
bool needs_noise_pool(std::span<const ExperimentSpec> specs);

enum class MatcherKind { Cosine, RankSvm };

struct ExperimentConfig {
  rnn::ArchConfig arch;
  rnn::TrainConfig train;
  aggregate::AggregationConfig aggregation;
  MatcherKind matcher = MatcherKind::Cosine;
  matching::RankSvmOptions ranksvm;
  int num_trials = 10;
  std::uint64_t split_seed = 0;
  std::uint64_t noise_seed = 0;
  /// Trials run in parallel up to this many workers.
  int threads = 1;

  void validate() const;
};

struct FactorResult {
  double level = 0.0;
  std::vector<CmcCurve> trials;
  CmcCurve mean;
};

struct TrialTiming {
  double train_seconds = 0.0;
  double eval_seconds = 0.0;
};

struct ExperimentReport {
  ExperimentKind kind = ExperimentKind::Standard;
  std::vector<FactorResult> results;
  std::vector<SplitSpec> splits;
  std::vector<TrialTiming> timings;
  /// Final epoch loss of each trial's model.
  std::vector<double> final_loss;

  const FactorResult& at_level(double level) const;
};

/// Progress messages (trial finished, etc.); may be empty.
using ProgressFn = std::function<void(const std::string&)>;

/// Runs every spec; each trial trains one model that all specs share. Noise is injected into the
/// test sequences only, with independent positions per sequence.
std::vector<ExperimentReport> run_experiments(const FeatureDataset& dataset, const features::FeatureMatrix& noise_pool,
                                              const ExperimentConfig& config, std::span<const ExperimentSpec> specs,
                                              const ProgressFn& progress = {});

ExperimentReport run_experiment(const FeatureDataset& dataset, const features::FeatureMatrix& noise_pool,
                                const ExperimentConfig& config, const ExperimentSpec& spec);

/// Evaluates one already trained model on a given split (no training).
std::vector<ExperimentReport> evaluate_model(const rnn::RfaModel& model, const FeatureDataset& dataset,
                                             const features::FeatureMatrix& noise_pool, const ExperimentConfig& config,
                                             const SplitSpec& split, std::span<const ExperimentSpec> specs);

/// Training sequences (both cameras) for the given identities, labelled by position in `ids`.
std::vector<rnn::TrainingSequence> training_sequences(const FeatureDataset& dataset,
                                                      std::span<const std::uint32_t> ids);

/// Window-sampling seed for one sequence.
std::uint64_t window_seed(std::uint64_t base, int trial, std::uint32_t person, int camera, int k);

// ---- report output ----

/// Shortest round-trip text for a factor level.
std::string format_level(double level);

/// experiment,factor_level,trial,rank,rate with trial = index or "mean".
std::string report_csv(std::span<const ExperimentReport> reports);

/// Per-trial and mean curves, splits, timings, and the supplied config echo.
nlohmann::json report_json(std::span<const ExperimentReport> reports, const nlohmann::json& config_echo);

}  // namespace rfa::eval
