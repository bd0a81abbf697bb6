#include "rfa/eval.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <set>
#include <thread>
#include <tuple>

#include "rfa/binary_io.hpp"
#include "rfa/error.hpp"
#include "rfa/random.hpp"

namespace rfa::eval {

using aggregate::SequenceEmbedding;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using features::FeatureMatrix;
using nlohmann::json;

namespace {

constexpr std::string_view kManifestFormat = "rfa-manifest";

std::vector<std::filesystem::path> parse_frame_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw DataError("manifest: " + where + " must be an array of paths");
  std::vector<std::filesystem::path> out;
  for (const auto& p : j) {
    if (!p.is_string()) throw DataError("manifest: " + where + " contains a non-string entry");
    out.emplace_back(p.get<std::string>());
  }
  return out;
}

json frame_list_json(const std::vector<std::filesystem::path>& paths) {
  json out = json::array();
  for (const auto& p : paths) out.push_back(p.generic_string());
  return out;
}

const char* camera_name(int camera) { return camera == 0 ? "a" : "b"; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Re-raises with a context prefix, keeping the validation/runtime distinction.
[[noreturn]] void rethrow_with_context(const std::string& ctx) {
  try {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigError(ctx + ": " + e.what());
  } catch (const ContractError& e) {
    throw ContractError(ctx + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(ctx + ": " + e.what());
  } catch (const Error& e) {
    throw DataError(ctx + ": " + e.what());
  }
}

}  // namespace

// ---- manifest ----

void DatasetManifest::validate() const {
  if (persons.empty()) throw DataError("manifest lists no persons");
  std::set<std::uint32_t> seen;
  for (const auto& p : persons) {
    if (!seen.insert(p.id).second) throw DataError("manifest: duplicate person id " + std::to_string(p.id));
    if (p.camera_a.empty() || p.camera_b.empty()) {
      throw DataError("manifest: person " + std::to_string(p.id) + " needs frames from both cameras");
    }
  }
}

std::vector<std::uint32_t> DatasetManifest::ids() const {
  std::vector<std::uint32_t> out;
  for (const auto& p : persons) out.push_back(p.id);
  return out;
}

DatasetManifest parse_manifest(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), e.byte);
  }
  if (!j.is_object()) throw DataError("manifest: top level must be an object");
  if (j.value("format", std::string()) != kManifestFormat) {
    throw DataError("manifest: missing or wrong \"format\" (expected \"rfa-manifest\")");
  }
  if (j.value("version", 0) != 1) throw DataError("manifest: unsupported version");
  if (!j.contains("persons") || !j["persons"].is_array()) throw DataError("manifest: \"persons\" must be an array");

  DatasetManifest m;
  for (std::size_t k = 0; k < j["persons"].size(); ++k) {
    const auto& p = j["persons"][k];
    const std::string where = "persons[" + std::to_string(k) + "]";
    if (!p.is_object()) throw DataError("manifest: " + where + " must be an object");
    if (!p.contains("id") || !p["id"].is_number_unsigned()) {
      throw DataError("manifest: " + where + ".id must be a non-negative integer");
    }
    const auto id = p["id"].get<std::uint64_t>();
    if (id > UINT32_MAX) throw DataError("manifest: " + where + ".id out of range");
    PersonEntry e;
    e.id = static_cast<std::uint32_t>(id);
    if (!p.contains("camera_a") || !p.contains("camera_b")) {
      throw DataError("manifest: " + where + " needs camera_a and camera_b");
    }
    e.camera_a = parse_frame_list(p["camera_a"], where + ".camera_a");
    e.camera_b = parse_frame_list(p["camera_b"], where + ".camera_b");
    m.persons.push_back(std::move(e));
  }
  m.validate();
  return m;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  json persons = json::array();
  for (const auto& p : manifest.persons) {
    persons.push_back({{"id", p.id}, {"camera_a", frame_list_json(p.camera_a)}, {"camera_b", frame_list_json(p.camera_b)}});
  }
  const json j = {{"format", kManifestFormat}, {"version", 1}, {"persons", persons}};
  return j.dump(1) + "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const Error&) {
    rethrow_with_context(path.string());
  }
}

int FeatureDataset::feature_dim() const {
  return persons.empty() ? 0 : static_cast<int>(persons.front().camera_a.cols());
}

std::vector<std::uint32_t> FeatureDataset::ids() const {
  std::vector<std::uint32_t> out;
  for (const auto& p : persons) out.push_back(p.id);
  return out;
}

const PersonSequences& FeatureDataset::person(std::uint32_t id) const {
  for (const auto& p : persons) {
    if (p.id == id) return p;
  }
  throw ContractError("no person with id " + std::to_string(id));
}

namespace {

FeatureMatrix load_sequence(const std::vector<std::filesystem::path>& paths, const std::filesystem::path& base,
                            const features::FeaturePipeline& pipeline, const std::string& ctx) {
  FeatureMatrix out(static_cast<Eigen::Index>(paths.size()), static_cast<Eigen::Index>(pipeline.feature_dim()));
  for (std::size_t t = 0; t < paths.size(); ++t) {
    const auto full = base / paths[t];
    try {
      const auto f = features::featurize(features::read_image(full), pipeline);
      for (std::size_t d = 0; d < f.values.size(); ++d) {
        out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d)) = static_cast<float>(f.values[d]);
      }
    } catch (const Error&) {
      rethrow_with_context(ctx + " frame " + std::to_string(t) + " (" + full.string() + ")");
    }
  }
  return out;
}

}  // namespace

FeatureDataset load_features(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
                             const features::FeaturePipeline& pipeline) {
  manifest.validate();
  pipeline.validate();
  FeatureDataset out;
  for (const auto& p : manifest.persons) {
    const std::string who = "person " + std::to_string(p.id);
    out.persons.push_back({p.id, load_sequence(p.camera_a, base_dir, pipeline, who + " camera a"),
                           load_sequence(p.camera_b, base_dir, pipeline, who + " camera b")});
  }
  return out;
}

FeatureMatrix load_frame_pool(const DatasetManifest& manifest, const std::filesystem::path& base_dir,
                              const features::FeaturePipeline& pipeline) {
  std::vector<std::filesystem::path> all;
  for (const auto& p : manifest.persons) {
    all.insert(all.end(), p.camera_a.begin(), p.camera_a.end());
    all.insert(all.end(), p.camera_b.begin(), p.camera_b.end());
  }
  return load_sequence(all, base_dir, pipeline, "noise pool");
}

// ---- splits ----

std::vector<SplitSpec> make_splits(std::span<const std::uint32_t> ids, int num_trials, std::uint64_t master_seed) {
  if (ids.size() < 2) throw DataError("splitting needs at least 2 persons");
  if (num_trials < 1) throw ConfigError("number of trials must be >= 1");
  std::vector<std::uint32_t> sorted(ids.begin(), ids.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw DataError("duplicate person ids");

  const auto n_train = static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::vector<SplitSpec> out;
  for (int t = 0; t < num_trials; ++t) {
    SplitSpec s;
    s.seed = derive_seed(master_seed, {static_cast<std::uint64_t>(t)});
    auto perm = sorted;
    Rng rng(s.seed);
    rng.shuffle(std::span<std::uint32_t>(perm));
    s.train_ids.assign(perm.begin(), perm.begin() + n_train);
    s.test_ids.assign(perm.begin() + n_train, perm.end());
    std::sort(s.train_ids.begin(), s.train_ids.end());
    std::sort(s.test_ids.begin(), s.test_ids.end());
    out.push_back(std::move(s));
  }
  return out;
}

// ---- CMC ----

CmcCurve compute_cmc(std::span<const SequenceEmbedding> probes, std::span<const SequenceEmbedding> gallery,
                     const matching::Scorer& scorer) {
  if (probes.empty()) throw ContractError("compute_cmc: no probes");
  if (gallery.empty()) throw ContractError("compute_cmc: empty gallery");
  std::vector<VectorXd> items;
  items.reserve(gallery.size());
  for (const auto& g : gallery) items.push_back(g.values);

  std::vector<std::size_t> hits(gallery.size(), 0);
  for (const auto& p : probes) {
    const auto matches = std::count_if(gallery.begin(), gallery.end(),
                                       [&](const SequenceEmbedding& g) { return g.person_id == p.person_id; });
    if (matches != 1) {
      throw ContractError("compute_cmc: probe person " + std::to_string(p.person_id) + " appears " +
                          std::to_string(matches) + " times in the gallery");
    }
    const auto order = matching::rank_gallery(p.values, items, scorer);
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery[static_cast<std::size_t>(order[r])].person_id == p.person_id) {
        ++hits[r];
        break;
      }
    }
  }
  CmcCurve cmc;
  cmc.rates.resize(gallery.size());
  std::size_t cumulative = 0;
  for (std::size_t r = 0; r < hits.size(); ++r) {
    cumulative += hits[r];
    cmc.rates[r] = static_cast<double>(cumulative) / static_cast<double>(probes.size());
  }
  return cmc;
}

CmcCurve mean_cmc(std::span<const CmcCurve> curves) {
  if (curves.empty()) throw ContractError("mean_cmc: no curves");
  CmcCurve out;
  out.rates.assign(curves.front().size(), 0.0);
  for (const auto& c : curves) {
    if (c.size() != out.size()) throw ContractError("mean_cmc: curves differ in length");
    for (std::size_t k = 0; k < c.size(); ++k) out.rates[k] += c.rates[k];
  }
  for (auto& r : out.rates) r /= static_cast<double>(curves.size());
  return out;
}

// ---- noise ----

std::size_t noise_count(std::size_t num_frames, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("noise fraction must lie in [0, 1]");
  // 0.3 * 10 evaluates to 3.0000000000000004; a small slack keeps exact products exact.
  const double x = fraction * static_cast<double>(num_frames);
  return std::min(num_frames, static_cast<std::size_t>(std::ceil(x - 1e-9)));
}

std::vector<std::pair<std::size_t, std::size_t>> plan_noise(std::size_t num_frames, std::size_t pool_size,
                                                            double fraction, std::uint64_t seed) {
  const std::size_t count = noise_count(num_frames, fraction);
  if (count == 0) return {};
  if (pool_size == 0) throw DataError("noise pool is empty");
  Rng rng(seed);
  std::vector<std::size_t> positions(num_frames);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  // Partial Fisher-Yates: the first `count` slots end up a uniform sample without replacement.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.uniform_index(num_frames - i);
    std::swap(positions[i], positions[j]);
  }
  std::vector<std::pair<std::size_t, std::size_t>> plan(count);
  for (std::size_t i = 0; i < count; ++i) plan[i] = {positions[i], rng.uniform_index(pool_size)};
  return plan;
}

FeatureMatrix inject_noise(const FeatureMatrix& frames, const FeatureMatrix& pool, double fraction,
                           std::uint64_t seed) {
  const auto plan = plan_noise(static_cast<std::size_t>(frames.rows()), static_cast<std::size_t>(pool.rows()),
                               fraction, seed);
  if (!plan.empty() && pool.cols() != frames.cols()) throw ContractError("noise pool has a different feature dimension");
  FeatureMatrix out = frames;
  for (const auto& [pos, src] : plan) {
    out.row(static_cast<Eigen::Index>(pos)) = pool.row(static_cast<Eigen::Index>(src));
  }
  return out;
}

std::vector<features::RawImage> inject_noise(std::span<const features::RawImage> frames,
                                             std::span<const features::RawImage> pool, double fraction,
                                             std::uint64_t seed) {
  std::vector<features::RawImage> out(frames.begin(), frames.end());
  for (const auto& [pos, src] : plan_noise(frames.size(), pool.size(), fraction, seed)) out[pos] = pool[src];
  return out;
}

// ---- experiments ----

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Standard:
      return "standard";
    case ExperimentKind::NoiseSweep:
      return "noise";
    case ExperimentKind::DepthSweep:
      return "depth";
    case ExperimentKind::SubseqSweep:
      return "subseq";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (auto k : {ExperimentKind::Standard, ExperimentKind::NoiseSweep, ExperimentKind::DepthSweep,
                 ExperimentKind::SubseqSweep}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown experiment kind '" + std::string(name) + "' (standard, noise, depth, subseq)");
}

void ExperimentConfig::validate() const {
  train.validate();
  aggregation.validate();
  if (arch.hidden_dim < 1) throw ConfigError("hidden dimension must be >= 1");
  if (train.subseq_len != aggregation.subseq_len) {
    throw ConfigError("training and aggregation subsequence lengths differ");
  }
  if (num_trials < 1) throw ConfigError("number of trials must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (matcher == MatcherKind::RankSvm) {
    if (!(ranksvm.C > 0.0)) throw ConfigError("RankSVM C must be > 0");
    if (ranksvm.iterations < 1) throw ConfigError("RankSVM needs at least one iteration");
    if (ranksvm.batch_size < 0) throw ConfigError("RankSVM batch size must be >= 0");
  }
}

const FactorResult& ExperimentReport::at_level(double level) const {
  for (const auto& r : results) {
    if (r.level == level) return r;
  }
  throw ContractError("report has no factor level " + format_level(level));
}

std::vector<rnn::TrainingSequence> training_sequences(const FeatureDataset& dataset,
                                                      std::span<const std::uint32_t> ids) {
  std::vector<rnn::TrainingSequence> out;
  for (std::size_t label = 0; label < ids.size(); ++label) {
    const auto& p = dataset.person(ids[label]);
    const std::string base = "person " + std::to_string(p.id) + " camera ";
    out.push_back({base + "a", static_cast<int>(label), &p.camera_a});
    out.push_back({base + "b", static_cast<int>(label), &p.camera_b});
  }
  return out;
}

std::uint64_t window_seed(std::uint64_t base, int trial, std::uint32_t person, int camera, int k) {
  return derive_seed(base, {static_cast<std::uint64_t>(trial), person, static_cast<std::uint64_t>(camera),
                            static_cast<std::uint64_t>(k)});
}

namespace {

void check_levels(const ExperimentSpec& spec, int L) {
  if (spec.kind == ExperimentKind::Standard && !spec.levels.empty()) {
    throw ConfigError("the standard experiment takes no levels");
  }
  for (double v : spec.levels) {
    switch (spec.kind) {
      case ExperimentKind::NoiseSweep:
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("noise levels must lie in [0, 1]");
        break;
      case ExperimentKind::SubseqSweep:
        if (v < 1.0 || v != std::floor(v) || v > 1e6) throw ConfigError("subsequence counts must be integers >= 1");
        break;
      case ExperimentKind::DepthSweep:
        if (v < 1.0 || v > L || v != std::floor(v)) {
          throw ConfigError("fusion depths must be integers in 1.." + std::to_string(L));
        }
        break;
      case ExperimentKind::Standard:
        break;
    }
  }
  if (spec.kind == ExperimentKind::NoiseSweep && spec.levels.empty()) throw ConfigError("noise sweep needs levels");
  if (spec.kind == ExperimentKind::SubseqSweep && spec.levels.empty()) throw ConfigError("subseq sweep needs levels");
}

std::vector<double> resolved_levels(const ExperimentSpec& spec, int L) {
  if (spec.kind == ExperimentKind::Standard) return {0.0};
  if (spec.kind == ExperimentKind::DepthSweep && spec.levels.empty()) {
    std::vector<double> out;
    for (int d = 1; d <= L; ++d) out.push_back(d);
    return out;
  }
  return spec.levels;
}

// What one factor level changes about the embedding.
struct Variant {
  int k = 0;
  double noise = 0.0;
  int depth = 0;  // 0 = full concatenation
};

Variant variant_for(const ExperimentSpec& spec, double level, const ExperimentConfig& cfg) {
  Variant v{cfg.aggregation.num_subsequences, 0.0, 0};
  switch (spec.kind) {
    case ExperimentKind::NoiseSweep:
      v.noise = level;
      break;
    case ExperimentKind::DepthSweep:
      v.depth = static_cast<int>(level);
      break;
    case ExperimentKind::SubseqSweep:
      v.k = static_cast<int>(level);
      break;
    case ExperimentKind::Standard:
      break;
  }
  return v;
}

// Per-trial evaluator; memoizes the averaged hidden-state matrices across factor levels.
class TrialEvaluator {
 public:
  TrialEvaluator(const rnn::RfaModel& model, const FeatureDataset& data, const FeatureMatrix& pool,
                 const ExperimentConfig& cfg, int trial)
      : model_(model), data_(data), pool_(pool), cfg_(cfg), trial_(trial) {}

  CmcCurve evaluate(const Variant& v, const SplitSpec& split) {
    const auto probes = embeddings(split.test_ids, 0, v);
    const auto gallery = embeddings(split.test_ids, 1, v);
    if (cfg_.matcher == MatcherKind::Cosine) return compute_cmc(probes, gallery, matching::Scorer::cosine());

    Variant clean = v;
    clean.noise = 0.0;
    const auto train_a = embeddings(split.train_ids, 0, clean);
    const auto train_b = embeddings(split.train_ids, 1, clean);
    std::vector<VectorXd> a, b;
    for (const auto& e : train_a) a.push_back(e.values);
    for (const auto& e : train_b) b.push_back(e.values);
    auto opts = cfg_.ranksvm;
    opts.seed = derive_seed(cfg_.ranksvm.seed, {static_cast<std::uint64_t>(trial_)});
    const matching::Scorer scorer(matching::train_ranksvm(a, b, opts));
    return compute_cmc(probes, gallery, scorer);
  }

 private:
  using Key = std::tuple<std::uint32_t, int, int, double>;

  const MatrixXd& means(std::uint32_t id, int camera, int k, double noise) {
    const Key key{id, camera, k, noise};
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    const auto& p = data_.person(id);
    try {
      const FeatureMatrix& clean = camera == 0 ? p.camera_a : p.camera_b;
      FeatureMatrix noisy;
      if (noise > 0.0) {
        noisy = inject_noise(clean, pool_, noise,
                             derive_seed(cfg_.noise_seed, {static_cast<std::uint64_t>(trial_), id,
                                                           static_cast<std::uint64_t>(camera),
                                                           std::bit_cast<std::uint64_t>(noise)}));
      }
      const aggregate::AggregationConfig ac{cfg_.aggregation.subseq_len, k,
                                            window_seed(cfg_.aggregation.seed, trial_, id, camera, k)};
      return cache_.emplace(key, aggregate::mean_hidden_states(model_, noise > 0.0 ? noisy : clean, ac))
          .first->second;
    } catch (const Error&) {
      rethrow_with_context("person " + std::to_string(id) + " camera " + camera_name(camera));
    }
  }

  std::vector<SequenceEmbedding> embeddings(std::span<const std::uint32_t> ids, int camera, const Variant& v) {
    std::vector<SequenceEmbedding> out;
    for (const auto id : ids) {
      const MatrixXd& m = means(id, camera, v.k, v.noise);
      SequenceEmbedding e;
      e.person_id = id;
      e.camera = static_cast<std::uint8_t>(camera);
      e.values = v.depth > 0 ? VectorXd(m.col(v.depth - 1)) : VectorXd(Eigen::Map<const VectorXd>(m.data(), m.size()));
      out.push_back(std::move(e));
    }
    return out;
  }

  const rnn::RfaModel& model_;
  const FeatureDataset& data_;
  const FeatureMatrix& pool_;
  const ExperimentConfig& cfg_;
  int trial_;
  std::map<Key, MatrixXd> cache_;
};

struct TrialOutput {
  // [spec][level]
  std::vector<std::vector<CmcCurve>> curves;
  TrialTiming timing;
  double final_loss = 0.0;
};

TrialOutput evaluate_trial(const rnn::RfaModel& model, const FeatureDataset& data, const FeatureMatrix& pool,
                           const ExperimentConfig& cfg, int trial, const SplitSpec& split,
                           std::span<const ExperimentSpec> specs) {
  TrialOutput out;
  TrialEvaluator ev(model, data, pool, cfg, trial);
  for (const auto& spec : specs) {
    std::vector<CmcCurve> per_level;
    for (double level : resolved_levels(spec, cfg.aggregation.subseq_len)) {
      per_level.push_back(ev.evaluate(variant_for(spec, level, cfg), split));
    }
    out.curves.push_back(std::move(per_level));
  }
  return out;
}

}  // namespace

void validate_specs(std::span<const ExperimentSpec> specs, int subseq_len) {
  if (specs.empty()) throw ConfigError("no experiments selected");
  for (const auto& s : specs) check_levels(s, subseq_len);
}

bool needs_noise_pool(std::span<const ExperimentSpec> specs) {
  return std::any_of(specs.begin(), specs.end(), [](const ExperimentSpec& s) {
    return s.kind == ExperimentKind::NoiseSweep &&
           std::any_of(s.levels.begin(), s.levels.end(), [](double v) { return v > 0.0; });
  });
}

namespace {

void validate_inputs(const FeatureDataset& data, const FeatureMatrix& pool, const ExperimentConfig& cfg,
                     std::span<const ExperimentSpec> specs) {
  cfg.validate();
  validate_specs(specs, cfg.aggregation.subseq_len);
  for (const auto& s : specs) {
    if (s.kind == ExperimentKind::NoiseSweep) {
      const bool needs_pool = std::any_of(s.levels.begin(), s.levels.end(), [](double v) { return v > 0.0; });
      if (needs_pool && pool.rows() == 0) throw ConfigError("noise sweep requested without a noise pool");
      if (needs_pool && pool.cols() != data.feature_dim()) {
        throw ConfigError("noise pool feature dimension differs from the dataset's");
      }
    }
  }
  if (data.persons.size() < 4) throw DataError("experiments need at least 4 persons (2 train, 2 test)");
  for (const auto& p : data.persons) {
    if (p.camera_a.cols() != data.feature_dim() || p.camera_b.cols() != data.feature_dim()) {
      throw DataError("person " + std::to_string(p.id) + " has an inconsistent feature dimension");
    }
    for (const auto* seq : {&p.camera_a, &p.camera_b}) {
      if (seq->rows() < cfg.aggregation.subseq_len) {
        throw DataError("person " + std::to_string(p.id) + " has a sequence of " + std::to_string(seq->rows()) +
                        " frames, shorter than subsequence length " + std::to_string(cfg.aggregation.subseq_len));
      }
    }
  }
}

std::vector<ExperimentReport> assemble(std::span<const ExperimentSpec> specs, const ExperimentConfig& cfg,
                                       const std::vector<SplitSpec>& splits, std::vector<TrialOutput>& trials) {
  std::vector<ExperimentReport> reports;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    ExperimentReport r;
    r.kind = specs[s].kind;
    r.splits = splits;
    const auto levels = resolved_levels(specs[s], cfg.aggregation.subseq_len);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      FactorResult f;
      f.level = levels[l];
      for (auto& t : trials) f.trials.push_back(t.curves[s][l]);
      f.mean = mean_cmc(f.trials);
      r.results.push_back(std::move(f));
    }
    for (const auto& t : trials) {
      r.timings.push_back(t.timing);
      r.final_loss.push_back(t.final_loss);
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace

std::vector<ExperimentReport> run_experiments(const FeatureDataset& dataset, const FeatureMatrix& noise_pool,
                                              const ExperimentConfig& config, std::span<const ExperimentSpec> specs,
                                              const ProgressFn& progress) {
  validate_inputs(dataset, noise_pool, config, specs);
  const auto splits = make_splits(dataset.ids(), config.num_trials, config.split_seed);
  std::vector<TrialOutput> trials(splits.size());
  std::vector<std::exception_ptr> errors(splits.size());

  const int workers = std::min<int>(config.threads, static_cast<int>(splits.size()));
  auto run_trial = [&](int t) {
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const auto seqs = training_sequences(dataset, splits[t].train_ids);
      auto tc = config.train;
      tc.seed = derive_seed(config.train.seed, {static_cast<std::uint64_t>(t)});
      if (workers > 1) tc.threads = 1;
      auto trained = rnn::train(seqs, config.arch, tc);
      const double train_s = seconds_since(t0);
      const auto t1 = std::chrono::steady_clock::now();
      trials[t] = evaluate_trial(trained.model, dataset, noise_pool, config, t, splits[t], specs);
      trials[t].timing = {train_s, seconds_since(t1)};
      trials[t].final_loss = trained.epoch_loss.empty() ? 0.0 : trained.epoch_loss.back();
    } catch (const Error&) {
      try {
        rethrow_with_context("trial " + std::to_string(t));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };

  if (workers <= 1) {
    for (int t = 0; t < static_cast<int>(splits.size()); ++t) {
      run_trial(t);
      if (errors[t]) std::rethrow_exception(errors[t]);
      if (progress) progress("trial " + std::to_string(t) + " done");
    }
  } else {
    std::atomic<int> next{0};
    {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (int t = next++; t < static_cast<int>(splits.size()); t = next++) run_trial(t);
        });
      }
    }
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    if (progress) progress(std::to_string(splits.size()) + " trials done");
  }
  return assemble(specs, config, splits, trials);
}

ExperimentReport run_experiment(const FeatureDataset& dataset, const FeatureMatrix& noise_pool,
                                const ExperimentConfig& config, const ExperimentSpec& spec) {
  return run_experiments(dataset, noise_pool, config, std::span<const ExperimentSpec>(&spec, 1)).front();
}

std::vector<ExperimentReport> evaluate_model(const rnn::RfaModel& model, const FeatureDataset& dataset,
                                             const FeatureMatrix& noise_pool, const ExperimentConfig& config,
                                             const SplitSpec& split, std::span<const ExperimentSpec> specs) {
  validate_inputs(dataset, noise_pool, config, specs);
  model.check_consistent();
  if (model.shape.input_dim != dataset.feature_dim()) {
    throw ConfigError("model input dimension " + std::to_string(model.shape.input_dim) +
                      " does not match the feature dimension " + std::to_string(dataset.feature_dim()));
  }
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<TrialOutput> trials{evaluate_trial(model, dataset, noise_pool, config, 0, split, specs)};
  trials[0].timing = {0.0, seconds_since(t0)};
  return assemble(specs, config, {split}, trials);
}

// ---- report output ----

std::string format_level(double level) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), level);
  return std::string(buf, res.ptr);
}

std::string report_csv(std::span<const ExperimentReport> reports) {
  std::string out = "experiment,factor_level,trial,rank,rate\n";
  auto emit = [&](const ExperimentReport& r, const FactorResult& f, const std::string& trial, const CmcCurve& c) {
    const std::string level = r.kind == ExperimentKind::Standard ? "na" : format_level(f.level);
    for (std::size_t k = 0; k < c.size(); ++k) {
      out += std::string(to_string(r.kind)) + "," + level + "," + trial + "," + std::to_string(k + 1) + "," +
             format_level(c.rates[k]) + "\n";
    }
  };
  for (const auto& r : reports) {
    for (const auto& f : r.results) {
      for (std::size_t t = 0; t < f.trials.size(); ++t) emit(r, f, std::to_string(t), f.trials[t]);
      emit(r, f, "mean", f.mean);
    }
  }
  return out;
}

json report_json(std::span<const ExperimentReport> reports, const json& config_echo) {
  json experiments = json::array();
  for (const auto& r : reports) {
    json levels = json::array();
    for (const auto& f : r.results) {
      json trials = json::array();
      for (const auto& c : f.trials) trials.push_back(c.rates);
      json entry = {{"mean", f.mean.rates}, {"trials", trials}};
      if (r.kind != ExperimentKind::Standard) entry["level"] = f.level;
      levels.push_back(std::move(entry));
    }
    experiments.push_back({{"kind", to_string(r.kind)}, {"results", levels}});
  }
  json out = {{"config", config_echo}, {"experiments", experiments}};
  if (!reports.empty()) {
    json splits = json::array();
    for (const auto& s : reports.front().splits) {
      splits.push_back({{"seed", s.seed}, {"train_ids", s.train_ids}, {"test_ids", s.test_ids}});
    }
    json timings = json::array();
    for (const auto& t : reports.front().timings) {
      timings.push_back({{"train_seconds", t.train_seconds}, {"eval_seconds", t.eval_seconds}});
    }
    out["splits"] = splits;
    out["final_train_loss"] = reports.front().final_loss;
    out["timings"] = timings;
  }
  return out;
}

}  // namespace rfa::eval
