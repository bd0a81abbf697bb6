#include "rfa/config.hpp"

#include "rfa/binary_io.hpp"
#include "rfa/error.hpp"

namespace rfa::config {

using nlohmann::json;

namespace {

std::string_view peephole_name(rnn::PeepholeMode m) { return m == rnn::PeepholeMode::Full ? "full" : "diagonal"; }
std::string_view loss_name(rnn::LossMode m) { return m == rnn::LossMode::PerTimestep ? "per_timestep" : "last_step"; }
std::string_view matcher_name(eval::MatcherKind m) { return m == eval::MatcherKind::Cosine ? "cosine" : "ranksvm"; }

// Every key in `user` must exist in `reference`; arrays are checked by the typed readers instead.
void check_known_keys(const json& user, const json& reference, const std::string& where) {
  if (!user.is_object()) {
    throw ConfigError("config: " + (where.empty() ? std::string("top level") : where) + " must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!reference.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (reference[key].is_object()) check_known_keys(value, reference[key], path);
  }
}

const json& field(const json& j, const char* section, const char* key) {
  const auto& s = j.at(section);
  if (!s.contains(key)) throw ConfigError(std::string("config: missing ") + section + "." + key);
  return s.at(key);
}

std::string name(const char* section, const char* key) { return std::string(section) + "." + key; }

int get_int(const json& j, const char* section, const char* key) {
  const auto& v = field(j, section, key);
  if (!v.is_number_integer()) throw ConfigError("config: " + name(section, key) + " must be an integer");
  const auto x = v.get<std::int64_t>();
  if (x < INT32_MIN || x > INT32_MAX) throw ConfigError("config: " + name(section, key) + " out of range");
  return static_cast<int>(x);
}

std::uint64_t get_seed(const json& j, const char* section, const char* key) {
  const auto& v = field(j, section, key);
  if (!v.is_number_unsigned()) throw ConfigError("config: " + name(section, key) + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

double get_double(const json& j, const char* section, const char* key) {
  const auto& v = field(j, section, key);
  if (!v.is_number()) throw ConfigError("config: " + name(section, key) + " must be a number");
  return v.get<double>();
}

std::string get_string(const json& j, const char* section, const char* key) {
  const auto& v = field(j, section, key);
  if (!v.is_string()) throw ConfigError("config: " + name(section, key) + " must be a string");
  return v.get<std::string>();
}

std::array<double, 3> get_triple(const json& j, const char* section, const char* key) {
  const auto& v = field(j, section, key);
  if (!v.is_array() || v.size() != 3) throw ConfigError("config: " + name(section, key) + " must be 3 numbers");
  std::array<double, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    if (!v[c].is_number()) throw ConfigError("config: " + name(section, key) + " must be 3 numbers");
    out[c] = v[c].get<double>();
  }
  return out;
}

json synthetic_json(const eval::SyntheticConfig& s, const eval::SyntheticConfig& pool) {
  return {{"persons", s.num_persons},
          {"frames_per_camera", s.frames_per_camera},
          {"width", s.width},
          {"height", s.height},
          {"seed", s.seed},
          {"jitter", s.jitter},
          {"shift_gain", s.shift.gain},
          {"shift_offset", s.shift.offset},
          {"noise_pool", {{"persons", pool.num_persons}, {"frames_per_camera", pool.frames_per_camera}, {"seed", pool.seed}}}};
}

std::vector<eval::ExperimentSpec> parse_experiments(const json& v) {
  if (!v.is_array()) throw ConfigError("config: eval.experiments must be an array");
  std::vector<eval::ExperimentSpec> out;
  for (const auto& e : v) {
    if (!e.is_object()) throw ConfigError("config: each eval.experiments entry must be an object");
    for (const auto& [key, _] : e.items()) {
      if (key != "kind" && key != "levels") throw ConfigError("config: unknown key 'eval.experiments[]." + key + "'");
    }
    if (!e.contains("kind") || !e["kind"].is_string()) throw ConfigError("config: experiment entries need a kind");
    eval::ExperimentSpec spec;
    spec.kind = eval::parse_experiment_kind(e["kind"].get<std::string>());
    if (e.contains("levels")) {
      if (!e["levels"].is_array()) throw ConfigError("config: experiment levels must be an array");
      for (const auto& l : e["levels"]) {
        if (!l.is_number()) throw ConfigError("config: experiment levels must be numbers");
        spec.levels.push_back(l.get<double>());
      }
    }
    out.push_back(std::move(spec));
  }
  return out;
}

}  // namespace

std::filesystem::path RunConfig::resolve(const std::filesystem::path& p) const {
  return p.is_absolute() ? p : base_dir / p;
}

void RunConfig::validate() const {
  pipeline.validate();
  experiment.validate();
  eval::validate_specs(experiments, subseq_len());
  synthetic.validate();
  noise_pool.validate();
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (synthetic.frames_per_camera < subseq_len()) {
    throw ConfigError("synthetic frames per camera (" + std::to_string(synthetic.frames_per_camera) +
                      ") shorter than the subsequence length (" + std::to_string(subseq_len()) + ")");
  }
  for (const auto* p : {&paths.manifest, &paths.model, &paths.loss_csv, &paths.embeddings, &paths.report,
                        &paths.report_csv}) {
    if (p->empty()) throw ConfigError("config: output and input paths must be non-empty");
  }
  if (eval::needs_noise_pool(experiments) && paths.noise_manifest.empty()) {
    throw ConfigError("noise sweep configured but paths.noise_manifest is empty");
  }
}

RunConfig desk_config() {
  RunConfig c;
  c.pipeline = {16, 32, {8, 4, 4, 2}};
  c.experiment.arch = {16, rnn::PeepholeMode::Full};
  auto& t = c.experiment.train;
  t.subseq_len = 5;
  t.epochs = 100;
  t.lr_initial = 0.05;
  t.lr_after = 0.005;
  t.lr_switch_epoch = 75;
  t.dropout_rate = 0.5;
  t.batch_size = 4;
  t.seed = 101;
  t.init_bound = 0.1;
  c.experiment.aggregation = {5, 10, 202};
  c.experiment.ranksvm = {1.0, 1000, 303, 0};
  c.experiment.num_trials = 5;
  c.experiment.split_seed = 404;
  c.experiment.noise_seed = 505;
  c.experiments = {{eval::ExperimentKind::Standard, {}},
                   {eval::ExperimentKind::DepthSweep, {}},
                   {eval::ExperimentKind::NoiseSweep, {0.0, 0.1, 0.3, 0.5}},
                   {eval::ExperimentKind::SubseqSweep, {1, 5, 10, 15}}};
  c.synthetic.num_persons = 20;
  c.synthetic.frames_per_camera = 30;
  c.synthetic.width = 16;
  c.synthetic.height = 32;
  c.synthetic.seed = 606;
  c.synthetic.jitter = 0.03;
  c.synthetic.shift = {{1.0, 1.0, 0.9}, {0.0, 0.0, 0.1}};
  c.noise_pool = c.synthetic;
  c.noise_pool.num_persons = 6;
  c.noise_pool.frames_per_camera = 10;
  c.noise_pool.seed = 707;
  c.noise_pool.first_id = 100001;
  return c;
}

RunConfig full_config() {
  RunConfig c = desk_config();
  c.pipeline = {64, 128, {16, 8, 8, 4}};
  c.experiment.arch = {512, rnn::PeepholeMode::Full};
  auto& t = c.experiment.train;
  t.subseq_len = 10;
  t.epochs = 400;
  t.lr_initial = 0.001;
  t.lr_after = 0.0001;
  t.lr_switch_epoch = 200;
  t.batch_size = 16;
  t.init_bound = 0.01;
  c.experiment.aggregation.subseq_len = 10;
  c.experiment.num_trials = 10;
  c.experiments = {{eval::ExperimentKind::Standard, {}}};
  c.synthetic.num_persons = 300;
  c.synthetic.width = 64;
  c.synthetic.height = 128;
  c.noise_pool.width = 64;
  c.noise_pool.height = 128;
  return c;
}

json to_json(const RunConfig& c) {
  const auto& t = c.experiment.train;
  json experiments = json::array();
  for (const auto& e : c.experiments) {
    json entry = {{"kind", eval::to_string(e.kind)}};
    if (!e.levels.empty()) entry["levels"] = e.levels;
    experiments.push_back(entry);
  }
  return {
      {"features",
       {{"frame_width", c.pipeline.frame_w},
        {"frame_height", c.pipeline.frame_h},
        {"patch_height", c.pipeline.grid.patch_h},
        {"patch_width", c.pipeline.grid.patch_w},
        {"stride_vertical", c.pipeline.grid.stride_v},
        {"stride_horizontal", c.pipeline.grid.stride_h}}},
      {"model",
       {{"hidden_dim", c.experiment.arch.hidden_dim},
        {"subseq_len", t.subseq_len},
        {"peephole", peephole_name(c.experiment.arch.peephole)}}},
      {"train",
       {{"epochs", t.epochs},
        {"lr_initial", t.lr_initial},
        {"lr_after", t.lr_after},
        {"lr_switch_epoch", t.lr_switch_epoch},
        {"dropout_rate", t.dropout_rate},
        {"batch_size", t.batch_size},
        {"seed", t.seed},
        {"init_bound", t.init_bound},
        {"loss", loss_name(t.loss_mode)},
        {"clip_norm", t.clip_norm}}},
      {"aggregation", {{"num_subsequences", c.experiment.aggregation.num_subsequences}, {"seed", c.experiment.aggregation.seed}}},
      {"matching",
       {{"method", matcher_name(c.experiment.matcher)},
        {"C", c.experiment.ranksvm.C},
        {"iterations", c.experiment.ranksvm.iterations},
        {"seed", c.experiment.ranksvm.seed},
        {"batch_size", c.experiment.ranksvm.batch_size}}},
      {"eval",
       {{"trials", c.experiment.num_trials},
        {"split_seed", c.experiment.split_seed},
        {"noise_seed", c.experiment.noise_seed},
        {"experiments", experiments}}},
      {"synthetic", synthetic_json(c.synthetic, c.noise_pool)},
      {"paths",
       {{"manifest", c.paths.manifest.generic_string()},
        {"noise_manifest", c.paths.noise_manifest.generic_string()},
        {"model", c.paths.model.generic_string()},
        {"loss_csv", c.paths.loss_csv.generic_string()},
        {"embeddings", c.paths.embeddings.generic_string()},
        {"report", c.paths.report.generic_string()},
        {"report_csv", c.paths.report_csv.generic_string()}}},
      {"threads", c.threads},
  };
}

RunConfig from_json(const json& doc, const std::filesystem::path& base_dir) {
  const json reference = to_json(desk_config());
  check_known_keys(doc, reference, "");
  json j = reference;
  j.merge_patch(doc);
  for (const auto& [key, value] : reference.items()) {
    if (value.is_object() && !j[key].is_object()) throw ConfigError("config: " + key + " must be an object");
  }

  RunConfig c;
  c.base_dir = base_dir;
  c.pipeline.frame_w = get_int(j, "features", "frame_width");
  c.pipeline.frame_h = get_int(j, "features", "frame_height");
  c.pipeline.grid.patch_h = get_int(j, "features", "patch_height");
  c.pipeline.grid.patch_w = get_int(j, "features", "patch_width");
  c.pipeline.grid.stride_v = get_int(j, "features", "stride_vertical");
  c.pipeline.grid.stride_h = get_int(j, "features", "stride_horizontal");

  auto& e = c.experiment;
  e.arch.hidden_dim = get_int(j, "model", "hidden_dim");
  const auto peephole = get_string(j, "model", "peephole");
  if (peephole == "full") {
    e.arch.peephole = rnn::PeepholeMode::Full;
  } else if (peephole == "diagonal") {
    e.arch.peephole = rnn::PeepholeMode::Diagonal;
  } else {
    throw ConfigError("config: model.peephole must be \"full\" or \"diagonal\"");
  }
  e.train.subseq_len = e.aggregation.subseq_len = get_int(j, "model", "subseq_len");

  e.train.epochs = get_int(j, "train", "epochs");
  e.train.lr_initial = get_double(j, "train", "lr_initial");
  e.train.lr_after = get_double(j, "train", "lr_after");
  e.train.lr_switch_epoch = get_int(j, "train", "lr_switch_epoch");
  e.train.dropout_rate = get_double(j, "train", "dropout_rate");
  e.train.batch_size = get_int(j, "train", "batch_size");
  e.train.seed = get_seed(j, "train", "seed");
  e.train.init_bound = get_double(j, "train", "init_bound");
  const auto loss = get_string(j, "train", "loss");
  if (loss == "per_timestep") {
    e.train.loss_mode = rnn::LossMode::PerTimestep;
  } else if (loss == "last_step") {
    e.train.loss_mode = rnn::LossMode::LastStep;
  } else {
    throw ConfigError("config: train.loss must be \"per_timestep\" or \"last_step\"");
  }
  e.train.clip_norm = get_double(j, "train", "clip_norm");

  e.aggregation.num_subsequences = get_int(j, "aggregation", "num_subsequences");
  e.aggregation.seed = get_seed(j, "aggregation", "seed");

  const auto method = get_string(j, "matching", "method");
  if (method == "cosine") {
    e.matcher = eval::MatcherKind::Cosine;
  } else if (method == "ranksvm") {
    e.matcher = eval::MatcherKind::RankSvm;
  } else {
    throw ConfigError("config: matching.method must be \"cosine\" or \"ranksvm\"");
  }
  e.ranksvm.C = get_double(j, "matching", "C");
  e.ranksvm.iterations = get_int(j, "matching", "iterations");
  e.ranksvm.seed = get_seed(j, "matching", "seed");
  e.ranksvm.batch_size = get_int(j, "matching", "batch_size");

  e.num_trials = get_int(j, "eval", "trials");
  e.split_seed = get_seed(j, "eval", "split_seed");
  e.noise_seed = get_seed(j, "eval", "noise_seed");
  c.experiments = parse_experiments(field(j, "eval", "experiments"));

  auto& s = c.synthetic;
  s.num_persons = get_int(j, "synthetic", "persons");
  s.frames_per_camera = get_int(j, "synthetic", "frames_per_camera");
  s.width = get_int(j, "synthetic", "width");
  s.height = get_int(j, "synthetic", "height");
  s.seed = get_seed(j, "synthetic", "seed");
  s.jitter = get_double(j, "synthetic", "jitter");
  s.shift.gain = get_triple(j, "synthetic", "shift_gain");
  s.shift.offset = get_triple(j, "synthetic", "shift_offset");
  const json pool_section = {{"pool", field(j, "synthetic", "noise_pool")}};
  c.noise_pool = s;
  c.noise_pool.num_persons = get_int(pool_section, "pool", "persons");
  c.noise_pool.frames_per_camera = get_int(pool_section, "pool", "frames_per_camera");
  c.noise_pool.seed = get_seed(pool_section, "pool", "seed");
  c.noise_pool.first_id = 100001;

  c.paths.manifest = get_string(j, "paths", "manifest");
  c.paths.noise_manifest = get_string(j, "paths", "noise_manifest");
  c.paths.model = get_string(j, "paths", "model");
  c.paths.loss_csv = get_string(j, "paths", "loss_csv");
  c.paths.embeddings = get_string(j, "paths", "embeddings");
  c.paths.report = get_string(j, "paths", "report");
  c.paths.report_csv = get_string(j, "paths", "report_csv");

  if (!j["threads"].is_number_integer()) throw ConfigError("config: threads must be an integer");
  c.threads = j["threads"].get<int>();
  e.threads = e.train.threads = c.threads;
  return c;
}

void apply_override(json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  std::filesystem::path base = ".";
  if (!path.empty()) {
    std::vector<std::uint8_t> bytes;
    try {
      bytes = io::read_file(path);
    } catch (const IoError& e) {
      throw ConfigError(std::string("cannot read config: ") + e.what());
    }
    doc = json::parse(bytes.begin(), bytes.end(), nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
    base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  }
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig cfg = config::from_json(doc, base);
  cfg.validate();
  return cfg;
}

}  // namespace rfa::config
