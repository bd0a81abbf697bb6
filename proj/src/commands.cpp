#include "rfa/commands.hpp"

#include <cstdio>
#include <exception>
#include <ostream>
#include <system_error>

#include "rfa/aggregate.hpp"
#include "rfa/binary_io.hpp"
#include "rfa/config.hpp"
#include "rfa/error.hpp"
#include "rfa/eval.hpp"
#include "rfa/random.hpp"
#include "rfa/rnn.hpp"
#include "rfa/synthetic.hpp"

namespace rfa::cli {

namespace fs = std::filesystem;
using config::RunConfig;

namespace {

RunConfig load(const ConfigArgs& a) {
  auto overrides = a.overrides;
  if (a.threads) overrides.push_back("threads=" + std::to_string(*a.threads));
  return config::load_config(a.config, overrides);
}

void ensure_parent(const fs::path& file) {
  const auto dir = file.parent_path();
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

struct LoadedData {
  eval::FeatureDataset data;
  features::FeatureMatrix pool;
};

LoadedData load_data(const RunConfig& cfg, bool with_pool, std::ostream& out) {
  const auto manifest_path = cfg.resolve(cfg.paths.manifest);
  const auto manifest = eval::read_manifest(manifest_path);
  LoadedData d;
  d.data = eval::load_features(manifest, manifest_path.parent_path(), cfg.pipeline);
  out << "loaded " << d.data.persons.size() << " persons, feature dim " << d.data.feature_dim() << "\n";
  d.pool = features::FeatureMatrix(0, d.data.feature_dim());
  if (with_pool) {
    const auto pool_path = cfg.resolve(cfg.paths.noise_manifest);
    d.pool = eval::load_frame_pool(eval::read_manifest(pool_path), pool_path.parent_path(), cfg.pipeline);
    out << "noise pool: " << d.pool.rows() << " frames\n";
  }
  return d;
}

rnn::RfaModel load_model(const fs::path& path, const RunConfig& cfg) {
  auto model = rnn::decode_model(io::read_file(path));
  const auto D = static_cast<int>(cfg.pipeline.feature_dim());
  if (model.shape.input_dim != D) {
    throw ConfigError("model " + path.string() + " expects input dimension " + std::to_string(model.shape.input_dim) +
                      " but the configured features have " + std::to_string(D));
  }
  if (model.shape.hidden_dim != cfg.experiment.arch.hidden_dim || model.shape.peephole != cfg.experiment.arch.peephole) {
    throw ConfigError("model " + path.string() + " does not match the configured hidden size or peephole mode");
  }
  return model;
}

std::string csv_number(double v) { return eval::format_level(v); }

}  // namespace

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kValidationError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const auto cfg = load(args.cfg);
        if (args.out.empty()) throw ConfigError("synth needs an output directory");
        const auto manifest = args.out / "manifest.json";
        if (fs::exists(manifest) && !args.force) {
          throw ConfigError("dataset already exists at " + manifest.string() + " (pass --force to overwrite)");
        }
        std::error_code ec;
        fs::create_directories(args.out, ec);
        if (ec) throw IoError("cannot create output directory '" + args.out.string() + "': " + ec.message());

        const auto data = eval::generate_synthetic(cfg.synthetic);
        eval::write_synthetic(data, args.out);
        const auto pool = eval::generate_synthetic(cfg.noise_pool);
        eval::write_synthetic(pool, args.out / "noise");
        out << "wrote " << 2 * data.persons.size() << " sequences (" << data.persons.size() << " persons x 2 cameras, "
            << cfg.synthetic.frames_per_camera << " frames each) to " << manifest.string() << "\n"
            << "wrote noise pool of " << pool.persons.size() * 2 * static_cast<std::size_t>(cfg.noise_pool.frames_per_camera)
            << " frames to " << (args.out / "noise" / "manifest.json").string() << "\n";
        return kOk;
      },
      err);
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const auto cfg = load(args.cfg);
        const auto model_path = cfg.resolve(cfg.paths.model);
        if (fs::exists(model_path) && !args.force) {
          throw ConfigError("model file " + model_path.string() + " already exists (pass --force to overwrite)");
        }
        const auto d = load_data(cfg, false, out);
        const auto split = eval::make_splits(d.data.ids(), 1, cfg.experiment.split_seed).front();
        const auto seqs = eval::training_sequences(d.data, split.train_ids);
        auto tc = cfg.experiment.train;
        tc.seed = derive_seed(cfg.experiment.train.seed, {0});
        out << "training on " << split.train_ids.size() << " identities (" << seqs.size() << " sequences), "
            << tc.epochs << " epochs\n";
        const int every = std::max(1, tc.epochs / 10);
        const auto result = rnn::train(seqs, cfg.experiment.arch, tc, [&](int epoch, double loss) {
          if ((epoch + 1) % every == 0) out << "  epoch " << epoch + 1 << " loss " << fmt("%.6f", loss) << "\n";
        });

        std::string csv = "epoch,loss\n";
        for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
          csv += std::to_string(e + 1) + "," + csv_number(result.epoch_loss[e]) + "\n";
        }
        const auto loss_path = cfg.resolve(cfg.paths.loss_csv);
        ensure_parent(model_path);
        ensure_parent(loss_path);
        io::write_file_atomic(model_path, rnn::encode_model(result.model));
        io::write_text_atomic(loss_path, csv);
        out << "wrote " << model_path.string() << " and " << loss_path.string() << "\n";
        return kOk;
      },
      err);
}

int cmd_embed(const EmbedArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const auto cfg = load(args.cfg);
        const auto model_path = args.model.empty() ? cfg.resolve(cfg.paths.model) : args.model;
        const auto out_path = args.out.empty() ? cfg.resolve(cfg.paths.embeddings) : args.out;
        const auto model = load_model(model_path, cfg);
        const auto d = load_data(cfg, false, out);
        std::vector<aggregate::SequenceEmbedding> embeddings;
        const auto& agg = cfg.experiment.aggregation;
        for (const auto& p : d.data.persons) {
          for (int camera = 0; camera < 2; ++camera) {
            const aggregate::AggregationConfig ac{agg.subseq_len, agg.num_subsequences,
                                                  eval::window_seed(agg.seed, 0, p.id, camera, agg.num_subsequences)};
            embeddings.push_back(aggregate::embed_sequence(model, camera == 0 ? p.camera_a : p.camera_b, ac, p.id,
                                                           static_cast<std::uint8_t>(camera)));
          }
        }
        ensure_parent(out_path);
        io::write_file_atomic(out_path, aggregate::encode_embeddings(embeddings));
        out << "wrote " << embeddings.size() << " embeddings of dimension " << embeddings.front().values.size()
            << " to " << out_path.string() << "\n";
        return kOk;
      },
      err);
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        const auto cfg = load(args.cfg);
        std::optional<rnn::RfaModel> model;
        if (args.model) model = load_model(*args.model, cfg);
        const auto d = load_data(cfg, eval::needs_noise_pool(cfg.experiments), out);

        std::vector<eval::ExperimentReport> reports;
        auto echo = config::to_json(cfg);
        if (model) {
          const auto split = eval::make_splits(d.data.ids(), 1, cfg.experiment.split_seed).front();
          out << "evaluating " << args.model->string() << " on trial 0's split\n";
          reports = eval::evaluate_model(*model, d.data, d.pool, cfg.experiment, split, cfg.experiments);
          echo["model_file"] = args.model->generic_string();
        } else {
          out << "running " << cfg.experiment.num_trials << " trials (train + evaluate)\n";
          reports = eval::run_experiments(d.data, d.pool, cfg.experiment, cfg.experiments,
                                          [&](const std::string& msg) { out << "  " << msg << "\n"; });
        }

        for (const auto& r : reports) {
          for (const auto& f : r.results) {
            out << "  " << eval::to_string(r.kind);
            if (r.kind != eval::ExperimentKind::Standard) out << " level " << eval::format_level(f.level);
            out << ": rank-1 " << fmt("%.3f", f.mean.rank(1));
            for (int k : {5, 10, 20}) {
              if (static_cast<std::size_t>(k) <= f.mean.size()) out << " rank-" << k << " " << fmt("%.3f", f.mean.rank(k));
            }
            out << "\n";
          }
        }
        const auto report_path = cfg.resolve(cfg.paths.report);
        const auto csv_path = cfg.resolve(cfg.paths.report_csv);
        ensure_parent(report_path);
        ensure_parent(csv_path);
        io::write_text_atomic(report_path, eval::report_json(reports, echo).dump(1) + "\n");
        io::write_text_atomic(csv_path, eval::report_csv(reports));
        out << "wrote " << report_path.string() << " and " << csv_path.string() << "\n";
        return kOk;
      },
      err);
}

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        if (a.d < 1 || a.h < 1 || a.n < 2 || a.l < 1) {
          throw ConfigError("gradcheck needs d >= 1, h >= 1, n >= 2, l >= 1");
        }
        const auto mode = a.diagonal ? rnn::PeepholeMode::Diagonal : rnn::PeepholeMode::Full;
        const auto model = rnn::init_model(a.d, a.h, a.n, a.seed, 0.5, mode);
        const auto count = model.params.parameter_count();
        if (count > kGradcheckMaxParams) {
          throw ConfigError("gradcheck model has " + std::to_string(count) + " parameters; the limit is " +
                            std::to_string(kGradcheckMaxParams));
        }
        Rng rng(derive_seed(a.seed, {1}));
        Eigen::MatrixXd frames(a.l, a.d);
        for (int t = 0; t < a.l; ++t)
          for (int k = 0; k < a.d; ++k) frames(t, k) = rng.uniform(-1.0, 1.0);
        const int label = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(a.n)));

        rnn::GradCheckOptions opts;
        opts.loss_mode = a.last_step ? rnn::LossMode::LastStep : rnn::LossMode::PerTimestep;
        opts.corrupt_analytic = a.corrupt;
        const auto report = rnn::gradient_check(model, frames, label, opts);

        out << "gradcheck D=" << a.d << " H=" << a.h << " N=" << a.n << " L=" << a.l << " seed=" << a.seed << " ("
            << count << " parameters, eps=" << opts.epsilon << ")\n";
        for (const auto& t : report.tensors) {
          char line[128];
          std::snprintf(line, sizeof(line), "  %-4s %6zu  max rel error %.6e  max abs error %.3e\n", t.name.c_str(),
                        t.count, t.max_rel_error, t.max_abs_error);
          out << line;
        }
        const bool ok = report.passed(1e-4);
        out << (ok ? "PASS" : "FAIL") << " worst " << fmt("%.6e", report.max_rel_error) << " (tolerance 1e-4)\n";
        return ok ? kOk : kRuntimeError;
      },
      err);
}

int cmd_config(const ConfigArgs& args, bool full, std::ostream& out, std::ostream& err) {
  return guarded(
      [&] {
        if (full) {
          if (!args.config.empty()) throw ConfigError("--full cannot be combined with --config");
          auto doc = config::to_json(config::full_config());
          for (const auto& o : args.overrides) config::apply_override(doc, o);
          const auto cfg = config::from_json(doc, ".");
          cfg.validate();
          out << config::to_json(cfg).dump(2) << "\n";
          return kOk;
        }
        out << config::to_json(load(args)).dump(2) << "\n";
        return kOk;
      },
      err);
}

}  // namespace rfa::cli
