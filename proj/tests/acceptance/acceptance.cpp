// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "../unit/ranksvm_oracle.hpp"
#include "../unit/temp_dir.hpp"
#include "rfa/aggregate.hpp"
#include "rfa/binary_io.hpp"
#include "rfa/config.hpp"
#include "rfa/eval.hpp"
#include "rfa/features.hpp"
#include "rfa/matching.hpp"
#include "rfa/random.hpp"
#include "rfa/rnn.hpp"
#include "rfa/synthetic.hpp"

#ifndef RFANET_BINARY
#error "RFANET_BINARY must point at the rfanet executable"
#endif

using namespace rfa;
using Eigen::MatrixXd;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, const char* spec = "%.4g") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " C" << id << " " << title << ": " << o.detail << std::endl;
}

// ---- C1

Outcome gradient_oracle() {
  const auto t0 = Clock::now();
  constexpr int kConfigs = 24;
  double worst = 0.0, worst_abs = 0.0;
  int passed = 0;
  std::string worst_at;
  for (int c = 0; c < kConfigs; ++c) {
    Rng rng(derive_seed(0xC1, {static_cast<std::uint64_t>(c)}));
    const int D = 2 + static_cast<int>(rng.uniform_index(7));
    const int H = 2 + static_cast<int>(rng.uniform_index(5));
    const int N = 2 + static_cast<int>(rng.uniform_index(3));
    const int L = 2 + static_cast<int>(rng.uniform_index(5));
    const auto mode = c % 2 == 0 ? rnn::PeepholeMode::Full : rnn::PeepholeMode::Diagonal;
    const auto model = rnn::init_model(D, H, N, rng.next_u64(), 0.5, mode);
    MatrixXd frames(L, D);
    for (int t = 0; t < L; ++t)
      for (int k = 0; k < D; ++k) frames(t, k) = rng.uniform(-1.0, 1.0);
    const int label = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(N)));

    rnn::GradCheckOptions opts;
    opts.loss_mode = c % 3 == 2 ? rnn::LossMode::LastStep : rnn::LossMode::PerTimestep;
    MatrixXd mask;
    if (c % 4 == 3) {
      mask = rnn::sample_dropout_mask(H, L, 0.5, rng);
      opts.dropout_mask = &mask;
    }
    const auto r = rnn::gradient_check(model, frames, label, opts);
    if (r.passed(1e-4)) ++passed;
    worst_abs = std::max(worst_abs, r.max_abs_error);
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_at = "D=" + std::to_string(D) + " H=" + std::to_string(H) + " N=" + std::to_string(N) +
                 " L=" + std::to_string(L);
    }
  }
  const double secs = seconds_since(t0);
  // the absolute error shows whether misses are roundoff on tiny gradients or a real mismatch
  return {passed == kConfigs && secs < 60.0,
          std::to_string(passed) + "/" + std::to_string(kConfigs) + " random models within 1e-4; worst rel. error " +
              num(worst, "%.3e") + " (" + worst_at + "), worst abs. error " + num(worst_abs, "%.1e") + "; " +
              num(secs, "%.2f") + " s < 60 s"};
}

// ---- C2

Outcome full_scale_dimensions() {
  const auto cfg = config::full_config();
  const auto& p = cfg.pipeline;
  const int patches = p.grid.num_patches(p.frame_w, p.frame_h);

  Rng rng(2);
  features::RawImage img(p.frame_w, p.frame_h);
  for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.uniform_index(256));
  const auto feature = features::featurize(img, p);
  const std::size_t per_patch = feature.values.size() / static_cast<std::size_t>(patches);

  // Embedding length from an actual H=512, L=10 model (input kept small; it does not enter the size).
  const int L = cfg.subseq_len();
  const auto model = rnn::init_model(8, cfg.experiment.arch.hidden_dim, 2, 1, 0.01, cfg.experiment.arch.peephole);
  features::FeatureMatrix seq = features::FeatureMatrix::Random(L, 8);
  const auto emb = aggregate::embed_sequence(model, seq, {L, 1, 0});

  const bool ok = patches == 225 && per_patch == 262 && feature.values.size() == 58950 && emb.values.size() == 5120;
  return {ok, std::to_string(patches) + " patches, " + std::to_string(per_patch) + " per patch, frame feature " +
                  std::to_string(feature.values.size()) + ", sequence embedding " + std::to_string(emb.values.size()) +
                  " (want 225 / 262 / 58950 / 5120)"};
}

// ---- C3

int naive_lbp(const std::vector<double>& plane, int w, int x, int y) {
  static constexpr int dx[8] = {-1, 0, 1, 1, 1, 0, -1, -1};
  static constexpr int dy[8] = {-1, -1, -1, 0, 1, 1, 1, 0};
  const double c = plane[static_cast<std::size_t>(y * w + x)];
  int code = 0;
  for (int k = 0; k < 8; ++k) {
    const double n = plane[static_cast<std::size_t>((y + dy[k]) * w + (x + dx[k]))];
    code = code * 2 + (n >= c ? 1 : 0);
  }
  return code;
}

Outcome lbp_equivalence() {
  Rng rng(3);
  std::size_t pixels = 0, mismatches = 0;
  for (int plane_idx = 0; plane_idx < 1000; ++plane_idx) {
    const int w = 3 + static_cast<int>(rng.uniform_index(14));
    const int h = 3 + static_cast<int>(rng.uniform_index(14));
    std::vector<double> plane(static_cast<std::size_t>(w * h));
    const bool coarse = plane_idx % 2 == 0;  // few levels, many ties
    for (auto& v : plane) v = coarse ? static_cast<double>(rng.uniform_index(4)) : rng.uniform(0.0, 1.0);
    for (int y = 1; y + 1 < h; ++y) {
      for (int x = 1; x + 1 < w; ++x) {
        ++pixels;
        if (features::lbp_code(plane, w, h, x, y) != naive_lbp(plane, w, x, y)) ++mismatches;
      }
    }
  }
  return {mismatches == 0, std::to_string(pixels) + " interior pixels over 1000 planes, " +
                               std::to_string(mismatches) + " mismatches"};
}

// ---- C4

Outcome softmax_cmc_invariants() {
  Rng rng(4);
  double worst_sum = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_index(40));
    const double scale = trial % 3 == 0 ? 50.0 : 3.0;
    VectorXd z(n);
    for (int k = 0; k < n; ++k) z(k) = rng.uniform(-scale, scale);
    const VectorXd p = rnn::softmax(z);
    const VectorXd q = rnn::softmax((z.array() + rng.uniform(-100.0, 100.0)).matrix());
    worst_sum = std::max(worst_sum, std::abs(p.sum() - 1.0));
    worst_shift = std::max(worst_shift, (p - q).cwiseAbs().maxCoeff());
  }

  int curves = 0, bad_curves = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const int g = 1 + static_cast<int>(rng.uniform_index(15));
    const int dim = 1 + static_cast<int>(rng.uniform_index(6));
    std::vector<aggregate::SequenceEmbedding> probes, gallery;
    for (int i = 0; i < g; ++i) {
      aggregate::SequenceEmbedding a, b;
      a.values = VectorXd(dim);
      b.values = VectorXd(dim);
      for (int k = 0; k < dim; ++k) {
        // quantized positive values so that exact score ties occur (and no vector is zero)
        a.values(k) = trial % 2 == 0 ? rng.normal() : 1.0 + static_cast<double>(rng.uniform_index(3));
        b.values(k) = trial % 2 == 0 ? rng.normal() : 1.0 + static_cast<double>(rng.uniform_index(3));
      }
      a.person_id = b.person_id = static_cast<std::uint32_t>(i + 1);
      b.camera = 1;
      probes.push_back(a);
      gallery.push_back(b);
    }
    const auto cmc = eval::compute_cmc(probes, gallery, matching::Scorer::cosine());
    ++curves;
    bool ok = cmc.size() == static_cast<std::size_t>(g) && cmc.rates.back() == 1.0;
    for (std::size_t k = 1; k < cmc.rates.size(); ++k) ok = ok && cmc.rates[k] >= cmc.rates[k - 1];
    if (!ok) ++bad_curves;
  }
  const bool pass = worst_sum <= 1e-9 && worst_shift <= 1e-12 && bad_curves == 0;
  return {pass, "softmax |sum-1| max " + num(worst_sum, "%.2e") + " <= 1e-9, shift change max " +
                    num(worst_shift, "%.2e") + " <= 1e-12; " + std::to_string(curves - bad_curves) + "/" +
                    std::to_string(curves) + " CMC curves monotone ending at 1.0"};
}

// ---- C5-C8: one desk-scale run shared by all four criteria

struct DeskRun {
  std::vector<eval::ExperimentReport> reports;
  double seconds = 0.0;
  int trials = 0;
  std::size_t gallery = 0;
  std::vector<double> final_loss;
  std::string error;
};

DeskRun desk_run() {
  DeskRun run;
  try {
    const auto t0 = Clock::now();
    auto cfg = config::desk_config();
    cfg.experiment.threads = cfg.experiment.train.threads = 1;
    const auto data = eval::featurize(eval::generate_synthetic(cfg.synthetic), cfg.pipeline);
    const auto pool = eval::featurize_pool(eval::generate_synthetic(cfg.noise_pool), cfg.pipeline);
    run.reports = eval::run_experiments(data, pool, cfg.experiment, cfg.experiments, [](const std::string& m) {
      std::cout << "  .. " << m << std::endl;
    });
    run.seconds = seconds_since(t0);
    run.trials = cfg.experiment.num_trials;
    run.gallery = data.persons.size() - data.persons.size() / 2;
    run.final_loss = run.reports.front().final_loss;
  } catch (const std::exception& e) {
    run.error = e.what();
  }
  return run;
}

const eval::ExperimentReport& find(const DeskRun& run, eval::ExperimentKind kind) {
  for (const auto& r : run.reports)
    if (r.kind == kind) return r;
  throw std::runtime_error("desk run has no " + std::string(eval::to_string(kind)) + " experiment");
}

Outcome end_to_end(const DeskRun& run) {
  if (!run.error.empty()) return {false, run.error};
  const auto& std_r = find(run, eval::ExperimentKind::Standard).results.front();
  const double r1 = std_r.mean.rank(1);
  std::string per;
  for (const auto& t : std_r.trials) per += (per.empty() ? "" : " ") + num(t.rank(1), "%.2f");
  const bool ok = r1 >= 0.95 && run.seconds < 300.0 && run.trials == 5;
  return {ok, "mean rank-1 " + num(r1, "%.3f") + " >= 0.95 over " + std::to_string(run.trials) + " trials [" + per +
                  "], wall time " + num(run.seconds, "%.1f") + " s < 300 s (whole desk run, all sweeps)"};
}

Outcome depth_trend(const DeskRun& run) {
  if (!run.error.empty()) return {false, run.error};
  const auto& r = find(run, eval::ExperimentKind::DepthSweep);
  const double d1 = r.at_level(1).mean.rank(1);
  const double dl = r.results.back().mean.rank(1);
  std::string all;
  for (const auto& f : r.results) all += (all.empty() ? "" : ", ") + eval::format_level(f.level) + ": " + num(f.mean.rank(1), "%.3f");
  return {dl >= d1, "rank-1 depth L " + num(dl, "%.3f") + " >= depth 1 " + num(d1, "%.3f") + " (" + all + ")"};
}

Outcome noise_trend(const DeskRun& run) {
  if (!run.error.empty()) return {false, run.error};
  const auto& r = find(run, eval::ExperimentKind::NoiseSweep);
  const double n0 = r.at_level(0.0).mean.rank(1);
  const double n3 = r.at_level(0.3).mean.rank(1);
  const double n5 = r.at_level(0.5).mean.rank(1);
  bool full = true;
  for (const auto& f : r.results)
    for (const auto& t : f.trials) full = full && t.rank(static_cast<int>(t.size())) == 1.0;
  return {n0 >= n3 && n3 >= n5 && full, "rank-1 at 0% " + num(n0, "%.3f") + " >= 30% " + num(n3, "%.3f") +
                                            " >= 50% " + num(n5, "%.3f") + "; rank-" + std::to_string(run.gallery) +
                                            (full ? " = 1.0 at every level" : " below 1.0 somewhere")};
}

Outcome subseq_trend(const DeskRun& run) {
  if (!run.error.empty()) return {false, run.error};
  const auto& r = find(run, eval::ExperimentKind::SubseqSweep);
  const double k1 = r.at_level(1).mean.rank(1);
  const double k10 = r.at_level(10).mean.rank(1);
  return {k10 >= k1, "rank-1 K=10 " + num(k10, "%.3f") + " >= K=1 " + num(k1, "%.3f")};
}

// ---- C9

Outcome ranksvm_correctness() {
  using namespace matching;
  Rng rng(9);
  int separable_ok = 0, monotone_ok = 0, oracle_ok = 0;
  constexpr int kSeparable = 10, kOracle = 10;
  double worst_hinge = 0.0, worst_gap = 0.0;
  for (int i = 0; i < kSeparable; ++i) {
    const int persons = 3 + static_cast<int>(rng.uniform_index(6));
    const int dim = 2 + static_cast<int>(rng.uniform_index(6));
    const auto inst = testing::separable_instance(persons, dim, rng);
    const auto m = train_ranksvm(inst.probes, inst.gallery, {10.0, 3000, rng.next_u64(), 0});
    const auto d = ranking_constraints(inst.probes, inst.gallery);
    const double hinge = (1.0 - (d * m.w).array()).max(0.0).sum();
    worst_hinge = std::max(worst_hinge, hinge);
    bool ranked = true;
    for (std::size_t p = 0; p < inst.probes.size(); ++p) {
      const double own = ranksvm_score(m, inst.probes[p], inst.gallery[p]);
      for (std::size_t g = 0; g < inst.gallery.size(); ++g)
        if (g != p) ranked = ranked && own > ranksvm_score(m, inst.probes[p], inst.gallery[g]);
    }
    if (hinge <= 1e-6 && ranked) ++separable_ok;
    bool mono = true;
    for (std::size_t k = 1; k < m.objective_history.size(); ++k)
      mono = mono && m.objective_history[k] <= m.objective_history[k - 1];
    if (mono) ++monotone_ok;
  }
  for (int i = 0; i < kOracle; ++i) {
    std::vector<VectorXd> a, b;
    const int persons = 3 + static_cast<int>(rng.uniform_index(3));
    for (int p = 0; p < persons; ++p) {
      VectorXd x(2), y(2);
      x << rng.uniform(-1, 1), rng.uniform(-1, 1);
      y << x(0) + 0.4 * rng.normal(), x(1) + 0.4 * rng.normal();
      a.push_back(x);
      b.push_back(y);
    }
    const double C = 0.5;
    const auto d = ranking_constraints(a, b);
    const double oracle = testing::grid_search_minimum(d, C);
    const auto m = train_ranksvm(a, b, {C, 20000, 0, 0});
    const double gap = std::abs(m.final_objective - oracle) / oracle;
    worst_gap = std::max(worst_gap, gap);
    if (gap <= 0.01) ++oracle_ok;
  }
  const bool ok = separable_ok == kSeparable && monotone_ok == kSeparable && oracle_ok == kOracle;
  return {ok, std::to_string(separable_ok) + "/" + std::to_string(kSeparable) +
                  " separable sets with zero hinge (max " + num(worst_hinge, "%.1e") +
                  ") and full pairwise accuracy; " + std::to_string(monotone_ok) + "/" + std::to_string(kSeparable) +
                  " objective histories non-increasing; " + std::to_string(oracle_ok) + "/" + std::to_string(kOracle) +
                  " 2-D objectives within 1% of grid oracle (max gap " + num(100 * worst_gap, "%.3f") + "%)"};
}

// ---- C10

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(RFANET_BINARY) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  const auto bytes = io::read_file(p);
  return {bytes.begin(), bytes.end()};
}

Outcome determinism() {
  testing::TempDir tmp;
  // Desk config, trimmed so that two complete pipelines fit in a few seconds.
  const std::string config = R"({
    "train": {"epochs": 8, "lr_switch_epoch": 6},
    "eval": {"trials": 2, "experiments": [{"kind": "standard"}, {"kind": "depth"},
                                          {"kind": "noise", "levels": [0, 0.5]}, {"kind": "subseq", "levels": [1, 3]}]},
    "synthetic": {"persons": 8, "frames_per_camera": 12}
  })";
  const std::vector<std::string> files = {"data/manifest.json", "data/p0003/b_007.ppm", "data/noise/manifest.json",
                                          "out/model.rfanet", "out/loss.csv", "out/emb.rfaemb", "out/report.csv",
                                          "out/model_eval.csv", "gradcheck.txt"};
  std::vector<std::string> first;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = tmp.path() / ("run" + std::to_string(run));
    fs::create_directories(dir);
    std::ofstream(dir / "cfg.json") << config;
    const std::string c = "--config '" + (dir / "cfg.json").string() + "'";
    const fs::path log = dir / "log.txt";
    const std::vector<std::string> steps = {
        "synth " + c + " --out '" + (dir / "data").string() + "'",
        "train " + c,
        "embed " + c + " --model '" + (dir / "out/model.rfanet").string() + "' --out '" +
            (dir / "out/emb.rfaemb").string() + "'",
        "eval " + c,
        "eval " + c + " --set paths.report_csv=out/model_eval.csv --set paths.report=out/model_eval.json --model '" +
            (dir / "out/model.rfanet").string() + "'",
    };
    for (const auto& s : steps) {
      if (const int code = run_cli(s, log); code != 0) {
        return {false, "rfanet " + s.substr(0, s.find(' ')) + " exited with " + std::to_string(code) + ": " + slurp(log)};
      }
    }
    if (run_cli("gradcheck --seed 7", dir / "gradcheck.txt") != 0) return {false, "gradcheck failed"};
    std::vector<std::string> contents;
    for (const auto& f : files) contents.push_back(slurp(dir / f));
    if (run == 0) {
      first = std::move(contents);
      continue;
    }
    std::string differing;
    for (std::size_t i = 0; i < files.size(); ++i)
      if (contents[i] != first[i]) differing += " " + files[i];
    if (!differing.empty()) return {false, "differs between runs:" + differing};
  }
  return {true, "synth, train, embed, eval, eval --model and gradcheck run twice: " + std::to_string(files.size()) +
                    " outputs (dataset, model, loss CSV, embeddings, report CSVs, gradcheck report) byte-identical"};
}

}  // namespace

int main() {
  std::cout << "RFA-Net acceptance run" << std::endl;
  report(1, "gradient oracle", gradient_oracle);
  report(2, "full-scale dimensions", full_scale_dimensions);
  report(3, "LBP oracle equivalence", lbp_equivalence);
  report(4, "softmax and CMC invariants", softmax_cmc_invariants);

  std::cout << "  desk-scale synthetic run (5 trials, standard + depth + noise + subsequence sweeps)" << std::endl;
  const DeskRun desk = desk_run();
  if (desk.error.empty()) {
    std::string losses;
    for (double l : desk.final_loss) losses += " " + num(l, "%.3f");
    std::cout << "  final training loss per trial:" << losses << std::endl;
  }
  report(5, "end-to-end synthetic re-id", [&] { return end_to_end(desk); });
  report(6, "fusion-depth trend", [&] { return depth_trend(desk); });
  report(7, "noise robustness trend", [&] { return noise_trend(desk); });
  report(8, "subsequence averaging trend", [&] { return subseq_trend(desk); });
  report(9, "RankSVM correctness", ranksvm_correctness);
  report(10, "determinism", determinism);

  std::cout << (failures == 0 ? "all 10 criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
