#include "rfa/matching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rfa/binary_io.hpp"
#include "rfa/error.hpp"
#include "rfa/random.hpp"

namespace rfa::matching {

namespace {

constexpr std::string_view kSvmMagic = "RFASVM1";

void check_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw ContractError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                        std::to_string(b) + ")");
  }
}

}  // namespace

double cosine_score(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) {
  check_same_dim(a.size(), b.size(), "cosine_score");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DataError("cosine_score: zero-norm embedding");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

VectorXd pair_feature(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b) {
  check_same_dim(a.size(), b.size(), "pair_feature");
  return (a - b).cwiseAbs();
}

Eigen::MatrixXd ranking_constraints(std::span<const VectorXd> probes, std::span<const VectorXd> gallery) {
  if (probes.size() != gallery.size()) throw ContractError("probe and gallery lists must pair up by person");
  const auto n = static_cast<Eigen::Index>(probes.size());
  if (n < 2) throw DataError("RankSVM training needs at least 2 persons");
  const Eigen::Index dim = probes.front().size();
  Eigen::MatrixXd d(n * (n - 1), dim);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    check_same_dim(probes[i].size(), dim, "ranking_constraints");
    check_same_dim(gallery[i].size(), dim, "ranking_constraints");
    const VectorXd pos = pair_feature(probes[i], gallery[i]);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      d.row(k++) = (pos - pair_feature(probes[i], gallery[j])).transpose();
    }
  }
  return d;
}

double ranksvm_objective(const Eigen::Ref<const VectorXd>& w, const Eigen::MatrixXd& constraints, double C) {
  const VectorXd margins = constraints * w;
  const double hinge = (1.0 - margins.array()).max(0.0).sum();
  return 0.5 * w.squaredNorm() + C * hinge;
}

RankSvmModel train_ranksvm(std::span<const VectorXd> probes, std::span<const VectorXd> gallery,
                           const RankSvmOptions& options) {
  if (!(options.C > 0.0)) throw ConfigError("RankSVM C must be > 0");
  if (options.iterations < 1) throw ConfigError("RankSVM needs at least one iteration");
  if (options.batch_size < 0) throw ConfigError("RankSVM batch size must be >= 0");

  const Eigen::MatrixXd d = ranking_constraints(probes, gallery);
  if ((d.array() == 0.0).all()) {
    throw DataError("RankSVM training set is degenerate: every pair feature is identical");
  }
  const Eigen::Index m = d.rows();
  const Eigen::Index dim = d.cols();
  const double lambda = 1.0 / (options.C * static_cast<double>(m));
  const double radius = 1.0 / std::sqrt(lambda);
  const bool full_batch = options.batch_size == 0 || options.batch_size >= m;

  Rng rng(options.seed);
  VectorXd w = VectorXd::Zero(dim);
  VectorXd avg = VectorXd::Zero(dim);
  VectorXd best = avg;
  double best_obj = ranksvm_objective(best, d, options.C);

  RankSvmModel model;
  model.C = options.C;
  model.iterations = options.iterations;
  model.seed = options.seed;
  model.objective_history.reserve(static_cast<std::size_t>(options.iterations));

  std::vector<Eigen::Index> batch;
  for (int t = 1; t <= options.iterations; ++t) {
    VectorXd grad = lambda * w;
    if (full_batch) {
      const VectorXd margins = d * w;
      for (Eigen::Index k = 0; k < m; ++k) {
        if (margins(k) < 1.0) grad -= d.row(k).transpose() / static_cast<double>(m);
      }
    } else {
      batch.resize(static_cast<std::size_t>(options.batch_size));
      for (auto& k : batch) k = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(m)));
      for (const auto k : batch) {
        if (d.row(k).dot(w) < 1.0) grad -= d.row(k).transpose() / static_cast<double>(options.batch_size);
      }
    }
    w -= grad / (lambda * t);
    const double norm = w.norm();
    if (norm > radius) w *= radius / norm;

    // Weights proportional to t: avg_t = sum_s s * w_s / sum_s s.
    avg += (2.0 / (t + 1.0)) * (w - avg);
    const double obj = ranksvm_objective(avg, d, options.C);
    if (obj < best_obj) {
      best_obj = obj;
      best = avg;
    }
    model.objective_history.push_back(best_obj);
  }
  model.w = std::move(best);
  model.final_objective = best_obj;
  return model;
}

double ranksvm_score(const RankSvmModel& model, const Eigen::Ref<const VectorXd>& probe,
                     const Eigen::Ref<const VectorXd>& item) {
  check_same_dim(model.w.size(), probe.size(), "ranksvm_score");
  return model.w.dot(pair_feature(probe, item));
}

double Scorer::score(const Eigen::Ref<const VectorXd>& probe, const Eigen::Ref<const VectorXd>& item) const {
  if (const auto* svm = std::get_if<RankSvmModel>(&impl_)) return ranksvm_score(*svm, probe, item);
  return cosine_score(probe, item);
}

std::vector<int> rank_by_scores(std::span<const double> scores) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<int> rank_gallery(const Eigen::Ref<const VectorXd>& probe, std::span<const VectorXd> gallery,
                              const Scorer& scorer) {
  if (gallery.empty()) throw ContractError("rank_gallery: empty gallery");
  std::vector<double> scores(gallery.size());
  for (std::size_t k = 0; k < gallery.size(); ++k) scores[k] = scorer.score(probe, gallery[k]);
  return rank_by_scores(scores);
}

std::vector<std::uint8_t> encode_ranksvm(const RankSvmModel& model) {
  io::ByteWriter w;
  w.magic(kSvmMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.w.size()));
  w.put<double>(model.C);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.iterations));
  w.put<std::uint64_t>(model.seed);
  for (Eigen::Index k = 0; k < model.w.size(); ++k) w.put<double>(model.w(k));
  return w.take();
}

RankSvmModel decode_ranksvm(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  in.expect_magic(kSvmMagic, "RankSVM model");
  const auto dim = in.get<std::uint32_t>("dim");
  RankSvmModel m;
  m.C = in.get<double>("C");
  m.iterations = static_cast<int>(in.get<std::uint32_t>("iters"));
  m.seed = in.get<std::uint64_t>("seed");
  in.require(static_cast<std::size_t>(dim) * sizeof(double), "weights");
  m.w.resize(dim);
  for (std::uint32_t k = 0; k < dim; ++k) m.w(k) = in.get<double>("weight");
  in.expect_end();
  if (!m.w.allFinite()) throw FormatError("RankSVM weights contain non-finite values", 0);
  return m;
}

}  // namespace rfa::matching
