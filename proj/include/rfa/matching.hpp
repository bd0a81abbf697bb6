#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace rfa::matching {

using Eigen::VectorXd;

/// Cosine similarity in [-1, 1]; higher means more alike. Throws DataError on a zero vector.
double cosine_score(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b);

/// Element-wise |a - b|.
VectorXd pair_feature(const Eigen::Ref<const VectorXd>& a, const Eigen::Ref<const VectorXd>& b);

struct RankSvmOptions {
  double C = 1.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  /// Constraints sampled per iteration; 0 uses all of them (deterministic full batch).
  int batch_size = 0;
};

/// Linear ranking function F(s) = w . s over pair features.
struct RankSvmModel {
  VectorXd w;
  double C = 1.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  double final_objective = 0.0;
  /// Best objective over the averaged iterates after each iteration (non-increasing).
  std::vector<double> objective_history;

  friend bool operator==(const RankSvmModel& a, const RankSvmModel& b) {
    return a.C == b.C && a.iterations == b.iterations && a.seed == b.seed && a.w.size() == b.w.size() &&
           a.w == b.w;
  }
};

/// One ranking constraint per (i, j != i): s+_i - s-_ij with s+_i = |a_i - b_i| and
/// s-_ij = |a_i - b_j|. Row k is one constraint.
Eigen::MatrixXd ranking_constraints(std::span<const VectorXd> probes, std::span<const VectorXd> gallery);

/// 1/2 |w|^2 + C * sum_k max(0, 1 - w . d_k)
double ranksvm_objective(const Eigen::Ref<const VectorXd>& w, const Eigen::MatrixXd& constraints, double C);

/// probes[i] and gallery[i] belong to person i. Minimizes the hinge objective with projected
/// subgradient steps 1/(lambda t), lambda = 1/(C * #constraints), and weighted iterate averaging.
RankSvmModel train_ranksvm(std::span<const VectorXd> probes, std::span<const VectorXd> gallery,
                           const RankSvmOptions& options);

/// w . |probe - item|; higher means more alike.
double ranksvm_score(const RankSvmModel& model, const Eigen::Ref<const VectorXd>& probe,
                     const Eigen::Ref<const VectorXd>& item);

struct CosineScorer {};

/// Probe-gallery similarity, either plain cosine or a trained RankSVM.
class Scorer {
 public:
  Scorer() = default;
  explicit Scorer(RankSvmModel model) : impl_(std::move(model)) {}

  static Scorer cosine() { return Scorer(); }

  double score(const Eigen::Ref<const VectorXd>& probe, const Eigen::Ref<const VectorXd>& item) const;
  bool is_cosine() const { return std::holds_alternative<CosineScorer>(impl_); }

 private:
  std::variant<CosineScorer, RankSvmModel> impl_;
};

/// Indices ordered by descending score; equal scores keep ascending index order.
std::vector<int> rank_by_scores(std::span<const double> scores);

std::vector<int> rank_gallery(const Eigen::Ref<const VectorXd>& probe, std::span<const VectorXd> gallery,
                              const Scorer& scorer);

/// RFASVM1: u32 dim, f64 C, u32 iters, u64 seed, dim x f64 w.
std::vector<std::uint8_t> encode_ranksvm(const RankSvmModel& model);
RankSvmModel decode_ranksvm(std::span<const std::uint8_t> bytes);

}  // namespace rfa::matching
