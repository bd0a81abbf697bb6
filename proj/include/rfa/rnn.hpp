#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rfa/features.hpp"
#include "rfa/random.hpp"

namespace rfa::rnn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Full: V_* are H x H matrices. Diagonal: V_* act element-wise (stored as H x 1).
enum class PeepholeMode : std::uint8_t { Full = 0, Diagonal = 1 };

struct ModelShape {
  int input_dim = 0;
  int hidden_dim = 512;
  int num_classes = 2;
  PeepholeMode peephole = PeepholeMode::Full;

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Every trainable tensor of the recurrent aggregation network. The candidate (cell) gate
/// has no peephole term. Gradients share this layout.
struct Params {
  MatrixXd W_i, U_i, V_i;
  VectorXd b_i;
  MatrixXd W_f, U_f, V_f;
  VectorXd b_f;
  MatrixXd W_c, U_c;
  VectorXd b_c;
  MatrixXd W_o, U_o, V_o;
  VectorXd b_o;
  MatrixXd W_y;
  VectorXd b_y;

  static Params zeros(const ModelShape& shape);

  /// Visits tensors in serialization order: W_i,U_i,V_i,b_i, W_f,U_f,V_f,b_f,
  /// W_c,U_c,b_c, W_o,U_o,V_o,b_o, W_y,b_y.
  template <typename Self, typename F>
  static void visit(Self& p, F&& f) {
    f("W_i", p.W_i), f("U_i", p.U_i), f("V_i", p.V_i), f("b_i", p.b_i);
    f("W_f", p.W_f), f("U_f", p.U_f), f("V_f", p.V_f), f("b_f", p.b_f);
    f("W_c", p.W_c), f("U_c", p.U_c), f("b_c", p.b_c);
    f("W_o", p.W_o), f("U_o", p.U_o), f("V_o", p.V_o), f("b_o", p.b_o);
    f("W_y", p.W_y), f("b_y", p.b_y);
  }
  template <typename F>
  void for_each(F&& f) { visit(*this, std::forward<F>(f)); }
  template <typename F>
  void for_each(F&& f) const { visit(*this, std::forward<F>(f)); }

  std::size_t parameter_count() const;
  bool all_finite() const;
  double squared_norm() const;
  /// this += scale * other
  void add_scaled(const Params& other, double scale);
  void scale(double factor);

  friend bool operator==(const Params&, const Params&);
};

using Gradients = Params;

struct RfaModel {
  ModelShape shape;
  Params params;

  void check_consistent() const;
  friend bool operator==(const RfaModel&, const RfaModel&) = default;
};

/// Uniform [-bound, bound] i.i.d. for every parameter, deterministic in seed.
RfaModel init_model(int input_dim, int hidden_dim, int num_classes, std::uint64_t seed, double init_bound = 0.01,
                    PeepholeMode peephole = PeepholeMode::Full);

struct LstmState {
  VectorXd h;
  VectorXd c;

  static LstmState zeros(int hidden_dim);
};

struct GateRecord {
  VectorXd pre_i, pre_f, pre_c, pre_o;
  VectorXd i, f, g, o;  // g = tanh(pre_c), the candidate
};

struct StepResult {
  LstmState state;
  GateRecord gates;
};

/// One peephole LSTM update. Input and forget gates peek at the previous cell, the output
/// gate at the new one.
StepResult lstm_step(const RfaModel& model, const Eigen::Ref<const VectorXd>& x, const LstmState& prev);

/// Numerically stable softmax of W_y h + b_y.
VectorXd softmax_predict(const RfaModel& model, const Eigen::Ref<const VectorXd>& h);
VectorXd softmax(const Eigen::Ref<const VectorXd>& logits);

enum class LossMode { PerTimestep, LastStep };

/// Activations of a forward pass over one subsequence, one column per timestep.
struct ForwardTrace {
  MatrixXd inputs;  // L x D
  MatrixXd pre_i, pre_f, pre_c, pre_o;
  MatrixXd i, f, g, o;
  MatrixXd c, h;        // H x L
  MatrixXd mask;        // H x L; kept units hold 1/(1-rate)
  MatrixXd probs;       // N x L
  int label = 0;
  LossMode loss_mode = LossMode::PerTimestep;

  int length() const { return static_cast<int>(inputs.rows()); }
};

struct ForwardResult {
  ForwardTrace trace;
  double loss = 0.0;
};

struct ForwardOptions {
  /// Inverted-dropout multipliers (H x L). Null disables dropout.
  const MatrixXd* dropout_mask = nullptr;
  LossMode loss_mode = LossMode::PerTimestep;
  /// Required subsequence length; 0 accepts any.
  int expected_length = 0;
};

/// Runs the LSTM from a zero state over the L x D frames and scores -log y[label] at every
/// timestep (averaged) or at the last one.
ForwardResult forward(const RfaModel& model, const Eigen::Ref<const MatrixXd>& frames, int label,
                      const ForwardOptions& options = {});

/// Hidden states only (H x L), no dropout.
MatrixXd hidden_states(const RfaModel& model, const Eigen::Ref<const MatrixXd>& frames);

/// Exact gradients of the forward loss (backpropagation through time).
Gradients backward(const RfaModel& model, const ForwardTrace& trace);

/// Draws an inverted-dropout mask: each unit kept with probability 1 - rate.
MatrixXd sample_dropout_mask(int hidden_dim, int length, double rate, Rng& rng);

/// theta <- theta - lr * g
void sgd_update(RfaModel& model, const Gradients& grads, double lr);

struct TrainConfig {
  int subseq_len = 10;
  int epochs = 400;
  double lr_initial = 0.001;
  double lr_after = 0.0001;
  int lr_switch_epoch = 200;
  double dropout_rate = 0.5;
  int batch_size = 16;
  std::uint64_t seed = 0;
  double init_bound = 0.01;
  LossMode loss_mode = LossMode::PerTimestep;
  /// Max global gradient norm per batch; 0 disables clipping.
  double clip_norm = 0.0;
  int threads = 1;

  void validate() const;
  double learning_rate(int epoch) const { return epoch < lr_switch_epoch ? lr_initial : lr_after; }
};

struct ArchConfig {
  int hidden_dim = 512;
  PeepholeMode peephole = PeepholeMode::Full;
};

/// One (person, camera) sequence of frame features with its identity label.
struct TrainingSequence {
  std::string name;
  int label = 0;
  const features::FeatureMatrix* frames = nullptr;
};

struct TrainResult {
  RfaModel model;
  std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(int epoch, double mean_loss)>;

/// Per epoch: one random length-L window per sequence, shuffled, mini-batched with averaged
/// gradients. Deterministic in cfg.seed regardless of cfg.threads.
TrainResult train(std::span<const TrainingSequence> sequences, const ArchConfig& arch, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct TensorCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t count = 0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<TensorCheck> tensors;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed(double tol = 1e-4) const { return max_rel_error < tol; }
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  const MatrixXd* dropout_mask = nullptr;
  LossMode loss_mode = LossMode::PerTimestep;
  /// Perturbs one analytic entry before comparing; negative control for the checker.
  bool corrupt_analytic = false;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares backward() against central finite differences of forward() for every parameter.
GradCheckReport gradient_check(const RfaModel& model, const Eigen::Ref<const MatrixXd>& frames, int label,
                               const GradCheckOptions& options = {});

/// RFANET01 model file.
std::vector<std::uint8_t> encode_model(const RfaModel& model);
RfaModel decode_model(std::span<const std::uint8_t> bytes);

}  // namespace rfa::rnn
