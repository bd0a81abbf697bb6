#include "rfa/rnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "rfa/binary_io.hpp"
#include "rfa/error.hpp"

namespace rfa::rnn {

namespace {

constexpr std::string_view kModelMagic = "RFANET01";

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd sigmoid(const VectorXd& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

// V c for a full matrix, v .* c for the diagonal variant.
VectorXd peep(const MatrixXd& V, const VectorXd& c, PeepholeMode mode) {
  return mode == PeepholeMode::Full ? VectorXd(V * c) : VectorXd(V.col(0).cwiseProduct(c));
}

VectorXd peep_transpose(const MatrixXd& V, const VectorXd& d, PeepholeMode mode) {
  return mode == PeepholeMode::Full ? VectorXd(V.transpose() * d) : VectorXd(V.col(0).cwiseProduct(d));
}

void accumulate_peep_grad(MatrixXd& G, const VectorXd& d, const VectorXd& c, PeepholeMode mode) {
  if (mode == PeepholeMode::Full) {
    G.noalias() += d * c.transpose();
  } else {
    G.col(0) += d.cwiseProduct(c);
  }
}

int peep_cols(const ModelShape& s) { return s.peephole == PeepholeMode::Full ? s.hidden_dim : 1; }

void check_frames(const RfaModel& model, const Eigen::Ref<const MatrixXd>& frames) {
  if (frames.rows() < 1) throw ContractError("subsequence must contain at least one frame");
  if (frames.cols() != model.shape.input_dim) {
    throw ContractError("frame dimension " + std::to_string(frames.cols()) + " does not match model input " +
                        std::to_string(model.shape.input_dim));
  }
}

double log_sum_exp(const VectorXd& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

double timestep_weight(LossMode mode, int t, int L) {
  if (mode == LossMode::PerTimestep) return 1.0 / L;
  return t == L - 1 ? 1.0 : 0.0;
}

}  // namespace

Params Params::zeros(const ModelShape& s) {
  const int D = s.input_dim, H = s.hidden_dim, N = s.num_classes, P = peep_cols(s);
  Params p;
  p.W_i = MatrixXd::Zero(H, D), p.U_i = MatrixXd::Zero(H, H), p.V_i = MatrixXd::Zero(H, P), p.b_i = VectorXd::Zero(H);
  p.W_f = MatrixXd::Zero(H, D), p.U_f = MatrixXd::Zero(H, H), p.V_f = MatrixXd::Zero(H, P), p.b_f = VectorXd::Zero(H);
  p.W_c = MatrixXd::Zero(H, D), p.U_c = MatrixXd::Zero(H, H), p.b_c = VectorXd::Zero(H);
  p.W_o = MatrixXd::Zero(H, D), p.U_o = MatrixXd::Zero(H, H), p.V_o = MatrixXd::Zero(H, P), p.b_o = VectorXd::Zero(H);
  p.W_y = MatrixXd::Zero(N, H), p.b_y = VectorXd::Zero(N);
  return p;
}

std::size_t Params::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::string_view, const auto& t) { n += static_cast<std::size_t>(t.size()); });
  return n;
}

bool Params::all_finite() const {
  bool ok = true;
  for_each([&](std::string_view, const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

double Params::squared_norm() const {
  double s = 0.0;
  for_each([&](std::string_view, const auto& t) { s += t.squaredNorm(); });
  return s;
}

void Params::add_scaled(const Params& other, double factor) {
  // Both sides visit in the same order; pair them up by index.
  std::vector<const double*> src;
  other.for_each([&](std::string_view, const auto& t) { src.push_back(t.data()); });
  std::size_t k = 0;
  for_each([&](std::string_view, auto& t) {
    Eigen::Map<const Eigen::VectorXd> o(src[k++], t.size());
    Eigen::Map<Eigen::VectorXd>(t.data(), t.size()) += factor * o;
  });
}

void Params::scale(double factor) {
  for_each([&](std::string_view, auto& t) { t *= factor; });
}

bool operator==(const Params& a, const Params& b) {
  std::vector<std::pair<const double*, Eigen::Index>> ta, tb;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> sa, sb;
  a.for_each([&](std::string_view, const auto& t) {
    ta.emplace_back(t.data(), t.size());
    sa.emplace_back(t.rows(), t.cols());
  });
  b.for_each([&](std::string_view, const auto& t) {
    tb.emplace_back(t.data(), t.size());
    sb.emplace_back(t.rows(), t.cols());
  });
  if (sa != sb) return false;
  for (std::size_t k = 0; k < ta.size(); ++k) {
    if (!std::equal(ta[k].first, ta[k].first + ta[k].second, tb[k].first)) return false;
  }
  return true;
}

void RfaModel::check_consistent() const {
  const auto ref = Params::zeros(shape);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> want;
  ref.for_each([&](std::string_view, const auto& t) { want.emplace_back(t.rows(), t.cols()); });
  std::size_t k = 0;
  params.for_each([&](std::string_view name, const auto& t) {
    if (t.rows() != want[k].first || t.cols() != want[k].second) {
      throw ContractError("tensor " + std::string(name) + " has inconsistent shape");
    }
    ++k;
  });
  if (!params.all_finite()) throw ContractError("model contains NaN or Inf");
}

RfaModel init_model(int D, int H, int N, std::uint64_t seed, double bound, PeepholeMode peephole) {
  if (D < 1 || H < 1 || N < 1) throw ContractError("model dimensions must be >= 1");
  RfaModel m{{D, H, N, peephole}, Params::zeros({D, H, N, peephole})};
  Rng rng(seed);
  m.params.for_each([&](std::string_view, auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = rng.uniform(-bound, bound);
    }
  });
  return m;
}

LstmState LstmState::zeros(int H) { return {VectorXd::Zero(H), VectorXd::Zero(H)}; }

StepResult lstm_step(const RfaModel& model, const Eigen::Ref<const VectorXd>& x, const LstmState& prev) {
  const auto& p = model.params;
  const auto mode = model.shape.peephole;
  if (x.size() != model.shape.input_dim) throw ContractError("lstm_step: input dimension mismatch");
  if (prev.h.size() != model.shape.hidden_dim || prev.c.size() != model.shape.hidden_dim) {
    throw ContractError("lstm_step: state dimension mismatch");
  }
  StepResult r;
  auto& gt = r.gates;
  gt.pre_i = p.W_i * x + p.U_i * prev.h + peep(p.V_i, prev.c, mode) + p.b_i;
  gt.pre_f = p.W_f * x + p.U_f * prev.h + peep(p.V_f, prev.c, mode) + p.b_f;
  gt.pre_c = p.W_c * x + p.U_c * prev.h + p.b_c;
  gt.i = sigmoid(gt.pre_i);
  gt.f = sigmoid(gt.pre_f);
  gt.g = gt.pre_c.array().tanh();
  r.state.c = gt.f.cwiseProduct(prev.c) + gt.i.cwiseProduct(gt.g);
  gt.pre_o = p.W_o * x + p.U_o * prev.h + peep(p.V_o, r.state.c, mode) + p.b_o;
  gt.o = sigmoid(gt.pre_o);
  r.state.h = gt.o.cwiseProduct(VectorXd(r.state.c.array().tanh()));
  return r;
}

VectorXd softmax(const Eigen::Ref<const VectorXd>& logits) {
  const double m = logits.maxCoeff();
  VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

VectorXd softmax_predict(const RfaModel& model, const Eigen::Ref<const VectorXd>& h) {
  if (h.size() != model.shape.hidden_dim) throw ContractError("softmax_predict: hidden dimension mismatch");
  return softmax(model.params.W_y * h + model.params.b_y);
}

namespace {

// Shared recurrence for forward() and hidden_states(). Input projections for all timesteps
// are computed as one matrix product.
void run_recurrence(const RfaModel& model, const Eigen::Ref<const MatrixXd>& X, ForwardTrace& tr) {
  const auto& p = model.params;
  const auto mode = model.shape.peephole;
  const int H = model.shape.hidden_dim;
  const int L = static_cast<int>(X.rows());

  const MatrixXd xi = p.W_i * X.transpose();
  const MatrixXd xf = p.W_f * X.transpose();
  const MatrixXd xc = p.W_c * X.transpose();
  const MatrixXd xo = p.W_o * X.transpose();

  for (auto* m : {&tr.pre_i, &tr.pre_f, &tr.pre_c, &tr.pre_o, &tr.i, &tr.f, &tr.g, &tr.o, &tr.c, &tr.h}) {
    m->resize(H, L);
  }
  VectorXd h = VectorXd::Zero(H);
  VectorXd c = VectorXd::Zero(H);
  for (int t = 0; t < L; ++t) {
    tr.pre_i.col(t) = xi.col(t) + p.U_i * h + peep(p.V_i, c, mode) + p.b_i;
    tr.pre_f.col(t) = xf.col(t) + p.U_f * h + peep(p.V_f, c, mode) + p.b_f;
    tr.pre_c.col(t) = xc.col(t) + p.U_c * h + p.b_c;
    tr.i.col(t) = sigmoid(VectorXd(tr.pre_i.col(t)));
    tr.f.col(t) = sigmoid(VectorXd(tr.pre_f.col(t)));
    tr.g.col(t) = tr.pre_c.col(t).array().tanh();
    c = tr.f.col(t).cwiseProduct(c) + tr.i.col(t).cwiseProduct(tr.g.col(t));
    tr.pre_o.col(t) = xo.col(t) + p.U_o * h + peep(p.V_o, c, mode) + p.b_o;
    tr.o.col(t) = sigmoid(VectorXd(tr.pre_o.col(t)));
    h = tr.o.col(t).cwiseProduct(VectorXd(c.array().tanh()));
    tr.c.col(t) = c;
    tr.h.col(t) = h;
  }
}

}  // namespace

ForwardResult forward(const RfaModel& model, const Eigen::Ref<const MatrixXd>& frames, int label,
                      const ForwardOptions& options) {
  check_frames(model, frames);
  const int L = static_cast<int>(frames.rows());
  const int H = model.shape.hidden_dim;
  if (options.expected_length > 0 && L != options.expected_length) {
    throw ContractError("subsequence has " + std::to_string(L) + " frames, expected " +
                        std::to_string(options.expected_length));
  }
  if (label < 0 || label >= model.shape.num_classes) {
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(model.shape.num_classes) + " classes");
  }

  ForwardResult out;
  auto& tr = out.trace;
  tr.inputs = frames;
  tr.label = label;
  tr.loss_mode = options.loss_mode;
  if (options.dropout_mask) {
    if (options.dropout_mask->rows() != H || options.dropout_mask->cols() != L) {
      throw ContractError("dropout mask must be H x L");
    }
    tr.mask = *options.dropout_mask;
  } else {
    tr.mask = MatrixXd::Ones(H, L);
  }
  run_recurrence(model, tr.inputs, tr);

  tr.probs.resize(model.shape.num_classes, L);
  for (int t = 0; t < L; ++t) {
    const VectorXd z = model.params.W_y * tr.h.col(t).cwiseProduct(tr.mask.col(t)) + model.params.b_y;
    tr.probs.col(t) = softmax(z);
    const double w = timestep_weight(options.loss_mode, t, L);
    if (w != 0.0) out.loss += w * (log_sum_exp(z) - z(label));
  }
  return out;
}

MatrixXd hidden_states(const RfaModel& model, const Eigen::Ref<const MatrixXd>& frames) {
  check_frames(model, frames);
  ForwardTrace tr;
  run_recurrence(model, frames, tr);
  return std::move(tr.h);
}

Gradients backward(const RfaModel& model, const ForwardTrace& tr) {
  const auto& p = model.params;
  const auto mode = model.shape.peephole;
  const int H = model.shape.hidden_dim;
  const int N = model.shape.num_classes;
  const int L = tr.length();
  if (tr.inputs.cols() != model.shape.input_dim || tr.h.rows() != H || tr.h.cols() != L || tr.probs.rows() != N) {
    throw ContractError("backward: trace does not belong to this model");
  }

  Gradients g = Params::zeros(model.shape);
  MatrixXd da_i(H, L), da_f(H, L), da_c(H, L), da_o(H, L);
  VectorXd dh_next = VectorXd::Zero(H);
  VectorXd dc_next = VectorXd::Zero(H);
  const VectorXd zero = VectorXd::Zero(H);

  for (int t = L - 1; t >= 0; --t) {
    VectorXd dh = dh_next;
    const double w = timestep_weight(tr.loss_mode, t, L);
    if (w != 0.0) {
      VectorXd dz = tr.probs.col(t);
      dz(tr.label) -= 1.0;
      dz *= w;
      g.W_y.noalias() += dz * tr.h.col(t).cwiseProduct(tr.mask.col(t)).transpose();
      g.b_y += dz;
      dh += tr.mask.col(t).cwiseProduct(p.W_y.transpose() * dz);
    }

    const VectorXd c_t = tr.c.col(t);
    const VectorXd c_prev = t > 0 ? VectorXd(tr.c.col(t - 1)) : zero;
    const VectorXd h_prev = t > 0 ? VectorXd(tr.h.col(t - 1)) : zero;
    const auto i = tr.i.col(t).array();
    const auto f = tr.f.col(t).array();
    const auto gc = tr.g.col(t).array();
    const auto o = tr.o.col(t).array();
    const Eigen::ArrayXd tanh_c = c_t.array().tanh();

    const VectorXd dao = (dh.array() * tanh_c * o * (1.0 - o)).matrix();
    const VectorXd dc =
        dc_next + (dh.array() * o * (1.0 - tanh_c.square())).matrix() + peep_transpose(p.V_o, dao, mode);
    const VectorXd dai = (dc.array() * gc * i * (1.0 - i)).matrix();
    const VectorXd daf = (dc.array() * c_prev.array() * f * (1.0 - f)).matrix();
    const VectorXd dag = (dc.array() * i * (1.0 - gc.square())).matrix();

    da_i.col(t) = dai;
    da_f.col(t) = daf;
    da_c.col(t) = dag;
    da_o.col(t) = dao;

    g.U_i.noalias() += dai * h_prev.transpose();
    g.U_f.noalias() += daf * h_prev.transpose();
    g.U_c.noalias() += dag * h_prev.transpose();
    g.U_o.noalias() += dao * h_prev.transpose();
    accumulate_peep_grad(g.V_i, dai, c_prev, mode);
    accumulate_peep_grad(g.V_f, daf, c_prev, mode);
    accumulate_peep_grad(g.V_o, dao, c_t, mode);
    g.b_i += dai;
    g.b_f += daf;
    g.b_c += dag;
    g.b_o += dao;

    dh_next = p.U_i.transpose() * dai + p.U_f.transpose() * daf + p.U_c.transpose() * dag + p.U_o.transpose() * dao;
    dc_next = dc.cwiseProduct(tr.f.col(t)) + peep_transpose(p.V_i, dai, mode) + peep_transpose(p.V_f, daf, mode);
  }

  g.W_i.noalias() = da_i * tr.inputs;
  g.W_f.noalias() = da_f * tr.inputs;
  g.W_c.noalias() = da_c * tr.inputs;
  g.W_o.noalias() = da_o * tr.inputs;
  return g;
}

MatrixXd sample_dropout_mask(int H, int L, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0, 1)");
  MatrixXd mask(H, L);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (int t = 0; t < L; ++t) {
    for (int j = 0; j < H; ++j) mask(j, t) = rng.bernoulli(rate) ? 0.0 : keep_scale;
  }
  return mask;
}

void sgd_update(RfaModel& model, const Gradients& grads, double lr) { model.params.add_scaled(grads, -lr); }

void TrainConfig::validate() const {
  if (subseq_len < 1) throw ConfigError("subsequence length must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr_initial > 0.0) || !(lr_after > 0.0)) throw ConfigError("learning rates must be > 0");
  if (lr_switch_epoch < 0 || lr_switch_epoch > epochs) throw ConfigError("lr_switch_epoch must lie in [0, epochs]");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(init_bound > 0.0)) throw ConfigError("init bound must be > 0");
  if (clip_norm < 0.0) throw ConfigError("clip norm must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

namespace {

struct Instance {
  std::size_t sequence;
  Eigen::Index start;
};

}  // namespace

TrainResult train(std::span<const TrainingSequence> sequences, const ArchConfig& arch, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (arch.hidden_dim < 1) throw ConfigError("hidden dimension must be >= 1");
  if (sequences.empty()) throw DataError("training set is empty");

  const Eigen::Index D = sequences.front().frames ? sequences.front().frames->cols() : 0;
  int max_label = 0;
  std::vector<bool> seen;
  for (const auto& s : sequences) {
    if (!s.frames) throw ContractError("training sequence '" + s.name + "' has no frames");
    if (s.frames->cols() != D) throw DataError("sequence '" + s.name + "' has inconsistent feature dimension");
    if (s.frames->rows() < cfg.subseq_len) {
      throw DataError("sequence '" + s.name + "' has " + std::to_string(s.frames->rows()) +
                      " frames, shorter than subsequence length " + std::to_string(cfg.subseq_len));
    }
    if (s.label < 0) throw DataError("sequence '" + s.name + "' has a negative label");
    max_label = std::max(max_label, s.label);
    if (seen.size() <= static_cast<std::size_t>(s.label)) seen.resize(s.label + 1, false);
    seen[s.label] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) throw DataError("training needs at least 2 classes");
  const int N = max_label + 1;
  const int H = arch.hidden_dim;
  const int L = cfg.subseq_len;

  TrainResult result{init_model(static_cast<int>(D), H, N, cfg.seed, cfg.init_bound, arch.peephole), {}};
  RfaModel& model = result.model;
  Rng rng(derive_seed(cfg.seed, {0x7261696EULL}));
  const ForwardOptions base_opts{nullptr, cfg.loss_mode, L};

  std::vector<Instance> instances(sequences.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t s = 0; s < sequences.size(); ++s) {
      const auto span_len = static_cast<std::uint64_t>(sequences[s].frames->rows() - L + 1);
      instances[s] = {s, static_cast<Eigen::Index>(rng.uniform_index(span_len))};
    }
    rng.shuffle(std::span<Instance>(instances));

    const double lr = cfg.learning_rate(epoch);
    double loss_sum = 0.0;
    for (std::size_t b0 = 0; b0 < instances.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(instances.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t n = b1 - b0;

      // Masks are drawn up front in instance order, so threading cannot perturb the stream.
      std::vector<MatrixXd> masks(n);
      if (cfg.dropout_rate > 0.0) {
        for (auto& m : masks) m = sample_dropout_mask(H, L, cfg.dropout_rate, rng);
      }

      auto run_one = [&](std::size_t k, double& loss) {
        const auto& inst = instances[b0 + k];
        const auto& seq = sequences[inst.sequence];
        const MatrixXd window = seq.frames->middleRows(inst.start, L).cast<double>();
        ForwardOptions opts = base_opts;
        if (cfg.dropout_rate > 0.0) opts.dropout_mask = &masks[k];
        auto fwd = forward(model, window, seq.label, opts);
        loss = fwd.loss;
        return backward(model, fwd.trace);
      };

      Gradients total = Params::zeros(model.shape);
      std::vector<double> losses(n, 0.0);
      if (cfg.threads <= 1 || n == 1) {
        for (std::size_t k = 0; k < n; ++k) total.add_scaled(run_one(k, losses[k]), 1.0);
      } else {
        std::vector<Gradients> grads(n);
        const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), n);
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            for (std::size_t k = w; k < n; k += workers) grads[k] = run_one(k, losses[k]);
          });
        }
        pool.clear();
        for (std::size_t k = 0; k < n; ++k) total.add_scaled(grads[k], 1.0);
      }
      for (double l : losses) loss_sum += l;

      total.scale(1.0 / static_cast<double>(n));
      if (cfg.clip_norm > 0.0) {
        const double norm = std::sqrt(total.squared_norm());
        if (norm > cfg.clip_norm) total.scale(cfg.clip_norm / norm);
      }
      sgd_update(model, total, lr);
    }
    if (!model.params.all_finite()) {
      throw DataError("training diverged (non-finite parameters) at epoch " + std::to_string(epoch + 1));
    }
    const double mean_loss = loss_sum / static_cast<double>(instances.size());
    result.epoch_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss);
  }
  return result;
}

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

GradCheckReport gradient_check(const RfaModel& model, const Eigen::Ref<const MatrixXd>& frames, int label,
                               const GradCheckOptions& options) {
  const ForwardOptions fopts{options.dropout_mask, options.loss_mode, 0};
  Gradients analytic = backward(model, forward(model, frames, label, fopts).trace);
  if (options.corrupt_analytic) analytic.W_i(0, 0) += 1e-3 + 0.1 * std::abs(analytic.W_i(0, 0));

  std::vector<const double*> analytic_data;
  analytic.for_each([&](std::string_view, const auto& t) { analytic_data.push_back(t.data()); });

  RfaModel probe = model;
  GradCheckReport report;
  std::size_t k = 0;
  probe.params.for_each([&](std::string_view name, auto& t) {
    TensorCheck check{std::string(name), 0.0, static_cast<std::size_t>(t.size())};
    const double* a = analytic_data[k++];
    double* theta = t.data();
    for (Eigen::Index j = 0; j < t.size(); ++j) {
      const double saved = theta[j];
      theta[j] = saved + options.epsilon;
      const double up = forward(probe, frames, label, fopts).loss;
      theta[j] = saved - options.epsilon;
      const double down = forward(probe, frames, label, fopts).loss;
      theta[j] = saved;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      check.max_rel_error = std::max(check.max_rel_error, relative_error(a[j], numeric));
      check.max_abs_error = std::max(check.max_abs_error, std::abs(a[j] - numeric));
    }
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.max_abs_error = std::max(report.max_abs_error, check.max_abs_error);
    report.tensors.push_back(std::move(check));
  });
  return report;
}

std::vector<std::uint8_t> encode_model(const RfaModel& model) {
  model.check_consistent();
  io::ByteWriter w;
  w.magic(kModelMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.shape.input_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.shape.hidden_dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.shape.num_classes));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(model.shape.peephole));
  model.params.for_each([&](std::string_view, const auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) w.put<double>(t(r, c));
    }
  });
  return w.take();
}

RfaModel decode_model(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  in.expect_magic(kModelMagic, "model file");
  ModelShape s;
  s.input_dim = static_cast<int>(in.get<std::uint32_t>("D"));
  s.hidden_dim = static_cast<int>(in.get<std::uint32_t>("H"));
  s.num_classes = static_cast<int>(in.get<std::uint32_t>("N"));
  const std::size_t mode_at = in.offset();
  const auto mode = in.get<std::uint8_t>("peephole mode");
  if (mode > 1) throw FormatError("unknown peephole mode " + std::to_string(mode), mode_at);
  s.peephole = static_cast<PeepholeMode>(mode);
  if (s.input_dim < 1 || s.hidden_dim < 1 || s.num_classes < 1) throw FormatError("model dimensions must be >= 1", 8);

  // Guard allocations against corrupted headers before sizing tensors.
  const auto H = static_cast<std::size_t>(s.hidden_dim);
  const std::size_t expected = 4 * H * static_cast<std::size_t>(s.input_dim) + 4 * H * H +
                               3 * H * static_cast<std::size_t>(peep_cols(s)) + 4 * H +
                               static_cast<std::size_t>(s.num_classes) * (H + 1);
  if (in.remaining() != expected * sizeof(double)) {
    throw FormatError("model payload size does not match header dimensions", in.offset());
  }
  RfaModel m{s, Params::zeros(s)};
  m.params.for_each([&](std::string_view name, auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = in.get<double>(name);
    }
  });
  in.expect_end();
  if (!m.params.all_finite()) throw FormatError("model contains non-finite values", 0);
  return m;
}

}  // namespace rfa::rnn
