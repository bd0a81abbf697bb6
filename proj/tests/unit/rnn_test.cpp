#include <doctest.h>

#include <cmath>

#include "rfa/error.hpp"
#include "rfa/rnn.hpp"

using namespace rfa::rnn;

namespace {

RfaModel zero_model(int D, int H, int N, PeepholeMode mode = PeepholeMode::Full) {
  return {{D, H, N, mode}, Params::zeros({D, H, N, mode})};
}

MatrixXd random_frames(int L, int D, rfa::Rng& rng) {
  MatrixXd X(L, D);
  for (int t = 0; t < L; ++t)
    for (int d = 0; d < D; ++d) X(t, d) = rng.uniform(-1.0, 1.0);
  return X;
}

}  // namespace

TEST_CASE("init_model") {
  const auto a = init_model(5, 4, 3, 99);
  const auto b = init_model(5, 4, 3, 99);
  const auto c = init_model(5, 4, 3, 100);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  a.params.for_each([](std::string_view, const auto& t) {
    CHECK(t.maxCoeff() <= 0.01);
    CHECK(t.minCoeff() >= -0.01);
  });
  CHECK(a.params.V_i.cols() == 4);
  CHECK(init_model(5, 4, 3, 1, 0.01, PeepholeMode::Diagonal).params.V_i.cols() == 1);
  CHECK(a.params.parameter_count() == 4u * 4 * 5 + 4u * 16 + 3u * 16 + 4u * 4 + 3u * 4 + 3u);
}

TEST_CASE("lstm_step: zero parameters") {
  const auto m = zero_model(3, 2, 2);
  VectorXd x(3);
  x << 0.3, -2.0, 7.0;
  const auto r = lstm_step(m, x, LstmState::zeros(2));
  CHECK(r.gates.i.isApproxToConstant(0.5));
  CHECK(r.gates.f.isApproxToConstant(0.5));
  CHECK(r.gates.o.isApproxToConstant(0.5));
  CHECK(r.state.c.isZero());
  CHECK(r.state.h.isZero());
}

TEST_CASE("lstm_step: scalar oracle with saturated candidate") {
  auto m = zero_model(1, 1, 2);
  m.params.b_c(0) = 10.0;
  const auto r = lstm_step(m, VectorXd::Zero(1), LstmState::zeros(1));
  // mpmath reference: c = 0.5 tanh(10), h = 0.5 tanh(c)
  CHECK(r.state.c(0) == doctest::Approx(0.4999999979388463818).epsilon(1e-14));
  CHECK(r.state.h(0) == doctest::Approx(0.2310585778195100833).epsilon(1e-14));
}

TEST_CASE("lstm_step: output gate sees the new cell") {
  auto m = zero_model(1, 1, 2);
  m.params.b_c(0) = 10.0;
  m.params.V_o(0, 0) = 3.0;
  const auto r = lstm_step(m, VectorXd::Zero(1), LstmState::zeros(1));
  const double c = 0.5 * std::tanh(10.0);
  CHECK(r.gates.o(0) == doctest::Approx(1.0 / (1.0 + std::exp(-3.0 * c))).epsilon(1e-14));
}

TEST_CASE("lstm_step: memory carry with saturated gates") {
  auto m = init_model(4, 3, 2, 7, 0.3);
  m.params.b_f.setConstant(50.0);
  m.params.b_i.setConstant(-50.0);
  LstmState s{VectorXd::Zero(3), VectorXd(3)};
  s.c << 0.7, -0.2, 0.05;
  const VectorXd c0 = s.c;
  rfa::Rng rng(1);
  for (int t = 0; t < 10; ++t) {
    s = lstm_step(m, random_frames(1, 4, rng).row(0).transpose(), s).state;
    CHECK((s.c - c0).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("lstm_step: dimension mismatch") {
  const auto m = zero_model(3, 2, 2);
  CHECK_THROWS_AS(lstm_step(m, VectorXd::Zero(4), LstmState::zeros(2)), rfa::ContractError);
  CHECK_THROWS_AS(lstm_step(m, VectorXd::Zero(3), LstmState::zeros(3)), rfa::ContractError);
}

TEST_CASE("softmax") {
  VectorXd z(2);
  z << 0.0, 0.0;
  CHECK(softmax(z).isApprox(VectorXd::Constant(2, 0.5)));
  z << std::log(2.0), 0.0;
  CHECK(softmax(z)(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  z << 1000.0, 0.0;
  const VectorXd p = softmax(z);
  CHECK(p.allFinite());
  CHECK(p(0) == doctest::Approx(1.0));
  CHECK(p(1) < 1e-300);

  rfa::Rng rng(2);
  for (int k = 0; k < 200; ++k) {
    VectorXd logits(5);
    for (int j = 0; j < 5; ++j) logits(j) = rng.uniform(-30.0, 30.0);
    const VectorXd a = softmax(logits);
    const VectorXd b = softmax((logits.array() + rng.uniform(-100.0, 100.0)).matrix());
    CHECK(std::abs(a.sum() - 1.0) < 1e-9);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  }

  auto m = zero_model(2, 3, 4);
  CHECK(softmax_predict(m, VectorXd::Ones(3)).isApproxToConstant(0.25));
}

TEST_CASE("forward: zero model gives ln N") {
  const auto m = zero_model(3, 4, 5);
  rfa::Rng rng(8);
  const auto X = random_frames(6, 3, rng);
  const auto r = forward(m, X, 2);
  CHECK(r.loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  CHECK(forward(m, X, 2, {nullptr, LossMode::LastStep, 0}).loss == doctest::Approx(std::log(5.0)));
}

TEST_CASE("forward: scalar pen-and-paper oracle") {
  auto m = zero_model(1, 1, 2);
  auto& p = m.params;
  p.W_i(0, 0) = 0.3, p.U_i(0, 0) = -0.2, p.V_i(0, 0) = 0.15, p.b_i(0) = 0.05;
  p.W_f(0, 0) = -0.4, p.U_f(0, 0) = 0.25, p.V_f(0, 0) = -0.1, p.b_f(0) = 0.2;
  p.W_c(0, 0) = 0.7, p.U_c(0, 0) = -0.35, p.b_c(0) = -0.05;
  p.W_o(0, 0) = 0.45, p.U_o(0, 0) = 0.1, p.V_o(0, 0) = 0.3, p.b_o(0) = -0.15;
  p.W_y << 0.8, -0.6;
  p.b_y << 0.1, -0.2;
  MatrixXd X(2, 1);
  X << 0.9, -0.5;
  // Reference from a 40-digit scalar evaluation of the same recurrence.
  const auto r = forward(m, X, 1);
  CHECK(std::abs(r.loss - 0.923213243112994336370608813335) < 1e-12);
  CHECK(std::abs(r.trace.h(0, 0) - 0.172090418391265056643727769734) < 1e-12);
  CHECK(std::abs(r.trace.c(0, 1) - -0.0233651461481262561018837023463) < 1e-12);
  CHECK(std::abs(forward(m, X, 1, {nullptr, LossMode::LastStep, 0}).loss - 0.846678221720087579247554140758) < 1e-12);
}

TEST_CASE("forward: trace invariants and determinism") {
  const auto m = init_model(6, 5, 3, 4, 1.0);
  rfa::Rng rng(9);
  const auto X = random_frames(7, 6, rng);
  const auto a = forward(m, X, 1);
  const auto b = forward(m, X, 1);
  CHECK(a.loss == b.loss);
  CHECK(a.trace.h == b.trace.h);
  for (const auto* g : {&a.trace.i, &a.trace.f, &a.trace.o}) {
    CHECK(g->minCoeff() > 0.0);
    CHECK(g->maxCoeff() < 1.0);
  }
  CHECK(a.trace.h.cwiseAbs().maxCoeff() < 1.0);
  for (int t = 0; t < 7; ++t) CHECK(std::abs(a.trace.probs.col(t).sum() - 1.0) < 1e-9);
  CHECK(hidden_states(m, X) == a.trace.h);
}

TEST_CASE("forward: contract errors") {
  const auto m = zero_model(3, 2, 2);
  rfa::Rng rng(1);
  CHECK_THROWS_AS(forward(m, random_frames(4, 2, rng), 0), rfa::ContractError);
  CHECK_THROWS_AS(forward(m, random_frames(4, 3, rng), 2), rfa::ContractError);
  CHECK_THROWS_AS(forward(m, random_frames(4, 3, rng), 0, {nullptr, LossMode::PerTimestep, 5}), rfa::ContractError);
  const MatrixXd bad_mask = MatrixXd::Ones(3, 4);
  CHECK_THROWS_AS(forward(m, random_frames(4, 3, rng), 0, {&bad_mask, LossMode::PerTimestep, 0}),
                  rfa::ContractError);
}

TEST_CASE("backward matches finite differences") {
  rfa::Rng rng(123);
  for (auto mode : {PeepholeMode::Full, PeepholeMode::Diagonal}) {
    for (auto loss : {LossMode::PerTimestep, LossMode::LastStep}) {
      const auto m = init_model(6, 4, 3, rng.next_u64(), 0.5, mode);
      const auto X = random_frames(5, 6, rng);
      const MatrixXd mask = sample_dropout_mask(4, 5, 0.3, rng);
      for (const MatrixXd* mk : {static_cast<const MatrixXd*>(nullptr), &mask}) {
        const auto report = gradient_check(m, X, 1, {1e-5, mk, loss, false});
        CHECK(report.max_rel_error < 1e-4);
        CHECK(report.tensors.size() == 17u);
      }
    }
  }
}

TEST_CASE("gradient_check detects a corrupted gradient") {
  rfa::Rng rng(5);
  const auto m = init_model(4, 3, 2, 17, 0.5);
  const auto X = random_frames(3, 4, rng);
  CHECK_FALSE(gradient_check(m, X, 0, {1e-5, nullptr, LossMode::PerTimestep, true}).passed());
}

TEST_CASE("backward: softmax bias gradient sums to zero, deterministic") {
  const auto m = zero_model(2, 3, 2);
  rfa::Rng rng(3);
  const auto X = random_frames(4, 2, rng);
  const auto fwd = forward(m, X, 0);
  const auto g = backward(m, fwd.trace);
  CHECK(std::abs(g.b_y.sum()) < 1e-15);
  CHECK(g == backward(m, fwd.trace));

  ForwardTrace bad = fwd.trace;
  bad.inputs = MatrixXd::Zero(4, 3);
  CHECK_THROWS_AS(backward(m, bad), rfa::ContractError);
}

TEST_CASE("sgd_update") {
  auto m = init_model(3, 2, 2, 1);
  const auto before = m;
  auto g = init_model(3, 2, 2, 2).params;
  sgd_update(m, g, 0.0);
  CHECK(m == before);

  auto s = zero_model(1, 1, 2);
  s.params.W_i(0, 0) = 1.0;
  auto sg = Params::zeros(s.shape);
  sg.W_i(0, 0) = 2.0;
  sgd_update(s, sg, 0.1);
  CHECK(s.params.W_i(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

  // Two steps equal one step with summed scaled gradients.
  auto g2 = init_model(3, 2, 2, 3).params;
  auto twice = before;
  sgd_update(twice, g, 0.1);
  sgd_update(twice, g2, 0.2);
  auto once = before;
  auto combined = g;
  combined.scale(0.1);
  combined.add_scaled(g2, 0.2);
  sgd_update(once, combined, 1.0);
  once.params.for_each([&](std::string_view name, const auto& t) {
    twice.params.for_each([&](std::string_view other, const auto& u) {
      if constexpr (std::is_same_v<std::decay_t<decltype(t)>, std::decay_t<decltype(u)>>) {
        if (name == other) CHECK((t - u).cwiseAbs().maxCoeff() < 1e-15);
      }
    });
  });
}

namespace {

// Two classes whose frames differ in sign of the first half of the feature vector.
std::vector<rfa::features::FeatureMatrix> separable_sequences(int per_class, int T, int D, rfa::Rng& rng) {
  std::vector<rfa::features::FeatureMatrix> seqs;
  for (int cls = 0; cls < 2; ++cls) {
    for (int s = 0; s < per_class; ++s) {
      rfa::features::FeatureMatrix m(T, D);
      for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d) {
          const double base = (d < D / 2) == (cls == 0) ? 1.0 : 0.0;
          m(t, d) = static_cast<float>(base + rng.uniform(-0.1, 0.1));
        }
      seqs.push_back(std::move(m));
    }
  }
  return seqs;
}

}  // namespace

TEST_CASE("train: separable two-class problem converges") {
  rfa::Rng rng(77);
  const auto seqs = separable_sequences(2, 12, 8, rng);
  std::vector<TrainingSequence> data;
  for (std::size_t k = 0; k < seqs.size(); ++k) data.push_back({"s" + std::to_string(k), static_cast<int>(k / 2), &seqs[k]});
  TrainConfig cfg;
  cfg.subseq_len = 4;
  cfg.epochs = 50;
  cfg.lr_initial = 0.5;
  cfg.lr_after = 0.5;
  cfg.lr_switch_epoch = 50;
  cfg.dropout_rate = 0.0;
  cfg.batch_size = 1;
  cfg.init_bound = 0.1;
  cfg.seed = 5;
  const auto r = train(data, {8, PeepholeMode::Full}, cfg);
  REQUIRE(r.epoch_loss.size() == 50u);
  CHECK(r.epoch_loss.back() < 0.1 * std::log(2.0));

  const auto again = train(data, {8, PeepholeMode::Full}, cfg);
  CHECK(again.epoch_loss == r.epoch_loss);
  CHECK(again.model == r.model);

  cfg.threads = 3;
  cfg.batch_size = 4;
  cfg.dropout_rate = 0.5;
  const auto threaded = train(data, {8, PeepholeMode::Full}, cfg);
  cfg.threads = 1;
  const auto serial = train(data, {8, PeepholeMode::Full}, cfg);
  CHECK(threaded.model == serial.model);
  CHECK(threaded.epoch_loss == serial.epoch_loss);
}

TEST_CASE("train: zero epochs returns the initial model") {
  rfa::Rng rng(1);
  const auto seqs = separable_sequences(1, 6, 4, rng);
  std::vector<TrainingSequence> data{{"a", 0, &seqs[0]}, {"b", 1, &seqs[1]}};
  TrainConfig cfg;
  cfg.subseq_len = 3;
  cfg.epochs = 0;
  cfg.lr_switch_epoch = 0;
  cfg.seed = 31;
  const auto r = train(data, {5, PeepholeMode::Full}, cfg);
  CHECK(r.model == init_model(4, 5, 2, 31, cfg.init_bound));
  CHECK(r.epoch_loss.empty());
}

TEST_CASE("train: error paths") {
  rfa::Rng rng(1);
  const auto seqs = separable_sequences(1, 6, 4, rng);
  TrainConfig cfg;
  cfg.subseq_len = 8;
  cfg.epochs = 1;
  cfg.lr_switch_epoch = 1;
  std::vector<TrainingSequence> data{{"person7/cam_b", 0, &seqs[0]}, {"x", 1, &seqs[1]}};
  try {
    train(data, {4, PeepholeMode::Full}, cfg);
    FAIL("expected DataError");
  } catch (const rfa::DataError& e) {
    CHECK(std::string(e.what()).find("person7/cam_b") != std::string::npos);
  }
  cfg.subseq_len = 3;
  std::vector<TrainingSequence> one_class{{"a", 0, &seqs[0]}, {"b", 0, &seqs[1]}};
  CHECK_THROWS_AS(train(one_class, {4, PeepholeMode::Full}, cfg), rfa::DataError);
  cfg.lr_switch_epoch = 5;
  CHECK_THROWS_AS(train(data, {4, PeepholeMode::Full}, cfg), rfa::ConfigError);
}

TEST_CASE("model file round trip") {
  for (auto mode : {PeepholeMode::Full, PeepholeMode::Diagonal}) {
    const auto m = init_model(7, 3, 4, 12, 0.01, mode);
    const auto bytes = encode_model(m);
    CHECK(bytes.size() == 8 + 13 + m.params.parameter_count() * 8);
    CHECK(decode_model(bytes) == m);
    auto cut = bytes;
    cut.resize(cut.size() - 8);
    CHECK_THROWS_AS(decode_model(cut), rfa::FormatError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_model(bad), rfa::FormatError);
  }
}
