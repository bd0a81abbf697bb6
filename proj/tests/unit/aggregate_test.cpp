#include <doctest.h>

#include "rfa/aggregate.hpp"
#include "rfa/error.hpp"

using namespace rfa;
using namespace rfa::aggregate;
using features::FeatureMatrix;

namespace {

FeatureMatrix random_sequence(int T, int D, Rng& rng) {
  FeatureMatrix m(T, D);
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) m(t, d) = static_cast<float>(rng.uniform01());
  return m;
}

}  // namespace

TEST_CASE("embed_subsequence layout") {
  const auto model = rnn::init_model(6, 4, 3, 2, 0.5);
  Rng rng(1);
  const MatrixXd X = random_sequence(10, 6, rng).cast<double>();
  const VectorXd e = embed_subsequence(model, X);
  REQUIRE(e.size() == 40);
  const MatrixXd h = rnn::hidden_states(model, X);
  CHECK(e.head(4) == h.col(0));
  CHECK(e.tail(4) == h.col(9));
  CHECK(embed_subsequence(model, X) == e);

  const rnn::RfaModel zero{{6, 4, 3, rnn::PeepholeMode::Full}, rnn::Params::zeros({6, 4, 3, rnn::PeepholeMode::Full})};
  CHECK(embed_subsequence(zero, X).isZero());
}

TEST_CASE("embed_sequence: degenerate window and K = 1") {
  const auto model = rnn::init_model(5, 3, 2, 9, 0.5);
  Rng rng(2);
  const auto seq = random_sequence(4, 5, rng);
  AggregationConfig cfg{4, 7, 123};
  const auto e = embed_sequence(model, seq, cfg, 17, 1);
  CHECK(e.person_id == 17u);
  CHECK(e.camera == 1);
  CHECK((e.values - embed_subsequence(model, seq.cast<double>())).cwiseAbs().maxCoeff() < 1e-15);

  const auto long_seq = random_sequence(30, 5, rng);
  AggregationConfig one{4, 1, 55};
  const auto start = sample_window_starts(30, one).front();
  CHECK(embed_sequence(model, long_seq, one).values ==
        embed_subsequence(model, long_seq.middleRows(start, 4).cast<double>()));
}

TEST_CASE("embed_sequence averages the sampled window embeddings") {
  const auto model = rnn::init_model(5, 3, 2, 4, 0.8);
  Rng rng(3);
  const auto seq = random_sequence(25, 5, rng);
  for (int K : {3, 10}) {
    AggregationConfig cfg{6, K, 999};
    const auto starts = sample_window_starts(25, cfg);
    REQUIRE(starts.size() == static_cast<std::size_t>(K));
    VectorXd manual = VectorXd::Zero(18);
    for (auto s : starts) manual += embed_subsequence(model, seq.middleRows(s, 6).cast<double>());
    manual /= K;
    const auto e = embed_sequence(model, seq, cfg);
    CHECK(e.values.size() == 18);
    CHECK((e.values - manual).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(embed_sequence(model, seq, cfg) == e);
  }
}

TEST_CASE("window starts stay in range and depend on the seed") {
  AggregationConfig cfg{5, 50, 1};
  for (auto s : sample_window_starts(12, cfg)) CHECK((s >= 0 && s <= 7));
  AggregationConfig other{5, 50, 2};
  CHECK(sample_window_starts(12, cfg) != sample_window_starts(12, other));
  CHECK_THROWS_AS(sample_window_starts(4, cfg), DataError);
  CHECK_THROWS_AS(sample_window_starts(10, AggregationConfig{5, 0, 1}), ConfigError);
}

TEST_CASE("embed_at_depth") {
  const auto model = rnn::init_model(5, 3, 2, 4, 0.8);
  Rng rng(4);
  const auto seq = random_sequence(20, 5, rng);
  AggregationConfig cfg{6, 5, 31};
  const auto full = embed_sequence(model, seq, cfg);
  CHECK(embed_at_depth(model, seq, 6, cfg) == full.values.tail(3));
  CHECK(embed_at_depth(model, seq, 1, cfg) == full.values.head(3));
  CHECK(embed_at_depth(model, seq, 1, cfg) != embed_at_depth(model, seq, 6, cfg));
  CHECK_THROWS_AS(embed_at_depth(model, seq, 0, cfg), ContractError);
  CHECK_THROWS_AS(embed_at_depth(model, seq, 7, cfg), ContractError);

  const rnn::RfaModel zero{{5, 3, 2, rnn::PeepholeMode::Full}, rnn::Params::zeros({5, 3, 2, rnn::PeepholeMode::Full})};
  CHECK(embed_at_depth(zero, seq, 3, cfg).isZero());
}

TEST_CASE("embedding file") {
  std::vector<SequenceEmbedding> es;
  for (std::uint32_t i = 0; i < 3; ++i) {
    VectorXd v(4);
    v << 0.5 * i, -1.0, 0.25, 2.0;
    es.push_back({v, 100 + i, static_cast<std::uint8_t>(i % 2)});
  }
  const auto bytes = encode_embeddings(es);
  CHECK(bytes.size() == 7 + 8 + 3 * (5 + 16));
  CHECK(decode_embeddings(bytes) == es);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(decode_embeddings(cut), FormatError);
}
