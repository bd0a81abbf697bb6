#include "rfa/aggregate.hpp"

#include "rfa/binary_io.hpp"
#include "rfa/error.hpp"
#include "rfa/random.hpp"

namespace rfa::aggregate {

namespace {

constexpr std::string_view kEmbeddingMagic = "RFAEMB1";

}  // namespace

void AggregationConfig::validate() const {
  if (subseq_len < 1) throw ConfigError("subsequence length must be >= 1");
  if (num_subsequences < 1) throw ConfigError("number of subsequences must be >= 1");
}

VectorXd embed_subsequence(const rnn::RfaModel& model, const Eigen::Ref<const MatrixXd>& frames) {
  const MatrixXd h = rnn::hidden_states(model, frames);
  return Eigen::Map<const VectorXd>(h.data(), h.size());
}

std::vector<Eigen::Index> sample_window_starts(Eigen::Index num_frames, const AggregationConfig& cfg) {
  cfg.validate();
  if (num_frames < cfg.subseq_len) {
    throw DataError("sequence has " + std::to_string(num_frames) + " frames, shorter than subsequence length " +
                    std::to_string(cfg.subseq_len));
  }
  Rng rng(cfg.seed);
  const auto choices = static_cast<std::uint64_t>(num_frames - cfg.subseq_len + 1);
  std::vector<Eigen::Index> starts(static_cast<std::size_t>(cfg.num_subsequences));
  for (auto& s : starts) s = static_cast<Eigen::Index>(rng.uniform_index(choices));
  return starts;
}

MatrixXd mean_hidden_states(const rnn::RfaModel& model, const features::FeatureMatrix& frames,
                            const AggregationConfig& cfg) {
  const auto starts = sample_window_starts(frames.rows(), cfg);
  MatrixXd sum = MatrixXd::Zero(model.shape.hidden_dim, cfg.subseq_len);
  for (const auto s : starts) {
    sum += rnn::hidden_states(model, frames.middleRows(s, cfg.subseq_len).cast<double>());
  }
  return sum / static_cast<double>(starts.size());
}

SequenceEmbedding embed_sequence(const rnn::RfaModel& model, const features::FeatureMatrix& frames,
                                 const AggregationConfig& cfg, std::uint32_t person_id, std::uint8_t camera) {
  const MatrixXd mean = mean_hidden_states(model, frames, cfg);
  return {Eigen::Map<const VectorXd>(mean.data(), mean.size()), person_id, camera};
}

VectorXd embed_at_depth(const rnn::RfaModel& model, const features::FeatureMatrix& frames, int depth,
                        const AggregationConfig& cfg) {
  if (depth < 1 || depth > cfg.subseq_len) {
    throw ContractError("depth " + std::to_string(depth) + " outside 1.." + std::to_string(cfg.subseq_len));
  }
  return mean_hidden_states(model, frames, cfg).col(depth - 1);
}

std::vector<std::uint8_t> encode_embeddings(std::span<const SequenceEmbedding> embeddings) {
  const auto dim = embeddings.empty() ? 0 : embeddings.front().values.size();
  io::ByteWriter w;
  w.magic(kEmbeddingMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(embeddings.size()));
  for (const auto& e : embeddings) {
    if (e.values.size() != dim) throw ContractError("embeddings in one file must share a dimension");
    w.put<std::uint32_t>(e.person_id);
    w.put<std::uint8_t>(e.camera);
    for (Eigen::Index k = 0; k < e.values.size(); ++k) w.put<float>(static_cast<float>(e.values(k)));
  }
  return w.take();
}

std::vector<SequenceEmbedding> decode_embeddings(std::span<const std::uint8_t> bytes) {
  io::ByteReader in(bytes);
  in.expect_magic(kEmbeddingMagic, "embedding file");
  const auto dim = in.get<std::uint32_t>("dim");
  const auto count = in.get<std::uint32_t>("count");
  in.require(static_cast<std::size_t>(count) * (5 + 4 * static_cast<std::size_t>(dim)), "embedding records");
  std::vector<SequenceEmbedding> out(count);
  for (auto& e : out) {
    e.person_id = in.get<std::uint32_t>("person id");
    e.camera = in.get<std::uint8_t>("camera id");
    e.values.resize(dim);
    for (std::uint32_t k = 0; k < dim; ++k) e.values(k) = in.get<float>("embedding value");
  }
  in.expect_end();
  return out;
}

}  // namespace rfa::aggregate
