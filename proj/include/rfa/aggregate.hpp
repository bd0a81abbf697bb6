#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rfa/features.hpp"
#include "rfa/rnn.hpp"

namespace rfa::aggregate {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct AggregationConfig {
  int subseq_len = 10;
  /// Number of random windows averaged per sequence.
  int num_subsequences = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Sequence-level representation: hidden states h_1..h_L concatenated in time order,
/// averaged over the sampled windows.
struct SequenceEmbedding {
  VectorXd values;
  std::uint32_t person_id = 0;
  std::uint8_t camera = 0;  // 0 = camera a (probe), 1 = camera b (gallery)

  friend bool operator==(const SequenceEmbedding& a, const SequenceEmbedding& b) {
    return a.person_id == b.person_id && a.camera == b.camera && a.values.size() == b.values.size() &&
           a.values == b.values;
  }
};

/// Concatenation [h_1; ...; h_L] of a dropout-free forward pass over exactly L frames.
VectorXd embed_subsequence(const rnn::RfaModel& model, const Eigen::Ref<const MatrixXd>& frames);

/// K start indices drawn uniformly from [0, T - L], with replacement.
std::vector<Eigen::Index> sample_window_starts(Eigen::Index num_frames, const AggregationConfig& cfg);

/// Mean hidden-state matrix (H x L) over the sampled windows. Column t is the depth-(t+1)
/// feature; its column-major flattening is the sequence embedding.
MatrixXd mean_hidden_states(const rnn::RfaModel& model, const features::FeatureMatrix& frames,
                            const AggregationConfig& cfg);

SequenceEmbedding embed_sequence(const rnn::RfaModel& model, const features::FeatureMatrix& frames,
                                 const AggregationConfig& cfg, std::uint32_t person_id = 0,
                                 std::uint8_t camera = 0);

/// Mean of h_depth over the same windows embed_sequence uses; depth in 1..L.
VectorXd embed_at_depth(const rnn::RfaModel& model, const features::FeatureMatrix& frames, int depth,
                        const AggregationConfig& cfg);

/// RFAEMB1: u32 dim, u32 count, then per record u32 person id, u8 camera, dim x f32.
std::vector<std::uint8_t> encode_embeddings(std::span<const SequenceEmbedding> embeddings);
std::vector<SequenceEmbedding> decode_embeddings(std::span<const std::uint8_t> bytes);

}  // namespace rfa::aggregate
