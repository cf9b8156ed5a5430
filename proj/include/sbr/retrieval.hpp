#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "sbr/model.hpp"

namespace sbr {

struct TopLResult {
  // descending score, ties by ascending id
  std::vector<std::pair<int, double>> items;
};

// Greedy-search proximity graph over norm-augmented vectors. Each vector
// gains a coordinate sqrt(maxnorm^2 - |v|^2) so all augmented vectors
// share the same norm and nearest-neighbor under L2 equals maximum inner
// product; queries append 0.
struct MipsIndex {
  ad::Mat augmented;               // Mx(E+1)
  double max_norm = 0.0;
  int degree = 16;
  int ef_search = 96;
  std::vector<std::vector<int>> neighbors;

  TopLResult query(const Eigen::VectorXd& q, int l) const;
};

struct CandidateIndex {
  ad::Mat matrix;  // MxE; raw embeddings (linear) or feedforward output (decoupled)
  std::uint64_t model_hash = 0;
  std::int64_t built_at = 0;  // unix seconds
  std::optional<MipsIndex> mips;
};

// Linear -> raw table minus pad row; decoupled -> softplus-transformed
// matrix, so query-time scoring is the same dot-product path as linear.
// MLP/MoS decoders cannot be served this way.
CandidateIndex precompute_candidates(const Model& model);

// Exact top-L by inner product with a bounded heap; ties by ascending id.
TopLResult topl_exact(const Eigen::VectorXd& query, const CandidateIndex& index, int l);

MipsIndex build_mips_index(const ad::Mat& matrix, int degree = 24, int ef_build = 200,
                           int ef_search = 200, std::uint64_t seed = 7);

// Queries the prebuilt spatial index; throws if model_hash mismatches
// expected_hash (stale index guard; pass 0 to skip).
TopLResult topl_indexed(const CandidateIndex& index, const Eigen::VectorXd& query,
                        int l, std::uint64_t expected_hash = 0);

// Session vector for retrieval: the encoder output, projected by dec.W
// when the decoder uses one.
Eigen::VectorXd query_vector(const Model& model, const std::vector<int>& prefix);

}  // namespace sbr
