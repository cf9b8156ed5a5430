#pragma once

#include <optional>
#include <vector>

#include "sbr/dataset.hpp"
#include "sbr/model.hpp"

namespace sbr {

struct RankResult {
  std::optional<int> rank;  // 1-based; empty = target not scorable
};

struct MetricReport {
  double hr_at_k = 0.0;
  double mrr_at_k = 0.0;
  int k = 20;
  std::int64_t samples = 0;
};

// 1 + #{strictly better scores} + #{equal scores at lower item id}.
RankResult rank_of_target(const Eigen::VectorXd& scores, int target);

MetricReport metrics_at_k(const std::vector<RankResult>& ranks, int k = 20);

// ---- non-learned baselines ------------------------------------------

// Train-frequency scores, one static vector.
Eigen::VectorXd pop_scores(const SessionCorpus& corpus);

// In-prefix frequency; ties broken by global popularity. pop must come
// from pop_scores on the same corpus.
Eigen::VectorXd spop_scores(const std::vector<int>& prefix, const Eigen::VectorXd& pop);

class ItemKnn {
 public:
  explicit ItemKnn(const SessionCorpus& corpus);
  // Cosine over session co-occurrence with the last prefix item; the
  // item itself is excluded. Cold items yield a zero vector.
  Eigen::VectorXd scores(int last_item) const;
  std::int64_t cold_queries() const { return cold_queries_; }

 private:
  int vocab_size_;
  std::vector<std::vector<int>> sessions_with_;  // item -> sorted session ids
  mutable std::int64_t cold_queries_ = 0;
};

// ---- model evaluation ------------------------------------------------

MetricReport evaluate_model(const Model& model, const std::vector<Sample>& samples,
                            int pad_id, int k = 20, int batch_size = 200);

enum class BaselineKind { pop, spop, itemknn };
BaselineKind parse_baseline(const std::string& name);

MetricReport evaluate_baseline(BaselineKind kind, const SessionCorpus& corpus,
                               const std::vector<Sample>& samples, int k = 20);

}  // namespace sbr
