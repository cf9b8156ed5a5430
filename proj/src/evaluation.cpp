#include "sbr/evaluation.hpp"

#include <algorithm>
#include <stdexcept>

namespace sbr {

RankResult rank_of_target(const Eigen::VectorXd& scores, int target) {
  if (target < 0 || target >= scores.size())
    throw std::out_of_range("rank_of_target: target out of range");
  const double ts = scores[target];
  int rank = 1;
  for (int i = 0; i < scores.size(); ++i) {
    if (scores[i] > ts) ++rank;
    else if (scores[i] == ts && i < target) ++rank;
  }
  return RankResult{rank};
}

MetricReport metrics_at_k(const std::vector<RankResult>& ranks, int k) {
  if (ranks.empty()) throw std::invalid_argument("metrics_at_k: no ranks");
  MetricReport r;
  r.k = k;
  r.samples = std::int64_t(ranks.size());
  double hits = 0.0, rr = 0.0;
  for (const auto& rr_ : ranks) {
    if (rr_.rank && *rr_.rank <= k) {
      hits += 1.0;
      rr += 1.0 / double(*rr_.rank);
    }
  }
  r.hr_at_k = hits / double(ranks.size());
  r.mrr_at_k = rr / double(ranks.size());
  return r;
}

Eigen::VectorXd pop_scores(const SessionCorpus& corpus) {
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(corpus.vocab_size());
  bool any = false;
  for (std::size_t i = 0; i < corpus.sessions.size(); ++i) {
    if (!corpus.splits.empty() && corpus.splits[i] != Split::train) continue;
    any = true;
    for (int id : corpus.sessions[i]) freq[id] += 1.0;
  }
  if (!any) throw std::runtime_error("pop_scores: empty training split");
  return freq;
}

Eigen::VectorXd spop_scores(const std::vector<int>& prefix, const Eigen::VectorXd& pop) {
  if (prefix.empty()) throw std::invalid_argument("spop_scores: empty prefix");
  // in-prefix counts dominate; normalized popularity breaks ties
  const double pop_max = std::max(1.0, pop.maxCoeff());
  Eigen::VectorXd s = pop / (pop_max + 1.0);
  for (int id : prefix) s[id] += 1.0;
  return s;
}

ItemKnn::ItemKnn(const SessionCorpus& corpus) : vocab_size_(corpus.vocab_size()) {
  sessions_with_.resize(std::size_t(vocab_size_));
  int sid = 0;
  for (std::size_t i = 0; i < corpus.sessions.size(); ++i) {
    if (!corpus.splits.empty() && corpus.splits[i] != Split::train) continue;
    for (int id : corpus.sessions[i]) {
      auto& v = sessions_with_[std::size_t(id)];
      if (v.empty() || v.back() != sid) v.push_back(sid);
    }
    ++sid;
  }
}

Eigen::VectorXd ItemKnn::scores(int last_item) const {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(vocab_size_);
  if (last_item < 0 || last_item >= vocab_size_ ||
      sessions_with_[std::size_t(last_item)].empty()) {
    ++cold_queries_;
    return s;
  }
  const auto& si = sessions_with_[std::size_t(last_item)];
  for (int j = 0; j < vocab_size_; ++j) {
    if (j == last_item) continue;
    const auto& sj = sessions_with_[std::size_t(j)];
    if (sj.empty()) continue;
    std::size_t inter = 0, a = 0, b = 0;
    while (a < si.size() && b < sj.size()) {
      if (si[a] == sj[b]) { ++inter; ++a; ++b; }
      else if (si[a] < sj[b]) ++a;
      else ++b;
    }
    if (inter)
      s[j] = double(inter) / std::sqrt(double(si.size()) * double(sj.size()));
  }
  return s;
}

MetricReport evaluate_model(const Model& model, const std::vector<Sample>& samples,
                            int pad_id, int k, int batch_size) {
  if (samples.empty()) throw std::invalid_argument("evaluate_model: no samples");
  auto batches = make_batches(samples, batch_size, pad_id, nullptr);
  Rng rng(0);  // unused in eval mode
  std::vector<RankResult> ranks;
  ranks.reserve(samples.size());
  for (const auto& b : batches) {
    ad::Tape t;
    ForwardResult f = model.forward(t, b, ad::Mode::eval, rng);
    for (int r = 0; r < b.n; ++r) {
      Eigen::VectorXd scores = f.scores->value.row(r).transpose();
      ranks.push_back(rank_of_target(scores, b.targets[std::size_t(r)]));
    }
  }
  return metrics_at_k(ranks, k);
}

BaselineKind parse_baseline(const std::string& name) {
  if (name == "pop") return BaselineKind::pop;
  if (name == "spop") return BaselineKind::spop;
  if (name == "itemknn") return BaselineKind::itemknn;
  throw std::invalid_argument("unknown baseline: " + name);
}

MetricReport evaluate_baseline(BaselineKind kind, const SessionCorpus& corpus,
                               const std::vector<Sample>& samples, int k) {
  if (samples.empty()) throw std::invalid_argument("evaluate_baseline: no samples");
  Eigen::VectorXd pop = pop_scores(corpus);
  std::optional<ItemKnn> knn;
  if (kind == BaselineKind::itemknn) knn.emplace(corpus);
  std::vector<RankResult> ranks;
  ranks.reserve(samples.size());
  for (const auto& s : samples) {
    Eigen::VectorXd scores;
    switch (kind) {
      case BaselineKind::pop: scores = pop; break;
      case BaselineKind::spop: scores = spop_scores(s.input, pop); break;
      case BaselineKind::itemknn: scores = knn->scores(s.input.back()); break;
    }
    ranks.push_back(rank_of_target(scores, s.target));
  }
  return metrics_at_k(ranks, k);
}

}  // namespace sbr
