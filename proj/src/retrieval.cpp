#include "sbr/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <queue>
#include <stdexcept>
#include <unordered_set>

#include "sbr/rng.hpp"

namespace sbr {

namespace {

// (score desc, id asc)
bool better(const std::pair<int, double>& a, const std::pair<int, double>& b) {
  if (a.second != b.second) return a.second > b.second;
  return a.first < b.first;
}

TopLResult select_top(std::vector<std::pair<int, double>>& scored, int l) {
  const std::size_t keep = std::min<std::size_t>(std::size_t(l), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + std::ptrdiff_t(keep), scored.end(),
                    better);
  scored.resize(keep);
  return TopLResult{std::move(scored)};
}

}  // namespace

CandidateIndex precompute_candidates(const Model& model) {
  const auto& cfg = model.cfg;
  if (cfg.decoder != DecoderKind::linear && cfg.decoder != DecoderKind::decoupled)
    throw std::invalid_argument(
        "precompute_candidates: only linear/decoupled decoders have a "
        "precomputable candidate matrix");
  const ad::Mat& table = cfg.share_embeddings ? model.params.at("emb")
                                              : model.params.at("emb_cand");
  CandidateIndex index;
  index.matrix = table.topRows(cfg.vocab_size);  // pad row excluded
  if (cfg.decoder == DecoderKind::decoupled) {
    ad::Tape t;
    ad::Var c = t.leaf(index.matrix);
    ad::Var out = decoupled_candidates(t, c, t.leaf(model.params.at("dec.ff.A")),
                                       t.leaf(model.params.at("dec.ff.b")));
    index.matrix = out->value;
  }
  index.model_hash = model.param_hash();
  index.built_at = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  return index;
}

TopLResult topl_exact(const Eigen::VectorXd& query, const CandidateIndex& index, int l) {
  if (l < 1) throw std::invalid_argument("topl_exact: l >= 1");
  if (query.size() != index.matrix.cols())
    throw std::invalid_argument("topl_exact: query dimension mismatch");
  const int m = int(index.matrix.rows());
  // bounded max-first selection: a heap of the l best seen so far
  auto worse = [](const std::pair<int, double>& a, const std::pair<int, double>& b) {
    return better(a, b);  // heap top = current worst of the kept set
  };
  std::priority_queue<std::pair<int, double>, std::vector<std::pair<int, double>>,
                      decltype(worse)>
      heap(worse);
  for (int i = 0; i < m; ++i) {
    const double s = index.matrix.row(i).dot(query.transpose());
    if (int(heap.size()) < l) {
      heap.push({i, s});
    } else if (better({i, s}, heap.top())) {
      heap.pop();
      heap.push({i, s});
    }
  }
  std::vector<std::pair<int, double>> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
  return TopLResult{std::move(out)};
}

MipsIndex build_mips_index(const ad::Mat& matrix, int degree, int ef_build,
                           int ef_search, std::uint64_t seed) {
  if (matrix.rows() == 0) throw std::invalid_argument("build_mips_index: empty matrix");
  MipsIndex index;
  index.degree = degree;
  index.ef_search = ef_search;
  const int m = int(matrix.rows());
  const int e = int(matrix.cols());
  double max_sq = 0.0;
  for (int i = 0; i < m; ++i) max_sq = std::max(max_sq, matrix.row(i).squaredNorm());
  index.max_norm = std::sqrt(max_sq);
  index.augmented.resize(m, e + 1);
  index.augmented.leftCols(e) = matrix;
  for (int i = 0; i < m; ++i) {
    const double rest = std::max(0.0, max_sq - matrix.row(i).squaredNorm());
    index.augmented(i, e) = std::sqrt(rest);
  }

  index.neighbors.assign(std::size_t(m), {});
  Rng rng(seed);
  auto dist2 = [&](int a, int b) {
    return (index.augmented.row(a) - index.augmented.row(b)).squaredNorm();
  };
  // diversity selection: keep a candidate only if no already-kept
  // neighbor is closer to it than the node itself
  auto select_diverse = [&](const std::vector<std::pair<double, int>>& sorted_cands) {
    std::vector<int> kept;
    for (const auto& [d, c] : sorted_cands) {
      if (int(kept.size()) >= degree) break;
      bool dominated = false;
      for (int k : kept)
        if (dist2(c, k) < d) {
          dominated = true;
          break;
        }
      if (!dominated) kept.push_back(c);
    }
    return kept;
  };
  auto prune = [&](int node) {
    auto& nb = index.neighbors[std::size_t(node)];
    if (int(nb.size()) <= degree) return;
    std::vector<std::pair<double, int>> cands;
    cands.reserve(nb.size());
    for (int c : nb) cands.push_back({dist2(node, c), c});
    std::sort(cands.begin(), cands.end());
    nb = select_diverse(cands);
  };

  for (int i = 1; i < m; ++i) {
    // beam search over the partial graph for i's nearest inserted points
    const Eigen::RowVectorXd v = index.augmented.row(i);
    std::vector<std::pair<double, int>> found;
    {
      std::unordered_set<int> visited;
      using Cand = std::pair<double, int>;
      std::priority_queue<Cand, std::vector<Cand>, std::greater<>> frontier;
      std::priority_queue<Cand> best;  // max-heap, keeps ef_build closest
      auto push = [&](int node) {
        if (!visited.insert(node).second) return;
        const double d = (index.augmented.row(node) - v).squaredNorm();
        if (int(best.size()) < ef_build || d < best.top().first) {
          frontier.push({d, node});
          best.push({d, node});
          if (int(best.size()) > ef_build) best.pop();
        }
      };
      push(0);
      const int extra_entry = int(rng.uniform_int(std::uint64_t(i)));
      push(extra_entry);
      while (!frontier.empty()) {
        auto [d, node] = frontier.top();
        frontier.pop();
        if (int(best.size()) >= ef_build && d > best.top().first) break;
        for (int nb : index.neighbors[std::size_t(node)]) push(nb);
      }
      while (!best.empty()) {
        found.push_back(best.top());
        best.pop();
      }
      std::sort(found.begin(), found.end());
    }
    for (int peer : select_diverse(found)) {
      index.neighbors[std::size_t(i)].push_back(peer);
      index.neighbors[std::size_t(peer)].push_back(i);
      prune(peer);
    }
  }
  return index;
}

TopLResult MipsIndex::query(const Eigen::VectorXd& q, int l) const {
  if (l < 1) throw std::invalid_argument("mips query: l >= 1");
  const int e = int(augmented.cols()) - 1;
  if (q.size() != e) throw std::invalid_argument("mips query: dimension mismatch");
  Eigen::RowVectorXd aq(e + 1);
  aq.head(e) = q.transpose();
  aq(e) = 0.0;

  std::unordered_set<int> visited;
  using Cand = std::pair<double, int>;
  std::priority_queue<Cand, std::vector<Cand>, std::greater<>> frontier;
  std::priority_queue<Cand> best;
  auto push = [&](int node) {
    if (!visited.insert(node).second) return;
    const double d = (augmented.row(node) - aq).squaredNorm();
    if (int(best.size()) < ef_search || d < best.top().first) {
      frontier.push({d, node});
      best.push({d, node});
      if (int(best.size()) > ef_search) best.pop();
    }
  };
  // a few spread-out entry points reduce the chance of a bad local start
  const int n_entries = std::min(4, int(augmented.rows()));
  for (int k = 0; k < n_entries; ++k)
    push(int(std::int64_t(k) * augmented.rows() / n_entries));
  while (!frontier.empty()) {
    auto [d, node] = frontier.top();
    frontier.pop();
    if (int(best.size()) >= ef_search && d > best.top().first) break;
    for (int nb : neighbors[std::size_t(node)]) push(nb);
  }
  std::vector<std::pair<int, double>> scored;
  scored.reserve(best.size());
  while (!best.empty()) {
    const int id = best.top().second;
    best.pop();
    scored.push_back({id, augmented.row(id).head(e).dot(q.transpose())});
  }
  return select_top(scored, l);
}

TopLResult topl_indexed(const CandidateIndex& index, const Eigen::VectorXd& query,
                        int l, std::uint64_t expected_hash) {
  if (!index.mips) throw std::invalid_argument("topl_indexed: index not built");
  if (expected_hash != 0 && expected_hash != index.model_hash)
    throw std::runtime_error("topl_indexed: stale index (model hash mismatch)");
  return index.mips->query(query, l);
}

Eigen::VectorXd query_vector(const Model& model, const std::vector<int>& prefix) {
  if (prefix.empty()) throw std::invalid_argument("query_vector: empty prefix");
  Batch b;
  b.n = 1;
  b.t = int(prefix.size());
  b.items = prefix;
  b.lengths = {b.t};
  b.targets = {0};
  b.pad_id = model.cfg.vocab_size;
  ad::Tape t;
  Rng rng(0);
  ForwardResult f = model.forward(t, b, ad::Mode::eval, rng);
  Eigen::VectorXd s = f.session->value.row(0).transpose();
  if (model.cfg.needs_projection()) {
    const ad::Mat& w = model.params.at("dec.W");
    s = (s.transpose() * w).transpose();
  }
  return s;
}

}  // namespace sbr
