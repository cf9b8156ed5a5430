#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sbr/retrieval.hpp"

using namespace sbr;
using namespace sbr::ad;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-scale, scale);
  return m;
}

Model make_model(DecoderKind dk, EncoderKind ek = EncoderKind::gru4rec) {
  ModelConfig cfg;
  cfg.decoder = dk;
  cfg.encoder = ek;
  cfg.vocab_size = 12;
  cfg.embed_dim = cfg.hidden_dim = 5;
  cfg.session_dropout = cfg.encoder_dropout = cfg.candidate_dropout = 0.0;
  Rng init(3);
  return Model::init(cfg, init);
}

std::vector<int> argsort_top(const Eigen::VectorXd& scores, int l) {
  std::vector<int> idx(std::size_t(scores.size()), 0);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(std::size_t(std::min<int>(l, int(idx.size()))));
  return idx;
}

}  // namespace

TEST_CASE("precompute_candidates: linear keeps the raw table") {
  Model m = make_model(DecoderKind::linear);
  CandidateIndex idx = precompute_candidates(m);
  CHECK(idx.matrix.rows() == 12);  // pad row dropped
  CHECK(idx.matrix.cols() == 5);
  CHECK((idx.matrix - m.params.at("emb").topRows(12)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(idx.model_hash == m.param_hash());
  CHECK(idx.built_at > 0);
}

TEST_CASE("precompute_candidates: decoupled bakes in the transform") {
  Model m = make_model(DecoderKind::decoupled);
  CandidateIndex idx = precompute_candidates(m);
  const Mat& a = m.params.at("dec.ff.A");
  const Mat& b = m.params.at("dec.ff.b");
  Mat pre = m.params.at("emb").topRows(12) * a.transpose();
  pre.rowwise() += b.row(0);
  for (Eigen::Index i = 0; i < pre.rows(); ++i)
    for (Eigen::Index j = 0; j < pre.cols(); ++j) {
      const double x = pre(i, j);
      const double want = x > 30.0 ? x : std::log1p(std::exp(x));
      CHECK(idx.matrix(i, j) == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("precompute_candidates rejects non-factorizable decoders") {
  CHECK_THROWS_AS(precompute_candidates(make_model(DecoderKind::mlp)),
                  std::invalid_argument);
  CHECK_THROWS_AS(precompute_candidates(make_model(DecoderKind::mos)),
                  std::invalid_argument);
}

TEST_CASE("retrieval scores equal the forward pass for both served decoders") {
  for (DecoderKind dk : {DecoderKind::linear, DecoderKind::decoupled}) {
    Model m = make_model(dk);
    CandidateIndex idx = precompute_candidates(m);
    std::vector<int> prefix = {1, 4, 7};
    Eigen::VectorXd q = query_vector(m, prefix);
    TopLResult top = topl_exact(q, idx, 12);

    Batch b;
    b.n = 1;
    b.t = 3;
    b.items = prefix;
    b.lengths = {3};
    b.targets = {0};
    b.pad_id = 12;
    Tape t;
    Rng rng(0);
    Eigen::VectorXd logits =
        m.forward(t, b, Mode::eval, rng).scores->value.row(0).transpose();
    for (const auto& [id, score] : top.items)
      CHECK(score == doctest::Approx(logits[id]).epsilon(1e-12));
  }
}

TEST_CASE("query_vector applies the projection when the decoder has one") {
  Model m = make_model(DecoderKind::linear, EncoderKind::narm);  // Ds = 2E
  REQUIRE(m.cfg.needs_projection());
  CandidateIndex idx = precompute_candidates(m);
  std::vector<int> prefix = {2, 9};
  Eigen::VectorXd q = query_vector(m, prefix);
  CHECK(q.size() == 5);
  Batch b;
  b.n = 1;
  b.t = 2;
  b.items = prefix;
  b.lengths = {2};
  b.targets = {0};
  b.pad_id = 12;
  Tape t;
  Rng rng(0);
  Eigen::VectorXd logits = m.forward(t, b, Mode::eval, rng).scores->value.row(0).transpose();
  TopLResult top = topl_exact(q, idx, 3);
  for (const auto& [id, score] : top.items)
    CHECK(score == doctest::Approx(logits[id]).epsilon(1e-12));
  CHECK_THROWS_AS(query_vector(m, {}), std::invalid_argument);
}

TEST_CASE("topl_exact equals a full argsort") {
  Rng rng(5);
  CandidateIndex idx;
  idx.matrix = random_mat(rng, 50, 6);
  for (int trial = 0; trial < 30; ++trial) {
    Eigen::VectorXd q = random_mat(rng, 1, 6).row(0).transpose();
    Eigen::VectorXd scores = idx.matrix * q;
    for (int l : {1, 5, 50}) {
      TopLResult top = topl_exact(q, idx, l);
      auto want = argsort_top(scores, l);
      REQUIRE(top.items.size() == want.size());
      for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(top.items[i].first == want[std::size_t(i)]);
        CHECK(top.items[i].second == scores[want[i]]);
      }
    }
  }
}

TEST_CASE("topl_exact tie handling and edge cases") {
  CandidateIndex idx;
  idx.matrix = Mat::Ones(4, 2);  // every score identical
  Eigen::VectorXd q(2);
  q << 1, 1;
  TopLResult top = topl_exact(q, idx, 3);
  REQUIRE(top.items.size() == 3);
  CHECK(top.items[0].first == 0);
  CHECK(top.items[1].first == 1);
  CHECK(top.items[2].first == 2);

  // l beyond m returns everything
  CHECK(topl_exact(q, idx, 100).items.size() == 4);
  CHECK_THROWS_AS(topl_exact(q, idx, 0), std::invalid_argument);
  Eigen::VectorXd bad(3);
  bad.setZero();
  CHECK_THROWS_AS(topl_exact(bad, idx, 1), std::invalid_argument);
}

TEST_CASE("mips augmentation equalizes norms") {
  Rng rng(7);
  Mat m = random_mat(rng, 40, 8, 2.0);
  MipsIndex idx = build_mips_index(m, 8, 32, 32);
  double max_norm = 0.0;
  for (int i = 0; i < 40; ++i) max_norm = std::max(max_norm, m.row(i).norm());
  CHECK(idx.max_norm == doctest::Approx(max_norm).epsilon(1e-12));
  for (int i = 0; i < 40; ++i)
    CHECK(std::abs(idx.augmented.row(i).norm() - max_norm) < 1e-9);
  CHECK((idx.augmented.leftCols(8) - m).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(build_mips_index(Mat(0, 3)), std::invalid_argument);
}

TEST_CASE("mips graph stays within degree bounds and single-point works") {
  Rng rng(8);
  Mat m = random_mat(rng, 100, 4);
  MipsIndex idx = build_mips_index(m, 6, 24, 24);
  // bidirectional insertion can briefly exceed degree on the newest node,
  // but pruning keeps every adjacency list near the bound
  for (const auto& nb : idx.neighbors) CHECK(int(nb.size()) <= 2 * 6);

  MipsIndex one = build_mips_index(random_mat(rng, 1, 4));
  Eigen::VectorXd q = random_mat(rng, 1, 4).row(0).transpose();
  TopLResult top = one.query(q, 5);
  REQUIRE(top.items.size() == 1);
  CHECK(top.items[0].first == 0);
}

TEST_CASE("indexed retrieval matches exact on a thousand candidates") {
  Rng rng(9);
  CandidateIndex idx;
  idx.matrix = random_mat(rng, 1000, 16);
  idx.mips = build_mips_index(idx.matrix, 16, 96, 96);
  int agree = 0, total = 0;
  double recall_sum = 0.0;
  const int n_queries = 50, l = 20;
  for (int trial = 0; trial < n_queries; ++trial) {
    Eigen::VectorXd q = random_mat(rng, 1, 16).row(0).transpose();
    TopLResult exact = topl_exact(q, idx, l);
    TopLResult approx = topl_indexed(idx, q, l);
    std::set<int> es, as;
    for (auto& [id, s] : exact.items) es.insert(id);
    for (auto& [id, s] : approx.items) as.insert(id);
    int inter = 0;
    for (int id : es) inter += as.count(id);
    recall_sum += double(inter) / double(l);
    agree += approx.items[0].first == exact.items[0].first;
    ++total;
  }
  CHECK(recall_sum / n_queries >= 0.99);
  CHECK(agree == total);
}

TEST_CASE("stale index guard") {
  Model m = make_model(DecoderKind::linear);
  CandidateIndex idx = precompute_candidates(m);
  idx.mips = build_mips_index(idx.matrix, 8, 32, 32);
  Eigen::VectorXd q = query_vector(m, {1, 2});
  CHECK_NOTHROW(topl_indexed(idx, q, 5));
  CHECK_NOTHROW(topl_indexed(idx, q, 5, idx.model_hash));
  CHECK_THROWS_AS(topl_indexed(idx, q, 5, idx.model_hash + 1), std::runtime_error);
  CandidateIndex no_graph = precompute_candidates(m);
  CHECK_THROWS_AS(topl_indexed(no_graph, q, 5), std::invalid_argument);
}

TEST_CASE("mips build is deterministic per seed") {
  Rng rng(10);
  Mat m = random_mat(rng, 200, 8);
  MipsIndex a = build_mips_index(m, 8, 48, 48, 11);
  MipsIndex b = build_mips_index(m, 8, 48, 48, 11);
  CHECK(a.neighbors == b.neighbors);
}
