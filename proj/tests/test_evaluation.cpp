#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sbr/evaluation.hpp"

using namespace sbr;

TEST_CASE("rank_of_target matches a stable argsort oracle") {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 3 + int(rng.uniform_int(20));
    Eigen::VectorXd scores(m);
    for (int i = 0; i < m; ++i)
      scores[i] = double(rng.uniform_int(5));  // duplicates guaranteed
    const int target = int(rng.uniform_int(m));
    // oracle: stable sort by (-score, id), find target's position
    std::vector<int> idx(static_cast<std::size_t>(m), 0);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    const int want = int(std::find(idx.begin(), idx.end(), target) - idx.begin()) + 1;
    CHECK(*rank_of_target(scores, target).rank == want);
  }
}

TEST_CASE("rank_of_target hand cases") {
  Eigen::VectorXd s(4);
  s << 1.0, 3.0, 2.0, 3.0;
  CHECK(*rank_of_target(s, 1).rank == 1);  // tied top, lowest id wins
  CHECK(*rank_of_target(s, 3).rank == 2);
  CHECK(*rank_of_target(s, 2).rank == 3);
  CHECK(*rank_of_target(s, 0).rank == 4);
  CHECK_THROWS_AS(rank_of_target(s, 4), std::out_of_range);
  CHECK_THROWS_AS(rank_of_target(s, -1), std::out_of_range);
}

TEST_CASE("metrics_at_k hand values") {
  std::vector<RankResult> ranks = {{1}, {4}, {25}};
  MetricReport r = metrics_at_k(ranks, 20);
  CHECK(r.hr_at_k == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(r.mrr_at_k == doctest::Approx((1.0 + 0.25) / 3).epsilon(1e-12));
  CHECK(r.samples == 3);
  CHECK(r.k == 20);

  // unscorable sample counts in the denominator only
  std::vector<RankResult> with_miss = {{1}, {std::nullopt}};
  MetricReport rm = metrics_at_k(with_miss, 20);
  CHECK(rm.hr_at_k == doctest::Approx(0.5));
  CHECK(rm.mrr_at_k == doctest::Approx(0.5));
  CHECK_THROWS_AS(metrics_at_k({}, 20), std::invalid_argument);
}

TEST_CASE("mrr never exceeds hr and metrics respect monotone transforms") {
  Rng rng(2);
  std::vector<RankResult> ranks;
  for (int i = 0; i < 50; ++i) ranks.push_back({1 + int(rng.uniform_int(40))});
  MetricReport r = metrics_at_k(ranks, 20);
  CHECK(r.mrr_at_k <= r.hr_at_k);

  // a strictly increasing transform of the scores keeps every rank
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd s(8);
    for (int i = 0; i < 8; ++i) s[i] = rng.uniform(-2, 2);
    Eigen::VectorXd mono = (2.0 * s).array().exp();
    for (int tgt = 0; tgt < 8; ++tgt)
      CHECK(*rank_of_target(s, tgt).rank == *rank_of_target(mono, tgt).rank);
  }
}

namespace {

// train: {0,1,0}, {1,2}, {0,2}; val: {0,1}; test: {2,0}
SessionCorpus fixture() {
  SessionCorpus c;
  c.item_keys = {"a", "b", "c"};
  c.sessions = {{0, 1, 0}, {1, 2}, {0, 2}, {0, 1}, {2, 0}};
  c.start_times = {0, 1, 2, 3, 4};
  c.splits = {Split::train, Split::train, Split::train, Split::validation, Split::test};
  return c;
}

}  // namespace

TEST_CASE("pop counts train events only") {
  SessionCorpus c = fixture();
  Eigen::VectorXd pop = pop_scores(c);
  CHECK(pop[0] == 3.0);
  CHECK(pop[1] == 2.0);
  CHECK(pop[2] == 2.0);

  SessionCorpus empty = c;
  for (auto& s : empty.splits) s = Split::test;
  CHECK_THROWS_AS(pop_scores(empty), std::runtime_error);

  // without split labels every session counts
  SessionCorpus unsplit = c;
  unsplit.splits.clear();
  Eigen::VectorXd all = pop_scores(unsplit);
  CHECK(all[0] == 5.0);
}

TEST_CASE("spop prefers in-prefix items, pop breaks ties") {
  SessionCorpus c = fixture();
  Eigen::VectorXd pop = pop_scores(c);
  Eigen::VectorXd s = spop_scores({1, 1, 2}, pop);
  // item 1 twice in prefix, item 2 once, item 0 absent
  CHECK(s[1] > s[2]);
  CHECK(s[2] > s[0]);
  // exact values: counts + pop / (pop_max + 1)
  CHECK(s[1] == doctest::Approx(2.0 + 2.0 / 4.0).epsilon(1e-12));
  CHECK(s[2] == doctest::Approx(1.0 + 2.0 / 4.0).epsilon(1e-12));
  CHECK(s[0] == doctest::Approx(3.0 / 4.0).epsilon(1e-12));
  // tie-break never outranks a count: absent item with max pop stays below
  Eigen::VectorXd t = spop_scores({1}, pop);
  CHECK(t[1] > t[0]);
  CHECK_THROWS_AS(spop_scores({}, pop), std::invalid_argument);
}

TEST_CASE("itemknn cosine oracle on the fixture") {
  SessionCorpus c = fixture();
  ItemKnn knn(c);
  // train sessions by id: 0:{0,1}, 1:{1,2}, 2:{0,2}
  // item 0 in {0,2}; item 1 in {0,1}; item 2 in {1,2}
  Eigen::VectorXd s = knn.scores(0);
  CHECK(s[0] == 0.0);  // self excluded
  CHECK(s[1] == doctest::Approx(1.0 / 2.0).epsilon(1e-12));  // |{0}| / sqrt(2*2)
  CHECK(s[2] == doctest::Approx(1.0 / 2.0).epsilon(1e-12));  // |{2}| / sqrt(2*2)
  CHECK(knn.cold_queries() == 0);
}

TEST_CASE("itemknn duplicate items count a session once, cold queries are tracked") {
  SessionCorpus c;
  c.item_keys = {"a", "b", "cold"};
  c.sessions = {{0, 0, 0, 1}, {0, 1}};
  c.start_times = {0, 1};
  ItemKnn knn(c);
  // both items co-occur in both sessions: cosine exactly 1
  CHECK(knn.scores(0)[1] == doctest::Approx(1.0).epsilon(1e-12));
  Eigen::VectorXd cold = knn.scores(2);
  CHECK(cold.cwiseAbs().maxCoeff() == 0.0);
  CHECK(knn.cold_queries() == 1);
}

TEST_CASE("evaluate_baseline end to end") {
  SessionCorpus c = fixture();
  auto test_samples = samples_for_split(c, Split::test);
  REQUIRE(test_samples.size() == 1);  // {2} -> 0
  MetricReport pop = evaluate_baseline(BaselineKind::pop, c, test_samples, 1);
  // item 0 is the most popular, target is 0 -> perfect HR@1
  CHECK(pop.hr_at_k == 1.0);
  CHECK(pop.mrr_at_k == 1.0);
  MetricReport spop = evaluate_baseline(BaselineKind::spop, c, test_samples, 1);
  // prefix {2} promotes item 2; target 0 drops to rank 2
  CHECK(spop.hr_at_k == 0.0);
  MetricReport knn = evaluate_baseline(BaselineKind::itemknn, c, test_samples, 2);
  CHECK(knn.samples == 1);
  CHECK_THROWS_AS(evaluate_baseline(BaselineKind::pop, c, {}, 1), std::invalid_argument);
  CHECK(parse_baseline("spop") == BaselineKind::spop);
  CHECK_THROWS_AS(parse_baseline("random"), std::invalid_argument);
}

TEST_CASE("evaluate_model agrees with manual per-sample ranking") {
  SessionCorpus c = fixture();
  ModelConfig mc;
  mc.vocab_size = c.vocab_size();
  mc.embed_dim = mc.hidden_dim = 4;
  Rng init(5);
  Model m = Model::init(mc, init);
  auto samples = samples_for_split(c, Split::train);
  MetricReport got = evaluate_model(m, samples, c.pad_id(), 2, 2);
  // oracle: one sample at a time, any batch size must agree
  std::vector<RankResult> ranks;
  for (const auto& s : samples) {
    Batch b;
    b.n = 1;
    b.t = int(s.input.size());
    b.items = s.input;
    b.lengths = {b.t};
    b.targets = {s.target};
    b.pad_id = c.pad_id();
    ad::Tape t;
    Rng rng(0);
    auto f = m.forward(t, b, ad::Mode::eval, rng);
    ranks.push_back(rank_of_target(f.scores->value.row(0).transpose(), s.target));
  }
  MetricReport want = metrics_at_k(ranks, 2);
  CHECK(got.hr_at_k == doctest::Approx(want.hr_at_k).epsilon(1e-12));
  CHECK(got.mrr_at_k == doctest::Approx(want.mrr_at_k).epsilon(1e-12));
  CHECK(got.samples == want.samples);

  MetricReport again = evaluate_model(m, samples, c.pad_id(), 2, 2);
  CHECK(got.hr_at_k == again.hr_at_k);
  CHECK(got.mrr_at_k == again.mrr_at_k);
}
