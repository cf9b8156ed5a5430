#include "sbr/training.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace sbr {

using namespace ad;

Adam::Adam(double lr_, double beta1_, double beta2_, double eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_) {}

void Adam::step(ParamStore& params, const std::map<std::string, Mat>& grads) {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1, step_);
  const double bc2 = 1.0 - std::pow(beta2, step_);
  for (auto& [name, g] : grads) {
    if (!g.allFinite())
      throw std::runtime_error("adam: non-finite gradient for " + name);
    Mat& p = params.at(name);
    if (p.rows() != g.rows() || p.cols() != g.cols())
      throw std::invalid_argument("adam: gradient shape mismatch for " + name);
    auto mi = m_.find(name);
    if (mi == m_.end()) {
      m_[name] = Mat::Zero(p.rows(), p.cols());
      v_[name] = Mat::Zero(p.rows(), p.cols());
      mi = m_.find(name);
    }
    Mat& m = mi->second;
    Mat& v = v_[name];
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    Mat mhat = m / bc1;
    Mat vhat = v / bc2;
    p.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
  }
}

double cross_entropy(const Eigen::VectorXd& probs, int target) {
  if (target < 0 || target >= probs.size())
    throw std::out_of_range("cross_entropy: target out of range");
  return -std::log(probs[target]);
}

namespace {

std::map<std::string, Mat> collect_grads(const BoundParams& bound) {
  std::map<std::string, Mat> grads;
  for (const auto& [name, var] : bound.vars)
    if (var->grad.size() > 0) grads[name] = var->grad;
  return grads;
}

void clip_gradients(std::map<std::string, Mat>& grads, double max_norm) {
  if (max_norm <= 0.0) return;
  double sq = 0.0;
  for (const auto& [name, g] : grads) sq += g.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [name, g] : grads) g *= k;
  }
}

}  // namespace

double train_epoch(Model& model, const std::vector<Sample>& samples, Adam& opt,
                   Rng& rng, int batch_size, int pad_id, double clip_norm) {
  if (samples.empty()) throw std::invalid_argument("train_epoch: no samples");
  auto batches = make_batches(samples, batch_size, pad_id, &rng);
  double loss_sum = 0.0;
  std::int64_t count = 0;
  for (const auto& b : batches) {
    Tape t;
    ForwardResult f = model.forward(t, b, Mode::train, rng);
    Var loss = f.log_space ? nll_from_log_probs(t, f.scores, b.targets)
                           : cross_entropy_logits(t, f.scores, b.targets);
    const double lv = loss->value(0, 0);
    if (!std::isfinite(lv))
      throw std::runtime_error("train_epoch: non-finite loss, aborting run");
    t.backward(loss);
    auto grads = collect_grads(f.bound);
    clip_gradients(grads, clip_norm);
    opt.step(model.params, grads);
    loss_sum += lv * b.n;
    count += b.n;
  }
  return loss_sum / double(count);
}

TrainRun fit(const TrainConfig& cfg, const SessionCorpus& corpus,
             const std::function<void(const EpochRecord&)>& on_epoch) {
  auto train_samples = samples_for_split(corpus, Split::train, cfg.max_prefix_len);
  auto val_samples = samples_for_split(corpus, Split::validation, cfg.max_prefix_len);
  auto test_samples = samples_for_split(corpus, Split::test, cfg.max_prefix_len);
  if (train_samples.empty() || val_samples.empty() || test_samples.empty())
    throw std::runtime_error("fit: empty split");

  ModelConfig mc = cfg.model;
  mc.vocab_size = corpus.vocab_size();
  Rng rng(cfg.seed);
  Model model = Model::init(mc, rng);
  Adam opt(cfg.lr);

  TrainRun run;
  run.cfg = cfg;
  run.cfg.model = mc;
  int since_improvement = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double loss = train_epoch(model, train_samples, opt, rng, cfg.batch_size,
                                    corpus.pad_id(), cfg.clip_norm);
    MetricReport val = evaluate_model(model, val_samples, corpus.pad_id(), cfg.metric_k,
                                      cfg.batch_size);
    const auto end = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss;
    rec.val_hr = val.hr_at_k;
    rec.val_mrr = val.mrr_at_k;
    rec.wall_ms = std::chrono::duration<double, std::milli>(end - start).count();
    run.log.push_back(rec);
    if (on_epoch) on_epoch(rec);

    bool improved = false;
    if (val.hr_at_k > run.best_val_hr) {
      run.best_val_hr = val.hr_at_k;
      run.best_by_hr = model.params;
      run.best_epoch_hr = epoch;
      improved = true;
    }
    if (val.mrr_at_k > run.best_val_mrr) {
      run.best_val_mrr = val.mrr_at_k;
      run.best_by_mrr = model.params;
      run.best_epoch_mrr = epoch;
      improved = true;
    }
    since_improvement = improved ? 0 : since_improvement + 1;
    if (since_improvement >= cfg.patience) break;
  }

  Model probe;
  probe.cfg = mc;
  probe.params = run.best_by_hr;
  run.test_by_hr = evaluate_model(probe, test_samples, corpus.pad_id(), cfg.metric_k,
                                  cfg.batch_size);
  probe.params = run.best_by_mrr;
  run.test_by_mrr = evaluate_model(probe, test_samples, corpus.pad_id(), cfg.metric_k,
                                   cfg.batch_size);
  return run;
}

GridResult grid_search(const TrainConfig& base, const SessionCorpus& corpus,
                       const std::vector<std::function<void(TrainConfig&)>>& grid) {
  if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
  GridResult out;
  for (const auto& apply : grid) {
    TrainConfig cfg = base;
    apply(cfg);
    out.configs.push_back(cfg);
    out.runs.push_back(fit(cfg, corpus));
    if (out.runs.back().best_val_hr > out.runs[out.best].best_val_hr)
      out.best = out.runs.size() - 1;
  }
  return out;
}

ReplicateResult run_replicates(const TrainConfig& cfg, const SessionCorpus& corpus,
                               int n_seeds) {
  if (n_seeds < 1) throw std::invalid_argument("run_replicates: n_seeds >= 1");
  ReplicateResult out;
  for (int i = 0; i < n_seeds; ++i) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + std::uint64_t(i);
    out.runs.push_back(fit(c, corpus));
  }
  auto agg = [&](auto pick, double& mean, double& sd) {
    double s = 0.0;
    for (const auto& r : out.runs) s += pick(r);
    mean = s / double(n_seeds);
    double sq = 0.0;
    for (const auto& r : out.runs) sq += (pick(r) - mean) * (pick(r) - mean);
    sd = n_seeds > 1 ? std::sqrt(sq / double(n_seeds - 1)) : 0.0;
  };
  agg([](const TrainRun& r) { return r.test_by_hr.hr_at_k; }, out.hr_mean, out.hr_std);
  agg([](const TrainRun& r) { return r.test_by_mrr.mrr_at_k; }, out.mrr_mean, out.mrr_std);
  return out;
}

}  // namespace sbr
