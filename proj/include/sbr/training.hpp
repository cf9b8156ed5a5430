#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sbr/dataset.hpp"
#include "sbr/evaluation.hpp"
#include "sbr/model.hpp"

namespace sbr {

struct TrainConfig {
  ModelConfig model;
  int batch_size = 200;
  double lr = 1e-3;
  int max_epochs = 30;
  int patience = 3;
  std::uint64_t seed = 1;
  int metric_k = 20;
  double clip_norm = 0.0;  // 0 = off
  int max_prefix_len = 20;
};

// Standard bias-corrected Adam; no weight decay, no schedule.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(ParamStore& params,
            const std::map<std::string, ad::Mat>& grads);
  int steps() const { return step_; }

  double lr, beta1, beta2, eps;

 private:
  std::map<std::string, ad::Mat> m_, v_;
  int step_ = 0;
};

// -log(probs[target]) on explicit probabilities. Training itself uses
// the fused log-space path inside train_epoch.
double cross_entropy(const Eigen::VectorXd& probs, int target);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_hr = 0.0;
  double val_mrr = 0.0;
  double wall_ms = 0.0;
};

struct TrainRun {
  TrainConfig cfg;
  std::vector<EpochRecord> log;
  ParamStore best_by_hr, best_by_mrr;
  double best_val_hr = -1.0, best_val_mrr = -1.0;
  int best_epoch_hr = -1, best_epoch_mrr = -1;
  MetricReport test_by_hr, test_by_mrr;
};

// One shuffled pass in train mode; returns the mean per-sample loss.
double train_epoch(Model& model, const std::vector<Sample>& samples, Adam& opt,
                   Rng& rng, int batch_size, int pad_id, double clip_norm = 0.0);

// Full protocol: per-epoch validation HR@k and MRR@k, an independent
// best checkpoint per metric, early stop when neither improves for
// `patience` epochs, test metrics from each metric's own best
// checkpoint.
TrainRun fit(const TrainConfig& cfg, const SessionCorpus& corpus,
             const std::function<void(const EpochRecord&)>& on_epoch = nullptr);

struct GridResult {
  std::vector<TrainRun> runs;
  std::vector<TrainConfig> configs;
  std::size_t best = 0;  // argmax validation HR
};

GridResult grid_search(const TrainConfig& base, const SessionCorpus& corpus,
                       const std::vector<std::function<void(TrainConfig&)>>& grid);

struct ReplicateResult {
  std::vector<TrainRun> runs;
  double hr_mean = 0.0, hr_std = 0.0;
  double mrr_mean = 0.0, mrr_std = 0.0;
};

ReplicateResult run_replicates(const TrainConfig& cfg, const SessionCorpus& corpus,
                               int n_seeds = 5);

}  // namespace sbr
