#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sbr/rng.hpp"

namespace sbr::ad {

// Row-major to match the on-disk layout of every container format.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { sigmoid, tanh, relu, softplus };
Activation parse_activation(const std::string& name);

enum class Mode { train, eval };

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Mat value;
  Mat grad;  // sized lazily during backward
  bool requires_grad = false;
  // Adds this node's contribution to its parents' grads. Parents are
  // captured by the closure.
  std::function<void(const Node&)> backprop;

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

// Records every op in creation order; that order is topological by
// construction, so the reverse sweep needs no extra sorting.
class Tape {
 public:
  Var leaf(Mat v, bool requires_grad = false);
  Var record(Mat v, std::function<void(const Node&)> backprop);

  // Seeds a scalar loss with 1 and replays backprop rules in reverse.
  // Populates grad on every recorded node, including leaves.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Var> nodes_;
};

void accumulate(const Var& parent, const Mat& g);

// ---- ops -------------------------------------------------------------

Var matmul(Tape& t, const Var& a, const Var& b);
Var add(Tape& t, const Var& a, const Var& b);
Var sub(Tape& t, const Var& a, const Var& b);
Var mul(Tape& t, const Var& a, const Var& b);  // elementwise
Var scale(Tape& t, const Var& a, double k);
Var add_const(Tape& t, const Var& a, double k);
Var transpose(Tape& t, const Var& a);

// broadcasting helpers: r is 1xC, c is Rx1
Var add_rowvec(Tape& t, const Var& x, const Var& r);
Var mul_rowvec(Tape& t, const Var& x, const Var& r);
Var mul_colvec(Tape& t, const Var& x, const Var& c);

Var concat_cols(Tape& t, const Var& a, const Var& b);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var row(Tape& t, const Var& a, Eigen::Index i);
Var top_rows(Tape& t, const Var& a, Eigen::Index n);

Var activation(Tape& t, const Var& a, Activation kind);
Var sigmoid(Tape& t, const Var& a);
Var tanh_op(Tape& t, const Var& a);
Var relu(Tape& t, const Var& a);
Var softplus(Tape& t, const Var& a);
Var log_op(Tape& t, const Var& a);
Var exp_op(Tape& t, const Var& a);

Var softmax_rows(Tape& t, const Var& a);
Var log_softmax_rows(Tape& t, const Var& a);

Var sum(Tape& t, const Var& a);   // 1x1
Var mean(Tape& t, const Var& a);  // 1x1

// Row gather; backward scatter-adds into the table.
Var gather_rows(Tape& t, const Var& table, const std::vector<int>& indices);

// Inverted dropout: eval mode is the identity, train mode zeroes each
// element with probability `ratio` and scales survivors by 1/(1-ratio).
Var dropout(Tape& t, const Var& a, double ratio, Mode mode, Rng& rng);

// probs[j, targets[j]] gathered as a column vector (for losses on
// explicit probabilities).
Var gather_cols_per_row(Tape& t, const Var& x, const std::vector<int>& targets);

// Mean of -log softmax(logits)[j, target_j]; fused for stability.
Var cross_entropy_logits(Tape& t, const Var& logits, const std::vector<int>& targets);

// Mean of -log_probs[j, target_j].
Var nll_from_log_probs(Tape& t, const Var& log_probs, const std::vector<int>& targets);

// out[j,i] = log sum_k exp(log_pi[j,k] + comp[k][j,i]); the mixture rule
// in log space.
Var log_mix(Tape& t, const std::vector<Var>& comp, const Var& log_pi);

// ---- gradient checking ----------------------------------------------

// f builds a scalar loss from a leaf holding x on a fresh tape. Returns
// the max relative error between analytic and central-difference grads.
double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Mat& x,
                  double eps = 1e-5);

void check_finite(const Mat& m, const char* what);

}  // namespace sbr::ad
