#include "sbr/tensor.hpp"

#include <cmath>
#include <limits>

namespace sbr::ad {

Activation parse_activation(const std::string& name) {
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  throw std::invalid_argument("unknown activation: " + name);
}

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite())
    throw std::runtime_error(std::string("non-finite values in ") + what);
}

Var Tape::leaf(Mat v, bool requires_grad) {
  check_finite(v, "leaf tensor");
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = requires_grad;
  nodes_.push_back(n);
  return n;
}

Var Tape::record(Mat v, std::function<void(const Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->backprop = std::move(backprop);
  nodes_.push_back(n);
  return n;
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw std::logic_error("backward on empty tape");
  if (loss->rows() != 1 || loss->cols() != 1)
    throw std::invalid_argument("backward requires a scalar loss");
  for (auto& n : nodes_) n->grad.resize(0, 0);
  loss->grad = Mat::Ones(1, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(n);
  }
}

void accumulate(const Var& parent, const Mat& g) {
  if (parent->grad.size() == 0)
    parent->grad = Mat::Zero(parent->rows(), parent->cols());
  parent->grad += g;
}

static void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Var matmul(Tape& t, const Var& a, const Var& b) {
  require(a->cols() == b->rows(), "matmul: inner extents mismatch");
  Mat v = a->value * b->value;
  return t.record(std::move(v), [a, b](const Node& out) {
    accumulate(a, out.grad * b->value.transpose());
    accumulate(b, a->value.transpose() * out.grad);
  });
}

Var add(Tape& t, const Var& a, const Var& b) {
  require(a->rows() == b->rows() && a->cols() == b->cols(), "add: shape mismatch");
  return t.record(a->value + b->value, [a, b](const Node& out) {
    accumulate(a, out.grad);
    accumulate(b, out.grad);
  });
}

Var sub(Tape& t, const Var& a, const Var& b) {
  require(a->rows() == b->rows() && a->cols() == b->cols(), "sub: shape mismatch");
  return t.record(a->value - b->value, [a, b](const Node& out) {
    accumulate(a, out.grad);
    accumulate(b, -out.grad);
  });
}

Var mul(Tape& t, const Var& a, const Var& b) {
  require(a->rows() == b->rows() && a->cols() == b->cols(), "mul: shape mismatch");
  return t.record(a->value.cwiseProduct(b->value), [a, b](const Node& out) {
    accumulate(a, out.grad.cwiseProduct(b->value));
    accumulate(b, out.grad.cwiseProduct(a->value));
  });
}

Var scale(Tape& t, const Var& a, double k) {
  return t.record(a->value * k, [a, k](const Node& out) {
    accumulate(a, out.grad * k);
  });
}

Var add_const(Tape& t, const Var& a, double k) {
  return t.record(a->value.array() + k, [a](const Node& out) {
    accumulate(a, out.grad);
  });
}

Var transpose(Tape& t, const Var& a) {
  return t.record(a->value.transpose(), [a](const Node& out) {
    accumulate(a, out.grad.transpose());
  });
}

Var add_rowvec(Tape& t, const Var& x, const Var& r) {
  require(r->rows() == 1 && r->cols() == x->cols(), "add_rowvec: bad row vector");
  Mat v = x->value.rowwise() + r->value.row(0);
  return t.record(std::move(v), [x, r](const Node& out) {
    accumulate(x, out.grad);
    accumulate(r, out.grad.colwise().sum());
  });
}

Var mul_rowvec(Tape& t, const Var& x, const Var& r) {
  require(r->rows() == 1 && r->cols() == x->cols(), "mul_rowvec: bad row vector");
  Mat v = x->value.array().rowwise() * r->value.row(0).array();
  return t.record(std::move(v), [x, r](const Node& out) {
    accumulate(x, Mat(out.grad.array().rowwise() * r->value.row(0).array()));
    accumulate(r, Mat(out.grad.cwiseProduct(x->value).colwise().sum()));
  });
}

Var mul_colvec(Tape& t, const Var& x, const Var& c) {
  require(c->cols() == 1 && c->rows() == x->rows(), "mul_colvec: bad column vector");
  Mat v = x->value.array().colwise() * c->value.col(0).array();
  return t.record(std::move(v), [x, c](const Node& out) {
    accumulate(x, Mat(out.grad.array().colwise() * c->value.col(0).array()));
    accumulate(c, Mat(out.grad.cwiseProduct(x->value).rowwise().sum()));
  });
}

Var concat_cols(Tape& t, const Var& a, const Var& b) {
  require(a->rows() == b->rows(), "concat_cols: row mismatch");
  Mat v(a->rows(), a->cols() + b->cols());
  v << a->value, b->value;
  const Eigen::Index ca = a->cols();
  return t.record(std::move(v), [a, b, ca](const Node& out) {
    accumulate(a, out.grad.leftCols(ca));
    accumulate(b, out.grad.rightCols(out.grad.cols() - ca));
  });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require(p->cols() == parts[0]->cols(), "concat_rows: column mismatch");
    rows += p->rows();
  }
  Mat v(rows, parts[0]->cols());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleRows(at, p->rows()) = p->value;
    at += p->rows();
  }
  return t.record(std::move(v), [parts](const Node& out) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      accumulate(p, out.grad.middleRows(at, p->rows()));
      at += p->rows();
    }
  });
}

Var row(Tape& t, const Var& a, Eigen::Index i) {
  require(i >= 0 && i < a->rows(), "row: index out of range");
  return t.record(a->value.row(i), [a, i](const Node& out) {
    Mat g = Mat::Zero(a->rows(), a->cols());
    g.row(i) = out.grad;
    accumulate(a, g);
  });
}

Var top_rows(Tape& t, const Var& a, Eigen::Index n) {
  require(n >= 0 && n <= a->rows(), "top_rows: bad count");
  return t.record(a->value.topRows(n), [a, n](const Node& out) {
    Mat g = Mat::Zero(a->rows(), a->cols());
    g.topRows(n) = out.grad;
    accumulate(a, g);
  });
}

static double softplus_scalar(double x) {
  // linear fallback for large x avoids overflow in exp
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

Var sigmoid(Tape& t, const Var& a) {
  Mat v = a->value.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  Mat vc = v;
  return t.record(std::move(v), [a, vc](const Node& out) {
    accumulate(a, Mat(out.grad.array() * vc.array() * (1.0 - vc.array())));
  });
}

Var tanh_op(Tape& t, const Var& a) {
  Mat v = a->value.array().tanh();
  Mat vc = v;
  return t.record(std::move(v), [a, vc](const Node& out) {
    accumulate(a, Mat(out.grad.array() * (1.0 - vc.array().square())));
  });
}

Var relu(Tape& t, const Var& a) {
  Mat v = a->value.cwiseMax(0.0);
  return t.record(std::move(v), [a](const Node& out) {
    Mat g = (a->value.array() > 0.0).cast<double>();
    accumulate(a, Mat(out.grad.cwiseProduct(g)));
  });
}

Var softplus(Tape& t, const Var& a) {
  Mat v = a->value.unaryExpr(&softplus_scalar);
  return t.record(std::move(v), [a](const Node& out) {
    Mat s = a->value.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    accumulate(a, Mat(out.grad.cwiseProduct(s)));
  });
}

Var activation(Tape& t, const Var& a, Activation kind) {
  switch (kind) {
    case Activation::sigmoid: return sigmoid(t, a);
    case Activation::tanh: return tanh_op(t, a);
    case Activation::relu: return relu(t, a);
    case Activation::softplus: return softplus(t, a);
  }
  throw std::invalid_argument("unknown activation kind");
}

Var log_op(Tape& t, const Var& a) {
  Mat v = a->value.array().log();
  return t.record(std::move(v), [a](const Node& out) {
    accumulate(a, Mat(out.grad.array() / a->value.array()));
  });
}

Var exp_op(Tape& t, const Var& a) {
  Mat v = a->value.array().exp();
  Mat vc = v;
  return t.record(std::move(v), [a, vc](const Node& out) {
    accumulate(a, Mat(out.grad.cwiseProduct(vc)));
  });
}

static Mat softmax_rows_value(const Mat& x) {
  Mat v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    Eigen::ArrayXd e = (x.row(i).array() - m).exp();
    v.row(i) = e / e.sum();
  }
  return v;
}

Var softmax_rows(Tape& t, const Var& a) {
  require(a->cols() >= 1, "softmax_rows: empty rows");
  Mat v = softmax_rows_value(a->value);
  Mat vc = v;
  return t.record(std::move(v), [a, vc](const Node& out) {
    Mat g(vc.rows(), vc.cols());
    for (Eigen::Index i = 0; i < vc.rows(); ++i) {
      const double dot = out.grad.row(i).dot(vc.row(i));
      g.row(i) = (vc.row(i).array() * (out.grad.row(i).array() - dot)).matrix();
    }
    accumulate(a, g);
  });
}

Var log_softmax_rows(Tape& t, const Var& a) {
  require(a->cols() >= 1, "log_softmax_rows: empty rows");
  Mat v(a->rows(), a->cols());
  for (Eigen::Index i = 0; i < a->rows(); ++i) {
    const double m = a->value.row(i).maxCoeff();
    const double lse = m + std::log((a->value.row(i).array() - m).exp().sum());
    v.row(i) = a->value.row(i).array() - lse;
  }
  Mat vc = v;
  return t.record(std::move(v), [a, vc](const Node& out) {
    Mat g(vc.rows(), vc.cols());
    for (Eigen::Index i = 0; i < vc.rows(); ++i) {
      const double total = out.grad.row(i).sum();
      g.row(i) = out.grad.row(i).array() - total * vc.row(i).array().exp();
    }
    accumulate(a, g);
  });
}

Var sum(Tape& t, const Var& a) {
  Mat v(1, 1);
  v(0, 0) = a->value.sum();
  return t.record(std::move(v), [a](const Node& out) {
    accumulate(a, Mat(Mat::Constant(a->rows(), a->cols(), out.grad(0, 0))));
  });
}

Var mean(Tape& t, const Var& a) {
  const double inv = 1.0 / double(a->value.size());
  Mat v(1, 1);
  v(0, 0) = a->value.sum() * inv;
  return t.record(std::move(v), [a, inv](const Node& out) {
    accumulate(a, Mat(Mat::Constant(a->rows(), a->cols(), out.grad(0, 0) * inv)));
  });
}

Var gather_rows(Tape& t, const Var& table, const std::vector<int>& indices) {
  Mat v(Eigen::Index(indices.size()), table->cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= table->rows())
      throw std::out_of_range("gather_rows: index out of range");
    v.row(Eigen::Index(i)) = table->value.row(indices[i]);
  }
  return t.record(std::move(v), [table, indices](const Node& out) {
    Mat g = Mat::Zero(table->rows(), table->cols());
    for (std::size_t i = 0; i < indices.size(); ++i)
      g.row(indices[i]) += out.grad.row(Eigen::Index(i));
    accumulate(table, g);
  });
}

Var dropout(Tape& t, const Var& a, double ratio, Mode mode, Rng& rng) {
  if (ratio < 0.0 || ratio >= 1.0)
    throw std::invalid_argument("dropout: ratio must be in [0, 1)");
  if (mode == Mode::eval || ratio == 0.0) {
    // identity pass-through keeps eval bit-exact
    return t.record(a->value, [a](const Node& out) { accumulate(a, out.grad); });
  }
  const double keep_scale = 1.0 / (1.0 - ratio);
  Mat mask(a->rows(), a->cols());
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j)
      mask(i, j) = rng.bernoulli(ratio) ? 0.0 : keep_scale;
  return t.record(a->value.cwiseProduct(mask), [a, mask](const Node& out) {
    accumulate(a, Mat(out.grad.cwiseProduct(mask)));
  });
}

Var gather_cols_per_row(Tape& t, const Var& x, const std::vector<int>& targets) {
  require(Eigen::Index(targets.size()) == x->rows(), "gather_cols_per_row: size");
  Mat v(x->rows(), 1);
  for (Eigen::Index i = 0; i < x->rows(); ++i) {
    if (targets[i] < 0 || targets[i] >= x->cols())
      throw std::out_of_range("gather_cols_per_row: target out of range");
    v(i, 0) = x->value(i, targets[i]);
  }
  return t.record(std::move(v), [x, targets](const Node& out) {
    Mat g = Mat::Zero(x->rows(), x->cols());
    for (Eigen::Index i = 0; i < x->rows(); ++i)
      g(i, targets[i]) = out.grad(i, 0);
    accumulate(x, g);
  });
}

Var cross_entropy_logits(Tape& t, const Var& logits, const std::vector<int>& targets) {
  require(Eigen::Index(targets.size()) == logits->rows(), "cross_entropy: batch size");
  const Eigen::Index n = logits->rows();
  Mat probs = softmax_rows_value(logits->value);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (targets[i] < 0 || targets[i] >= logits->cols())
      throw std::out_of_range("cross_entropy: target out of range");
    const double m = logits->value.row(i).maxCoeff();
    const double lse = m + std::log((logits->value.row(i).array() - m).exp().sum());
    loss += lse - logits->value(i, targets[i]);
  }
  Mat v(1, 1);
  v(0, 0) = loss / double(n);
  return t.record(std::move(v), [logits, targets, probs, n](const Node& out) {
    Mat g = probs;
    for (Eigen::Index i = 0; i < n; ++i) g(i, targets[i]) -= 1.0;
    accumulate(logits, Mat(g * (out.grad(0, 0) / double(n))));
  });
}

Var nll_from_log_probs(Tape& t, const Var& log_probs, const std::vector<int>& targets) {
  Var picked = gather_cols_per_row(t, log_probs, targets);
  return scale(t, mean(t, picked), -1.0);
}

Var log_mix(Tape& t, const std::vector<Var>& comp, const Var& log_pi) {
  require(!comp.empty(), "log_mix: no components");
  const Eigen::Index k = Eigen::Index(comp.size());
  require(log_pi->cols() == k && log_pi->rows() == comp[0]->rows(), "log_mix: pi shape");
  const Eigen::Index n = comp[0]->rows(), m = comp[0]->cols();
  // out = log sum_k exp(log_pi[:,k] + comp_k), stabilized by the max term
  Mat mx = Mat::Constant(n, m, -std::numeric_limits<double>::infinity());
  for (Eigen::Index c = 0; c < k; ++c)
    mx = mx.cwiseMax(Mat(comp[c]->value.array().colwise() + log_pi->value.col(c).array()));
  Mat acc = Mat::Zero(n, m);
  for (Eigen::Index c = 0; c < k; ++c)
    acc += Mat(((comp[c]->value.array().colwise() + log_pi->value.col(c).array()) - mx.array()).exp());
  Mat v = mx + Mat(acc.array().log());
  Mat vc = v;
  return t.record(std::move(v), [comp, log_pi, vc, k](const Node& out) {
    for (Eigen::Index c = 0; c < k; ++c) {
      // responsibility of component c at each (j, i)
      Mat w = ((comp[c]->value.array().colwise() + log_pi->value.col(c).array()) -
               vc.array()).exp();
      Mat gc = out.grad.cwiseProduct(w);
      accumulate(comp[c], gc);
      accumulate(log_pi, [&] {
        Mat g = Mat::Zero(log_pi->rows(), log_pi->cols());
        g.col(c) = gc.rowwise().sum();
        return g;
      }());
    }
  });
}

double grad_check(const std::function<Var(Tape&, const Var&)>& f, const Mat& x,
                  double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  Mat analytic;
  {
    Tape t;
    Var leaf = t.leaf(x, true);
    Var loss = f(t, leaf);
    if (loss->rows() != 1 || loss->cols() != 1)
      throw std::invalid_argument("grad_check: f must return a scalar");
    t.backward(loss);
    analytic = leaf->grad.size() ? leaf->grad : Mat(Mat::Zero(x.rows(), x.cols()));
  }
  auto eval = [&](const Mat& at) {
    Tape t;
    Var leaf = t.leaf(at, false);
    return f(t, leaf)->value(0, 0);
  };
  double worst = 0.0;
  Mat xp = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double orig = xp(i, j);
      xp(i, j) = orig + eps;
      const double fp = eval(xp);
      xp(i, j) = orig - eps;
      const double fm = eval(xp);
      xp(i, j) = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ga = analytic(i, j);
      const double denom = std::max(1e-8, std::abs(ga) + std::abs(fd));
      worst = std::max(worst, std::abs(ga - fd) / denom);
    }
  }
  return worst;
}

}  // namespace sbr::ad
