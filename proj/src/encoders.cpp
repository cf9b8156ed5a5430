#include "sbr/encoders.hpp"

#include <stdexcept>
#include <unordered_map>

namespace sbr {

using namespace ad;

namespace {

// One gated update: z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
// n = tanh(x Wh + r (h Uh) + bh), h' = (1-z) n + z h.
Var gru_step(Tape& t, const GruCell& c, const Var& x, const Var& h) {
  Var z = sigmoid(t, add_rowvec(t, add(t, matmul(t, x, c.Wz), matmul(t, h, c.Uz)), c.bz));
  Var r = sigmoid(t, add_rowvec(t, add(t, matmul(t, x, c.Wr), matmul(t, h, c.Ur)), c.br));
  Var n = tanh_op(t, add_rowvec(t, add(t, matmul(t, x, c.Wh), mul(t, r, matmul(t, h, c.Uh))), c.bh));
  Var one_minus_z = add_const(t, scale(t, z, -1.0), 1.0);
  return add(t, mul(t, one_minus_z, n), mul(t, z, h));
}

Var masked_mix(Tape& t, const Var& mask, const Var& next, const Var& prev) {
  Var keep = add_const(t, scale(t, mask, -1.0), 1.0);
  return add(t, mul_colvec(t, next, mask), mul_colvec(t, prev, keep));
}

}  // namespace

std::vector<Var> gru_forward(Tape& t, const GruCell& cell, const std::vector<Var>& xs,
                             const std::vector<Var>& masks) {
  if (xs.empty()) throw std::invalid_argument("gru_forward: empty sequence");
  if (xs.size() != masks.size())
    throw std::invalid_argument("gru_forward: length mismatch");
  const Eigen::Index n = xs[0]->rows();
  const Eigen::Index d = cell.Uz->rows();
  Var h = t.leaf(Mat::Zero(n, d));
  std::vector<Var> states;
  states.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Var next = gru_step(t, cell, xs[i], h);
    h = masked_mix(t, masks[i], next, h);
    states.push_back(h);
  }
  return states;
}

Var narm_attention(Tape& t, const AttentionParams& p, const std::vector<Var>& states,
                   const std::vector<Var>& masks) {
  if (states.empty()) throw std::invalid_argument("narm_attention: no states");
  const Var& h_last = states.back();
  Var proj_last = matmul(t, h_last, p.W1);
  Var h_att;
  for (std::size_t i = 0; i < states.size(); ++i) {
    Var a = sigmoid(t, add_rowvec(t, add(t, proj_last, matmul(t, states[i], p.W2)), p.c));
    Var alpha = mul(t, matmul(t, a, p.q), masks[i]);  // Nx1
    Var term = mul_colvec(t, states[i], alpha);
    h_att = h_att ? add(t, h_att, term) : term;
  }
  return concat_cols(t, h_last, h_att);
}

SessionGraph build_session_graph(const std::vector<int>& seq) {
  if (seq.empty()) throw std::invalid_argument("build_session_graph: empty sequence");
  SessionGraph g;
  std::unordered_map<int, int> index;
  for (int item : seq) {
    if (index.emplace(item, int(g.nodes.size())).second) g.nodes.push_back(item);
    g.alias.push_back(index[item]);
  }
  const int n = int(g.nodes.size());
  Mat edges = Mat::Zero(n, n);  // edges(i, j) = 1 iff i -> j
  for (std::size_t p = 0; p + 1 < seq.size(); ++p)
    edges(g.alias[p], g.alias[p + 1]) = 1.0;

  // a_out(i, j): weight of edge j -> i, column j normalized by j's
  // out-degree; a_in mirrors it for incoming edges.
  g.a_out = Mat::Zero(n, n);
  g.a_in = Mat::Zero(n, n);
  for (int j = 0; j < n; ++j) {
    const double out_deg = edges.row(j).sum();
    if (out_deg > 0) g.a_out.col(j) = edges.row(j).transpose() / out_deg;
    const double in_deg = edges.col(j).sum();
    if (in_deg > 0) g.a_in.col(j) = edges.col(j) / in_deg;
  }
  return g;
}

Var ggnn_propagate(Tape& t, const GgnnParams& p, const SessionGraph& g,
                   const Var& node_emb, int steps) {
  if (steps < 1) throw std::invalid_argument("ggnn_propagate: steps >= 1");
  Var a_in = t.leaf(g.a_in);
  Var a_out = t.leaf(g.a_out);
  Var h = node_emb;
  for (int s = 0; s < steps; ++s) {
    Var m_in = matmul(t, a_in, add_rowvec(t, matmul(t, h, p.Win), p.bin));
    Var m_out = matmul(t, a_out, add_rowvec(t, matmul(t, h, p.Wout), p.bout));
    Var m = concat_cols(t, m_in, m_out);
    Var z = sigmoid(t, add_rowvec(t, add(t, matmul(t, m, p.gate.Wz), matmul(t, h, p.gate.Uz)), p.gate.bz));
    Var r = sigmoid(t, add_rowvec(t, add(t, matmul(t, m, p.gate.Wr), matmul(t, h, p.gate.Ur)), p.gate.br));
    Var n = tanh_op(t, add_rowvec(t, add(t, matmul(t, m, p.gate.Wh), mul(t, r, matmul(t, h, p.gate.Uh))), p.gate.bh));
    Var one_minus_z = add_const(t, scale(t, z, -1.0), 1.0);
    h = add(t, mul(t, one_minus_z, n), mul(t, z, h));
  }
  return h;
}

}  // namespace sbr
