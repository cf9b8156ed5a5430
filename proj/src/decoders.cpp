#include "sbr/decoders.hpp"

#include <stdexcept>

namespace sbr {

using namespace ad;

Var linear_logits(Tape& t, const Var& s, const Var& candidates, const Var& proj) {
  Var query = s;
  if (s->cols() != candidates->cols()) {
    if (!proj)
      throw std::invalid_argument(
          "linear decoder: projection required when session and embedding "
          "dimensions differ");
    query = matmul(t, s, proj);
  } else if (proj) {
    query = matmul(t, s, proj);
  }
  return matmul(t, query, transpose(t, candidates));
}

Var decoupled_candidates(Tape& t, const Var& candidates, const Var& A, const Var& b) {
  return softplus(t, add_rowvec(t, matmul(t, candidates, transpose(t, A)), b));
}

Var mlp_logits(Tape& t, const Var& s, const Var& candidates, const MlpDecoderParams& p) {
  Var u = add_rowvec(t, matmul(t, s, p.L1), p.L1b);            // NxE
  Var v = add_rowvec(t, matmul(t, candidates, p.L2), p.L2b);   // MxE
  std::vector<Var> logit_rows;
  logit_rows.reserve(std::size_t(s->rows()));
  for (Eigen::Index j = 0; j < s->rows(); ++j) {
    Var z = mul_rowvec(t, v, row(t, u, j));  // MxE entrywise product
    for (std::size_t l = 0; l < p.hidden_W.size(); ++l)
      z = softplus(t, add_rowvec(t, matmul(t, z, p.hidden_W[l]), p.hidden_b[l]));
    Var out = add_rowvec(t, matmul(t, z, p.out_W), p.out_b);  // Mx1
    logit_rows.push_back(transpose(t, out));
  }
  return concat_rows(t, logit_rows);
}

Var mos_log_probs(Tape& t, const Var& s, const Var& candidates, const MosDecoderParams& p) {
  if (p.Wh.size() < 2) throw std::invalid_argument("mos decoder: K >= 2");
  Var log_pi = log_softmax_rows(t, matmul(t, s, p.Wpi));  // NxK
  std::vector<Var> comp;
  comp.reserve(p.Wh.size());
  Var cand_t = transpose(t, candidates);
  for (const auto& wh : p.Wh) {
    Var hk = tanh_op(t, matmul(t, s, wh));
    comp.push_back(log_softmax_rows(t, matmul(t, hk, cand_t)));
  }
  return log_mix(t, comp, log_pi);
}

}  // namespace sbr
