#pragma once

#include <vector>

#include "sbr/tensor.hpp"

namespace sbr {

// All decoders take the session representation s (NxDs) and the candidate
// matrix (MxE, pad row already excluded) and produce scores over the M
// candidates. Linear/decoupled/MLP emit logits; MoS emits log
// probabilities directly.

// proj is the optional DsxE map, required exactly when Ds != E.
ad::Var linear_logits(ad::Tape& t, const ad::Var& s, const ad::Var& candidates,
                      const ad::Var& proj);

// candidates' = softplus(candidates * A^T + b); computed once for the
// whole batch, the dot-product path is then identical to linear.
ad::Var decoupled_candidates(ad::Tape& t, const ad::Var& candidates,
                             const ad::Var& A, const ad::Var& b);

struct MlpDecoderParams {
  ad::Var L1, L1b;  // session side, DsxE + 1xE
  ad::Var L2, L2b;  // candidate side, ExE + 1xE
  std::vector<ad::Var> hidden_W, hidden_b;  // ExE + 1xE each
  ad::Var out_W, out_b;                     // Ex1 + 1x1
};

// Entrywise product of the two linear maps, then the MLP stack per item.
ad::Var mlp_logits(ad::Tape& t, const ad::Var& s, const ad::Var& candidates,
                   const MlpDecoderParams& p);

struct MosDecoderParams {
  std::vector<ad::Var> Wh;  // K matrices DsxE, tanh feedforward per component
  ad::Var Wpi;              // DsxK mixture weights
};

// log sum_k pi_k softmax(tanh(s Wh_k) C^T), evaluated in log space.
ad::Var mos_log_probs(ad::Tape& t, const ad::Var& s, const ad::Var& candidates,
                      const MosDecoderParams& p);

}  // namespace sbr
