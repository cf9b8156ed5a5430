#pragma once

#include <vector>

#include "sbr/tensor.hpp"

namespace sbr {

// Row-vector convention throughout: states are NxD, inputs NxE, applied
// as x*W with W sized ExD.

struct GruCell {
  ad::Var Wz, Uz, bz;  // update gate
  ad::Var Wr, Ur, br;  // reset gate
  ad::Var Wh, Uh, bh;  // candidate
};

// xs[t]: NxE input, masks[t]: Nx1 (1 = real step, 0 = padding; padded
// steps copy the previous state through). Returns the state after each
// step, NxD each, starting from a zero state.
std::vector<ad::Var> gru_forward(ad::Tape& t, const GruCell& cell,
                                 const std::vector<ad::Var>& xs,
                                 const std::vector<ad::Var>& masks);

struct AttentionParams {
  ad::Var W1, W2;  // DxD
  ad::Var q;       // Dx1
  ad::Var c;       // 1xD
};

// alpha_t = sigmoid(h_last*W1 + h_t*W2 + c) * q, unnormalized across t;
// returns [h_last ; sum_t alpha_t h_t] as Nx2D.
ad::Var narm_attention(ad::Tape& t, const AttentionParams& p,
                       const std::vector<ad::Var>& states,
                       const std::vector<ad::Var>& masks);

struct SessionGraph {
  std::vector<int> nodes;  // unique item ids, order of first appearance
  ad::Mat a_in, a_out;     // nxn, columns normalized to sum 1 (or 0)
  std::vector<int> alias;  // sequence position -> node index
};

SessionGraph build_session_graph(const std::vector<int>& seq);

struct GgnnParams {
  ad::Var Win, bin;    // ExE, 1xE
  ad::Var Wout, bout;  // ExE, 1xE
  GruCell gate;        // input dim 2E, state dim E
};

// Node states start at the node embeddings (nxE); per step the gated
// update consumes [A_in*(H*Win + bin) ; A_out*(H*Wout + bout)].
ad::Var ggnn_propagate(ad::Tape& t, const GgnnParams& p, const SessionGraph& g,
                       const ad::Var& node_emb, int steps);

}  // namespace sbr
