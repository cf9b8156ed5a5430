#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "sbr/dataset.hpp"
#include "sbr/decoders.hpp"
#include "sbr/encoders.hpp"
#include "sbr/tensor.hpp"

namespace sbr {

enum class EncoderKind { gru4rec, narm, srgnn };
enum class DecoderKind { linear, decoupled, mlp, mos };

EncoderKind parse_encoder(const std::string& name);
DecoderKind parse_decoder(const std::string& name);
std::string to_string(EncoderKind k);
std::string to_string(DecoderKind k);

struct ModelConfig {
  EncoderKind encoder = EncoderKind::gru4rec;
  DecoderKind decoder = DecoderKind::linear;
  int vocab_size = 0;   // M; embedding table has M+1 rows (pad row last)
  int embed_dim = 100;  // E
  int hidden_dim = 100; // D
  bool share_embeddings = true;  // false = SepEmb ablation
  int mlp_layers = 2;
  int mos_k = 3;
  int ggnn_steps = 1;
  double session_dropout = 0.25;
  double encoder_dropout = 0.0;
  double candidate_dropout = 0.0;

  int session_dim() const {
    return encoder == EncoderKind::gru4rec ? hidden_dim : 2 * hidden_dim;
  }
  bool needs_projection() const { return session_dim() != embed_dim; }
};

// Named parameter blobs; map ordering keeps every walk deterministic.
struct ParamStore {
  std::map<std::string, ad::Mat> values;
  ad::Mat& at(const std::string& name);
  const ad::Mat& at(const std::string& name) const;
  bool has(const std::string& name) const { return values.count(name) > 0; }
};

struct BoundParams {
  std::map<std::string, ad::Var> vars;
  ad::Var at(const std::string& name) const;
};

struct ForwardResult {
  ad::Var session;  // NxDs
  ad::Var scores;   // NxM; logits, or log-probs when log_space
  bool log_space = false;
  BoundParams bound;
};

struct Model {
  ModelConfig cfg;
  ParamStore params;

  static Model init(const ModelConfig& cfg, Rng& rng);

  // Full forward with the dropout wiring: session dropout before the
  // encoder, encoder dropout on s, candidate dropout on the candidate
  // matrix (one mask shared by the batch). Eval mode makes every dropout
  // an identity.
  ForwardResult forward(ad::Tape& t, const Batch& batch, ad::Mode mode, Rng& rng) const;

  // Probabilities with the pad item excluded before normalization.
  static ad::Var probs(ad::Tape& t, const ForwardResult& f);

  std::uint64_t param_hash() const;
};

}  // namespace sbr
