#include "sbr/model.hpp"

#include <cstring>
#include <stdexcept>

namespace sbr {

using namespace ad;

EncoderKind parse_encoder(const std::string& name) {
  if (name == "gru4rec") return EncoderKind::gru4rec;
  if (name == "narm") return EncoderKind::narm;
  if (name == "srgnn") return EncoderKind::srgnn;
  throw std::invalid_argument("unknown encoder: " + name);
}

DecoderKind parse_decoder(const std::string& name) {
  if (name == "linear") return DecoderKind::linear;
  if (name == "decoupled") return DecoderKind::decoupled;
  if (name == "mlp") return DecoderKind::mlp;
  if (name == "mos") return DecoderKind::mos;
  throw std::invalid_argument("unknown decoder: " + name);
}

std::string to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::gru4rec: return "gru4rec";
    case EncoderKind::narm: return "narm";
    case EncoderKind::srgnn: return "srgnn";
  }
  return "?";
}

std::string to_string(DecoderKind k) {
  switch (k) {
    case DecoderKind::linear: return "linear";
    case DecoderKind::decoupled: return "decoupled";
    case DecoderKind::mlp: return "mlp";
    case DecoderKind::mos: return "mos";
  }
  return "?";
}

Mat& ParamStore::at(const std::string& name) {
  auto it = values.find(name);
  if (it == values.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Mat& ParamStore::at(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

Var BoundParams::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::out_of_range("no bound parameter named " + name);
  return it->second;
}

namespace {

Mat uniform_init(Rng& rng, Eigen::Index rows, Eigen::Index cols, double bound) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-bound, bound);
  return m;
}

void add_gru(ParamStore& p, Rng& rng, const std::string& prefix, int in_dim,
             int state_dim, double bound) {
  for (const char* gate : {"z", "r", "h"}) {
    p.values[prefix + ".W" + gate] = uniform_init(rng, in_dim, state_dim, bound);
    p.values[prefix + ".U" + gate] = uniform_init(rng, state_dim, state_dim, bound);
    p.values[prefix + ".b" + gate] = uniform_init(rng, 1, state_dim, bound);
  }
}

GruCell bind_gru(const BoundParams& b, const std::string& prefix) {
  return GruCell{b.at(prefix + ".Wz"), b.at(prefix + ".Uz"), b.at(prefix + ".bz"),
                 b.at(prefix + ".Wr"), b.at(prefix + ".Ur"), b.at(prefix + ".br"),
                 b.at(prefix + ".Wh"), b.at(prefix + ".Uh"), b.at(prefix + ".bh")};
}

}  // namespace

Model Model::init(const ModelConfig& cfg, Rng& rng) {
  if (cfg.vocab_size <= 0) throw std::invalid_argument("model: vocab_size must be set");
  for (double r : {cfg.session_dropout, cfg.encoder_dropout, cfg.candidate_dropout})
    if (r < 0.0 || r >= 1.0)
      throw std::invalid_argument("model: dropout ratios must be in [0, 1)");
  if (cfg.encoder == EncoderKind::srgnn && cfg.embed_dim != cfg.hidden_dim)
    throw std::invalid_argument("srgnn requires embed_dim == hidden_dim");
  const int e = cfg.embed_dim, d = cfg.hidden_dim, ds = cfg.session_dim();
  const double bound = 1.0 / std::sqrt(double(d));

  Model m;
  m.cfg = cfg;
  ParamStore& p = m.params;
  p.values["emb"] = uniform_init(rng, cfg.vocab_size + 1, e, bound);
  if (!cfg.share_embeddings)
    p.values["emb_cand"] = uniform_init(rng, cfg.vocab_size + 1, e, bound);

  switch (cfg.encoder) {
    case EncoderKind::gru4rec:
      add_gru(p, rng, "enc.gru", e, d, bound);
      break;
    case EncoderKind::narm:
      add_gru(p, rng, "enc.gru", e, d, bound);
      p.values["enc.attn.W1"] = uniform_init(rng, d, d, bound);
      p.values["enc.attn.W2"] = uniform_init(rng, d, d, bound);
      p.values["enc.attn.q"] = uniform_init(rng, d, 1, bound);
      p.values["enc.attn.c"] = uniform_init(rng, 1, d, bound);
      break;
    case EncoderKind::srgnn:
      p.values["enc.ggnn.Win"] = uniform_init(rng, e, e, bound);
      p.values["enc.ggnn.bin"] = uniform_init(rng, 1, e, bound);
      p.values["enc.ggnn.Wout"] = uniform_init(rng, e, e, bound);
      p.values["enc.ggnn.bout"] = uniform_init(rng, 1, e, bound);
      add_gru(p, rng, "enc.ggnn.gate", 2 * e, e, bound);
      p.values["enc.attn.W1"] = uniform_init(rng, d, d, bound);
      p.values["enc.attn.W2"] = uniform_init(rng, d, d, bound);
      p.values["enc.attn.q"] = uniform_init(rng, d, 1, bound);
      p.values["enc.attn.c"] = uniform_init(rng, 1, d, bound);
      break;
  }

  switch (cfg.decoder) {
    case DecoderKind::linear:
    case DecoderKind::decoupled:
      if (cfg.needs_projection())
        p.values["dec.W"] = uniform_init(rng, ds, e, bound);
      if (cfg.decoder == DecoderKind::decoupled) {
        p.values["dec.ff.A"] = uniform_init(rng, e, e, bound);
        p.values["dec.ff.b"] = uniform_init(rng, 1, e, bound);
      }
      break;
    case DecoderKind::mlp: {
      if (cfg.mlp_layers < 1) throw std::invalid_argument("mlp_layers >= 1");
      p.values["dec.mlp.L1"] = uniform_init(rng, ds, e, bound);
      p.values["dec.mlp.L1b"] = uniform_init(rng, 1, e, bound);
      p.values["dec.mlp.L2"] = uniform_init(rng, e, e, bound);
      p.values["dec.mlp.L2b"] = uniform_init(rng, 1, e, bound);
      for (int l = 0; l + 1 < cfg.mlp_layers; ++l) {
        p.values["dec.mlp.h" + std::to_string(l) + ".W"] = uniform_init(rng, e, e, bound);
        p.values["dec.mlp.h" + std::to_string(l) + ".b"] = uniform_init(rng, 1, e, bound);
      }
      p.values["dec.mlp.out.W"] = uniform_init(rng, e, 1, bound);
      p.values["dec.mlp.out.b"] = uniform_init(rng, 1, 1, bound);
      break;
    }
    case DecoderKind::mos: {
      if (cfg.mos_k < 2) throw std::invalid_argument("mos_k >= 2");
      for (int k = 0; k < cfg.mos_k; ++k)
        p.values["dec.mos.Wh" + std::to_string(k)] = uniform_init(rng, ds, e, bound);
      p.values["dec.mos.Wpi"] = uniform_init(rng, ds, cfg.mos_k, bound);
      break;
    }
  }
  return m;
}

ForwardResult Model::forward(Tape& t, const Batch& batch, Mode mode, Rng& rng) const {
  if (batch.n == 0) throw std::invalid_argument("forward: empty batch");
  ForwardResult out;
  for (const auto& [name, value] : params.values)
    out.bound.vars[name] = t.leaf(value, true);
  const BoundParams& b = out.bound;

  // candidate side first so the shared mask draws a fixed rng prefix
  Var cand_table = cfg.share_embeddings ? b.at("emb") : b.at("emb_cand");
  Var candidates = top_rows(t, cand_table, cfg.vocab_size);
  candidates = dropout(t, candidates, cfg.candidate_dropout, mode, rng);

  // session side
  Var emb = b.at("emb");
  std::vector<Var> xs, masks;
  for (int step = 0; step < batch.t; ++step) {
    std::vector<int> ids(std::size_t(batch.n));
    Mat mask(batch.n, 1);
    for (int r = 0; r < batch.n; ++r) {
      const int id = batch.item(r, step);
      ids[std::size_t(r)] = id;
      mask(r, 0) = (id == batch.pad_id) ? 0.0 : 1.0;
    }
    Var x = gather_rows(t, emb, ids);
    xs.push_back(dropout(t, x, cfg.session_dropout, mode, rng));
    masks.push_back(t.leaf(mask));
  }

  Var s;
  switch (cfg.encoder) {
    case EncoderKind::gru4rec: {
      auto states = gru_forward(t, bind_gru(b, "enc.gru"), xs, masks);
      s = states.back();  // left padding: the final step is always real
      break;
    }
    case EncoderKind::narm: {
      auto states = gru_forward(t, bind_gru(b, "enc.gru"), xs, masks);
      AttentionParams ap{b.at("enc.attn.W1"), b.at("enc.attn.W2"),
                         b.at("enc.attn.q"), b.at("enc.attn.c")};
      s = narm_attention(t, ap, states, masks);
      break;
    }
    case EncoderKind::srgnn: {
      GgnnParams gp{b.at("enc.ggnn.Win"), b.at("enc.ggnn.bin"),
                    b.at("enc.ggnn.Wout"), b.at("enc.ggnn.bout"),
                    bind_gru(b, "enc.ggnn.gate")};
      AttentionParams ap{b.at("enc.attn.W1"), b.at("enc.attn.W2"),
                         b.at("enc.attn.q"), b.at("enc.attn.c")};
      std::vector<Var> rows;
      for (int r = 0; r < batch.n; ++r) {
        std::vector<int> seq;
        for (int step = batch.t - batch.lengths[std::size_t(r)]; step < batch.t; ++step)
          seq.push_back(batch.item(r, step));
        SessionGraph g = build_session_graph(seq);
        Var node_emb = gather_rows(t, emb, g.nodes);
        node_emb = dropout(t, node_emb, cfg.session_dropout, mode, rng);
        Var feats = ggnn_propagate(t, gp, g, node_emb, cfg.ggnn_steps);
        std::vector<Var> states, ones;
        for (int pos : g.alias) {
          states.push_back(row(t, feats, pos));
          ones.push_back(t.leaf(Mat::Ones(1, 1)));
        }
        rows.push_back(narm_attention(t, ap, states, ones));
      }
      s = concat_rows(t, rows);
      break;
    }
  }
  s = dropout(t, s, cfg.encoder_dropout, mode, rng);
  out.session = s;

  switch (cfg.decoder) {
    case DecoderKind::linear: {
      Var proj = cfg.needs_projection() ? b.at("dec.W") : nullptr;
      out.scores = linear_logits(t, s, candidates, proj);
      break;
    }
    case DecoderKind::decoupled: {
      Var proj = cfg.needs_projection() ? b.at("dec.W") : nullptr;
      Var transformed = decoupled_candidates(t, candidates, b.at("dec.ff.A"), b.at("dec.ff.b"));
      out.scores = linear_logits(t, s, transformed, proj);
      break;
    }
    case DecoderKind::mlp: {
      MlpDecoderParams mp;
      mp.L1 = b.at("dec.mlp.L1");
      mp.L1b = b.at("dec.mlp.L1b");
      mp.L2 = b.at("dec.mlp.L2");
      mp.L2b = b.at("dec.mlp.L2b");
      for (int l = 0; l + 1 < cfg.mlp_layers; ++l) {
        mp.hidden_W.push_back(b.at("dec.mlp.h" + std::to_string(l) + ".W"));
        mp.hidden_b.push_back(b.at("dec.mlp.h" + std::to_string(l) + ".b"));
      }
      mp.out_W = b.at("dec.mlp.out.W");
      mp.out_b = b.at("dec.mlp.out.b");
      out.scores = mlp_logits(t, s, candidates, mp);
      break;
    }
    case DecoderKind::mos: {
      MosDecoderParams mp;
      for (int k = 0; k < cfg.mos_k; ++k)
        mp.Wh.push_back(b.at("dec.mos.Wh" + std::to_string(k)));
      mp.Wpi = b.at("dec.mos.Wpi");
      out.scores = mos_log_probs(t, s, candidates, mp);
      out.log_space = true;
      break;
    }
  }
  return out;
}

Var Model::probs(Tape& t, const ForwardResult& f) {
  return f.log_space ? exp_op(t, f.scores) : softmax_rows(t, f.scores);
}

std::uint64_t Model::param_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, value] : params.values) {
    mix(name.data(), name.size());
    mix(value.data(), sizeof(double) * std::size_t(value.size()));
  }
  return h;
}

}  // namespace sbr
