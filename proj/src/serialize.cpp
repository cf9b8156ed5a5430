#include "sbr/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#ifndef SBR_BUILD_ID
#define SBR_BUILD_ID "unknown"
#endif

namespace sbr {

using nlohmann::json;

namespace {

void write_exact(std::ostream& out, const void* data, std::size_t len) {
  out.write(static_cast<const char*>(data), std::streamsize(len));
  if (!out) throw std::runtime_error("write failed");
}

void read_exact(std::istream& in, void* data, std::size_t len) {
  in.read(static_cast<char*>(data), std::streamsize(len));
  if (std::size_t(in.gcount()) != len) throw std::runtime_error("truncated container");
}

void write_header(std::ostream& out, const char* magic, const json& header) {
  write_exact(out, magic, 5);
  write_exact(out, "\n", 1);
  const std::string text = header.dump();
  const std::uint32_t len = std::uint32_t(text.size());
  write_exact(out, &len, sizeof(len));
  write_exact(out, text.data(), text.size());
}

json read_header(std::istream& in, const char* magic) {
  char got[6];
  read_exact(in, got, 6);
  if (std::memcmp(got, magic, 5) != 0 || got[5] != '\n')
    throw std::runtime_error(std::string("bad magic, expected ") + magic);
  std::uint32_t len = 0;
  read_exact(in, &len, sizeof(len));
  std::string text(len, '\0');
  read_exact(in, text.data(), len);
  return json::parse(text);
}

void write_i32s(std::ostream& out, const std::vector<int>& v) {
  for (int x : v) {
    const std::int32_t y = x;
    write_exact(out, &y, sizeof(y));
  }
}

std::vector<int> read_i32s(std::istream& in, std::size_t n) {
  std::vector<int> v(n);
  for (auto& x : v) {
    std::int32_t y;
    read_exact(in, &y, sizeof(y));
    x = y;
  }
  return v;
}

void write_mat(std::ostream& out, const ad::Mat& m) {
  write_exact(out, m.data(), sizeof(double) * std::size_t(m.size()));
}

ad::Mat read_mat(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  ad::Mat m(rows, cols);
  read_exact(in, m.data(), sizeof(double) * std::size_t(m.size()));
  return m;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return in;
}

}  // namespace

void save_corpus(const SessionCorpus& corpus, const std::string& path) {
  auto out = open_out(path);
  json header;
  header["build"] = build_id();
  header["vocab"] = corpus.item_keys;
  json lens = json::array();
  for (const auto& s : corpus.sessions) lens.push_back(s.size());
  header["session_lengths"] = lens;
  header["has_splits"] = !corpus.splits.empty();
  write_header(out, "SBRC1", header);
  for (const auto& s : corpus.sessions) write_i32s(out, s);
  for (std::int64_t t : corpus.start_times) write_exact(out, &t, sizeof(t));
  if (!corpus.splits.empty()) {
    std::vector<int> s(corpus.splits.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = int(corpus.splits[i]);
    write_i32s(out, s);
  }
}

SessionCorpus load_corpus(const std::string& path) {
  auto in = open_in(path);
  json header = read_header(in, "SBRC1");
  SessionCorpus corpus;
  corpus.item_keys = header["vocab"].get<std::vector<std::string>>();
  const auto lens = header["session_lengths"].get<std::vector<std::size_t>>();
  for (std::size_t n : lens) corpus.sessions.push_back(read_i32s(in, n));
  corpus.start_times.resize(lens.size());
  for (auto& t : corpus.start_times) read_exact(in, &t, sizeof(t));
  if (header["has_splits"].get<bool>()) {
    auto s = read_i32s(in, lens.size());
    for (int x : s) corpus.splits.push_back(Split(x));
  }
  return corpus;
}

json model_config_to_json(const ModelConfig& cfg) {
  return json{{"encoder", to_string(cfg.encoder)},
              {"decoder", to_string(cfg.decoder)},
              {"vocab_size", cfg.vocab_size},
              {"embed_dim", cfg.embed_dim},
              {"hidden_dim", cfg.hidden_dim},
              {"share_embeddings", cfg.share_embeddings},
              {"mlp_layers", cfg.mlp_layers},
              {"mos_k", cfg.mos_k},
              {"ggnn_steps", cfg.ggnn_steps},
              {"session_dropout", cfg.session_dropout},
              {"encoder_dropout", cfg.encoder_dropout},
              {"candidate_dropout", cfg.candidate_dropout}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.encoder = parse_encoder(j.at("encoder").get<std::string>());
  cfg.decoder = parse_decoder(j.at("decoder").get<std::string>());
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.share_embeddings = j.at("share_embeddings").get<bool>();
  cfg.mlp_layers = j.at("mlp_layers").get<int>();
  cfg.mos_k = j.at("mos_k").get<int>();
  cfg.ggnn_steps = j.at("ggnn_steps").get<int>();
  cfg.session_dropout = j.at("session_dropout").get<double>();
  cfg.encoder_dropout = j.at("encoder_dropout").get<double>();
  cfg.candidate_dropout = j.at("candidate_dropout").get<double>();
  return cfg;
}

json metric_report_to_json(const MetricReport& r) {
  return json{{"hr_at_k", r.hr_at_k},
              {"mrr_at_k", r.mrr_at_k},
              {"k", r.k},
              {"samples", r.samples}};
}

json corpus_stats_to_json(const CorpusStats& st) {
  return json{{"events", st.events},
              {"sessions", st.sessions},
              {"items", st.items},
              {"avg_len", st.avg_len}};
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  auto out = open_out(path);
  json header;
  header["build"] = build_id();
  header["config"] = model_config_to_json(ckpt.config);
  header["epoch"] = ckpt.epoch;
  header["rng_state"] = {ckpt.rng_state[0], ckpt.rng_state[1], ckpt.rng_state[2],
                         ckpt.rng_state[3]};
  header["extra"] = ckpt.extra;
  json blobs = json::array();
  for (const auto& [name, value] : ckpt.params.values)
    blobs.push_back({{"name", name}, {"rows", value.rows()}, {"cols", value.cols()}});
  header["params"] = blobs;
  write_header(out, "SBRM1", header);
  for (const auto& [name, value] : ckpt.params.values) write_mat(out, value);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto in = open_in(path);
  json header = read_header(in, "SBRM1");
  Checkpoint ckpt;
  ckpt.config = model_config_from_json(header.at("config"));
  ckpt.epoch = header.at("epoch").get<int>();
  for (int i = 0; i < 4; ++i) ckpt.rng_state[i] = header.at("rng_state")[i].get<std::uint64_t>();
  ckpt.extra = header.value("extra", "");
  for (const auto& blob : header.at("params")) {
    const auto name = blob.at("name").get<std::string>();
    ckpt.params.values[name] =
        read_mat(in, blob.at("rows").get<Eigen::Index>(), blob.at("cols").get<Eigen::Index>());
  }
  return ckpt;
}

void save_index(const CandidateIndex& index, const std::string& path) {
  auto out = open_out(path);
  json header;
  header["build"] = build_id();
  header["model_hash"] = index.model_hash;
  header["built_at"] = index.built_at;
  header["rows"] = index.matrix.rows();
  header["cols"] = index.matrix.cols();
  header["has_mips"] = index.mips.has_value();
  if (index.mips) {
    header["mips"] = {{"max_norm", index.mips->max_norm},
                      {"degree", index.mips->degree},
                      {"ef_search", index.mips->ef_search}};
    json deg = json::array();
    for (const auto& nb : index.mips->neighbors) deg.push_back(nb.size());
    header["mips"]["neighbor_counts"] = deg;
  }
  write_header(out, "SBRI1", header);
  write_mat(out, index.matrix);
  if (index.mips) {
    write_mat(out, index.mips->augmented);
    for (const auto& nb : index.mips->neighbors) write_i32s(out, nb);
  }
}

CandidateIndex load_index(const std::string& path) {
  auto in = open_in(path);
  json header = read_header(in, "SBRI1");
  CandidateIndex index;
  index.model_hash = header.at("model_hash").get<std::uint64_t>();
  index.built_at = header.at("built_at").get<std::int64_t>();
  const auto rows = header.at("rows").get<Eigen::Index>();
  const auto cols = header.at("cols").get<Eigen::Index>();
  index.matrix = read_mat(in, rows, cols);
  if (header.at("has_mips").get<bool>()) {
    MipsIndex mips;
    mips.max_norm = header["mips"].at("max_norm").get<double>();
    mips.degree = header["mips"].at("degree").get<int>();
    mips.ef_search = header["mips"].at("ef_search").get<int>();
    mips.augmented = read_mat(in, rows, cols + 1);
    for (const auto& n : header["mips"].at("neighbor_counts"))
      mips.neighbors.push_back(read_i32s(in, n.get<std::size_t>()));
    index.mips = std::move(mips);
  }
  return index;
}

const char* build_id() { return SBR_BUILD_ID; }

}  // namespace sbr
