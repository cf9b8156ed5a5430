#pragma once

#include <string>

#include "sbr/dataset.hpp"
#include "sbr/model.hpp"
#include "sbr/retrieval.hpp"
#include "sbr/training.hpp"

#include <nlohmann/json_fwd.hpp>

namespace sbr {

// All three containers share one layout: 6-byte magic line, u32
// little-endian JSON header length, JSON header, raw little-endian
// payload in the order the header declares. Writing is deterministic.

// SBRC1: vocabulary, session arrays, split membership.
void save_corpus(const SessionCorpus& corpus, const std::string& path);
SessionCorpus load_corpus(const std::string& path);

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  std::uint64_t rng_state[4] = {0, 0, 0, 0};
  int epoch = 0;
  std::string extra;  // resolved experiment config echo, free-form JSON text
};

// SBRM1: config echo, named parameter blobs with shapes, rng state, epoch.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// SBRI1: model hash, candidate matrix, optional graph blob.
void save_index(const CandidateIndex& index, const std::string& path);
CandidateIndex load_index(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

nlohmann::json metric_report_to_json(const MetricReport& r);
nlohmann::json corpus_stats_to_json(const CorpusStats& st);

// Build identifier embedded in output artifacts.
const char* build_id();

}  // namespace sbr
