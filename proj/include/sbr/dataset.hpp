#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sbr/rng.hpp"

namespace sbr {

struct FormatSpec {
  char delimiter = '\t';
  std::string session_col = "session_id";
  std::string item_col = "item_id";
  std::string time_col = "timestamp";
};

struct EventLog {
  struct Record {
    std::string session_key;
    std::string item_key;
    std::int64_t timestamp = 0;
  };
  std::vector<Record> records;
  std::size_t malformed = 0;
};

enum class Split : int { train = 0, validation = 1, test = 2 };

struct SessionCorpus {
  std::vector<std::string> item_keys;           // dense id -> original key
  std::vector<std::vector<int>> sessions;       // item ids
  std::vector<std::int64_t> start_times;        // per session
  std::vector<Split> splits;                    // per session; empty before split
  int vocab_size() const { return int(item_keys.size()); }
  int pad_id() const { return vocab_size(); }
};

struct Sample {
  std::vector<int> input;  // length 1..max_len
  int target = -1;
};

struct Batch {
  int n = 0;  // samples
  int t = 0;  // padded length
  std::vector<int> items;    // n*t row-major, left-padded with pad_id
  std::vector<int> lengths;  // true lengths
  std::vector<int> targets;
  int pad_id = -1;
  int item(int row, int step) const { return items[std::size_t(row) * t + step]; }
};

struct CorpusStats {
  std::int64_t events = 0;
  std::int64_t sessions = 0;
  std::int64_t items = 0;
  double avg_len = 0.0;
};

EventLog ingest_events(const std::string& path, const FormatSpec& fmt);

// Splits each key's timeline at every inter-event gap strictly greater
// than gap_seconds; emits derived per-segment session keys.
EventLog sessionize_by_gap(const EventLog& log, std::int64_t gap_seconds);

// Groups records into sessions ordered by start time, vocabulary in
// order of first appearance.
SessionCorpus build_corpus(const EventLog& log);

// Iterates item-support and session-length filters to a fixed point,
// then re-densifies the vocabulary.
SessionCorpus filter_support(const SessionCorpus& corpus, int min_item_count,
                             int min_session_len);

// Assigns test = sessions starting in the last test_fraction of the time
// span, validation = seeded uniform sample of the remainder. Items absent
// from the training split are dropped from validation/test sessions and
// the vocabulary is re-densified over training items.
SessionCorpus temporal_split(const SessionCorpus& corpus, double test_fraction,
                             double val_fraction, std::uint64_t seed);

std::vector<Sample> expand_prefixes(const std::vector<int>& session, int max_len = 20);

std::vector<Sample> samples_for_split(const SessionCorpus& corpus, Split which,
                                      int max_len = 20);

std::vector<Batch> make_batches(const std::vector<Sample>& samples, int batch_size,
                                int pad_id, Rng* shuffle_rng);

CorpusStats corpus_stats(const SessionCorpus& corpus);

}  // namespace sbr
