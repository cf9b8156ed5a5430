#include "sbr/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace sbr {

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(field);
  return out;
}

bool parse_timestamp(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  // accept integer or fractional seconds; fraction is truncated
  std::size_t pos = 0;
  try {
    double v = std::stod(s, &pos);
    if (pos != s.size() || v < 0) return false;
    out = std::int64_t(v);
    return true;
  } catch (...) {
    return false;
  }
}

}  // namespace

EventLog ingest_events(const std::string& path, const FormatSpec& fmt) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open event file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty event file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_line(line, fmt.delimiter);
  int ci_session = -1, ci_item = -1, ci_time = -1;
  for (int i = 0; i < int(header.size()); ++i) {
    if (header[i] == fmt.session_col) ci_session = i;
    if (header[i] == fmt.item_col) ci_item = i;
    if (header[i] == fmt.time_col) ci_time = i;
  }
  if (ci_session < 0 || ci_item < 0 || ci_time < 0)
    throw std::runtime_error("event file missing required columns: " + path);

  EventLog log;
  const int need = std::max({ci_session, ci_item, ci_time}) + 1;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line, fmt.delimiter);
    std::int64_t ts = 0;
    if (int(fields.size()) < need || fields[ci_session].empty() ||
        fields[ci_item].empty() || !parse_timestamp(fields[ci_time], ts)) {
      ++log.malformed;
      continue;
    }
    log.records.push_back({fields[ci_session], fields[ci_item], ts});
  }
  if (log.records.empty())
    throw std::runtime_error("no valid rows in event file: " + path);
  return log;
}

EventLog sessionize_by_gap(const EventLog& log, std::int64_t gap_seconds) {
  if (gap_seconds <= 0) throw std::invalid_argument("sessionize: gap must be positive");
  std::vector<std::size_t> order(log.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = log.records[a];
    const auto& rb = log.records[b];
    if (ra.session_key != rb.session_key) return ra.session_key < rb.session_key;
    return ra.timestamp < rb.timestamp;
  });
  EventLog out;
  out.malformed = log.malformed;
  out.records.reserve(log.records.size());
  std::string cur_key;
  std::int64_t prev_ts = 0;
  int segment = 0;
  for (std::size_t idx : order) {
    const auto& r = log.records[idx];
    if (r.session_key != cur_key) {
      cur_key = r.session_key;
      segment = 0;
    } else if (r.timestamp - prev_ts > gap_seconds) {
      ++segment;
    }
    prev_ts = r.timestamp;
    out.records.push_back({r.session_key + "#" + std::to_string(segment), r.item_key, r.timestamp});
  }
  return out;
}

SessionCorpus build_corpus(const EventLog& log) {
  std::vector<std::size_t> order(log.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = log.records[a];
    const auto& rb = log.records[b];
    if (ra.session_key != rb.session_key) return ra.session_key < rb.session_key;
    return ra.timestamp < rb.timestamp;
  });

  SessionCorpus corpus;
  std::unordered_map<std::string, int> vocab;
  struct Sess {
    std::vector<int> items;
    std::int64_t start = 0;
  };
  std::vector<Sess> sessions;
  std::string cur_key;
  for (std::size_t idx : order) {
    const auto& r = log.records[idx];
    auto it = vocab.find(r.item_key);
    int id;
    if (it == vocab.end()) {
      id = int(corpus.item_keys.size());
      vocab.emplace(r.item_key, id);
      corpus.item_keys.push_back(r.item_key);
    } else {
      id = it->second;
    }
    if (r.session_key != cur_key) {
      cur_key = r.session_key;
      sessions.push_back({{}, r.timestamp});
    }
    sessions.back().items.push_back(id);
  }
  std::stable_sort(sessions.begin(), sessions.end(),
                   [](const Sess& a, const Sess& b) { return a.start < b.start; });
  for (auto& s : sessions) {
    corpus.sessions.push_back(std::move(s.items));
    corpus.start_times.push_back(s.start);
  }
  return corpus;
}

namespace {

// Keeps only listed items, renumbers the vocabulary densely, drops
// sessions that fall below min_len.
SessionCorpus remap(const SessionCorpus& corpus, const std::vector<bool>& keep_item,
                    int min_len, bool keep_splits) {
  SessionCorpus out;
  std::vector<int> new_id(corpus.item_keys.size(), -1);
  for (std::size_t i = 0; i < corpus.item_keys.size(); ++i) {
    if (keep_item[i]) {
      new_id[i] = int(out.item_keys.size());
      out.item_keys.push_back(corpus.item_keys[i]);
    }
  }
  for (std::size_t s = 0; s < corpus.sessions.size(); ++s) {
    std::vector<int> items;
    items.reserve(corpus.sessions[s].size());
    for (int id : corpus.sessions[s])
      if (new_id[id] >= 0) items.push_back(new_id[id]);
    if (int(items.size()) < min_len) continue;
    out.sessions.push_back(std::move(items));
    out.start_times.push_back(corpus.start_times[s]);
    if (keep_splits && !corpus.splits.empty()) out.splits.push_back(corpus.splits[s]);
  }
  return out;
}

}  // namespace

SessionCorpus filter_support(const SessionCorpus& corpus, int min_item_count,
                             int min_session_len) {
  if (min_item_count < 1) throw std::invalid_argument("filter: min_item_count >= 1");
  if (min_session_len < 2) throw std::invalid_argument("filter: min_session_len >= 2");
  SessionCorpus cur = corpus;
  for (;;) {
    std::vector<std::int64_t> count(cur.item_keys.size(), 0);
    for (const auto& s : cur.sessions)
      for (int id : s) ++count[id];
    std::vector<bool> keep(cur.item_keys.size());
    bool all_kept = true;
    for (std::size_t i = 0; i < keep.size(); ++i) {
      keep[i] = count[i] >= min_item_count;
      all_kept = all_kept && keep[i];
    }
    bool sessions_ok = true;
    for (const auto& s : cur.sessions) sessions_ok = sessions_ok && int(s.size()) >= min_session_len;
    if (all_kept && sessions_ok) break;
    cur = remap(cur, keep, min_session_len, false);
    if (cur.sessions.empty())
      throw std::runtime_error("filter_support: corpus empty after filtering");
  }
  if (cur.sessions.empty())
    throw std::runtime_error("filter_support: corpus empty after filtering");
  return cur;
}

SessionCorpus temporal_split(const SessionCorpus& corpus, double test_fraction,
                             double val_fraction, std::uint64_t seed) {
  if (corpus.sessions.empty()) throw std::runtime_error("temporal_split: empty corpus");
  if (test_fraction <= 0 || test_fraction >= 1 || val_fraction <= 0 || val_fraction >= 1)
    throw std::invalid_argument("temporal_split: fractions must be in (0, 1)");
  const auto [mn_it, mx_it] =
      std::minmax_element(corpus.start_times.begin(), corpus.start_times.end());
  const double cutoff = double(*mx_it) - test_fraction * double(*mx_it - *mn_it);

  const std::size_t n = corpus.sessions.size();
  std::vector<Split> splits(n, Split::train);
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < n; ++i) {
    if (double(corpus.start_times[i]) >= cutoff)
      splits[i] = Split::test;
    else
      rest.push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> shuffled = rest;
  for (std::size_t i = shuffled.size(); i > 1; --i)
    std::swap(shuffled[i - 1], shuffled[rng.uniform_int(i)]);
  const std::size_t n_val = std::size_t(double(rest.size()) * val_fraction + 0.5);
  for (std::size_t i = 0; i < n_val; ++i) splits[shuffled[i]] = Split::validation;

  SessionCorpus with_splits = corpus;
  with_splits.splits = splits;

  // restrict the vocabulary to training items
  std::vector<bool> in_train(corpus.item_keys.size(), false);
  for (std::size_t i = 0; i < n; ++i)
    if (splits[i] == Split::train)
      for (int id : corpus.sessions[i]) in_train[id] = true;
  SessionCorpus out = remap(with_splits, in_train, 2, true);
  bool has[3] = {false, false, false};
  for (Split s : out.splits) has[int(s)] = true;
  if (!has[0] || !has[1] || !has[2])
    throw std::runtime_error("temporal_split: a split is empty");
  return out;
}

std::vector<Sample> expand_prefixes(const std::vector<int>& session, int max_len) {
  if (session.size() < 2) throw std::invalid_argument("expand_prefixes: session too short");
  std::vector<Sample> out;
  for (std::size_t t = 1; t < session.size(); ++t) {
    Sample s;
    const std::size_t len = std::min<std::size_t>(t, std::size_t(max_len));
    s.input.assign(session.begin() + (t - len), session.begin() + t);
    s.target = session[t];
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sample> samples_for_split(const SessionCorpus& corpus, Split which,
                                      int max_len) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < corpus.sessions.size(); ++i) {
    if (!corpus.splits.empty() && corpus.splits[i] != which) continue;
    if (corpus.sessions[i].size() < 2) continue;
    auto samples = expand_prefixes(corpus.sessions[i], max_len);
    out.insert(out.end(), samples.begin(), samples.end());
  }
  return out;
}

std::vector<Batch> make_batches(const std::vector<Sample>& samples, int batch_size,
                                int pad_id, Rng* shuffle_rng) {
  if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size >= 1");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle_rng)
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng->uniform_int(i)]);

  std::vector<Batch> out;
  for (std::size_t at = 0; at < order.size(); at += std::size_t(batch_size)) {
    const std::size_t end = std::min(order.size(), at + std::size_t(batch_size));
    Batch b;
    b.n = int(end - at);
    b.pad_id = pad_id;
    int max_len = 0;
    for (std::size_t i = at; i < end; ++i)
      max_len = std::max(max_len, int(samples[order[i]].input.size()));
    b.t = max_len;
    b.items.assign(std::size_t(b.n) * b.t, pad_id);
    for (std::size_t i = at; i < end; ++i) {
      const Sample& s = samples[order[i]];
      const int r = int(i - at);
      const int off = b.t - int(s.input.size());  // left padding
      for (int j = 0; j < int(s.input.size()); ++j)
        b.items[std::size_t(r) * b.t + off + j] = s.input[j];
      b.lengths.push_back(int(s.input.size()));
      b.targets.push_back(s.target);
    }
    out.push_back(std::move(b));
  }
  return out;
}

CorpusStats corpus_stats(const SessionCorpus& corpus) {
  CorpusStats st;
  st.sessions = std::int64_t(corpus.sessions.size());
  st.items = corpus.vocab_size();
  for (const auto& s : corpus.sessions) st.events += std::int64_t(s.size());
  st.avg_len = st.sessions ? double(st.events) / double(st.sessions) : 0.0;
  return st;
}

}  // namespace sbr
