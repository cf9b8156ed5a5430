#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sbr/evaluation.hpp"
#include "sbr/retrieval.hpp"
#include "sbr/serialize.hpp"
#include "sbr/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sbr;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void write_metrics(const fs::path& dir, const std::string& stem, const MetricReport& r) {
  write_text(dir / (stem + ".json"), metric_report_to_json(r).dump(2) + "\n");
  std::ostringstream csv;
  csv << "metric,value\n"
      << "hr_at_" << r.k << "," << r.hr_at_k << "\n"
      << "mrr_at_" << r.k << "," << r.mrr_at_k << "\n"
      << "samples," << r.samples << "\n";
  write_text(dir / (stem + ".csv"), csv.str());
}

std::vector<int> parse_items(const std::string& text) {
  std::vector<int> items;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) items.push_back(std::stoi(tok));
  if (items.empty()) throw CLI::ValidationError("--items", "no item ids given");
  return items;
}

struct ModelFlags {
  std::string encoder = "gru4rec";
  std::string decoder = "linear";
  int embed_dim = 100;
  int hidden_dim = 100;
  bool separate_embeddings = false;
  int mlp_layers = 2;
  int mos_k = 3;
  int ggnn_steps = 1;
  double session_dropout = 0.25;
  double encoder_dropout = 0.0;
  double candidate_dropout = 0.0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--encoder", encoder, "gru4rec | narm | srgnn")
        ->capture_default_str();
    cmd->add_option("--decoder", decoder, "linear | decoupled | mlp | mos")
        ->capture_default_str();
    cmd->add_option("--embed-dim", embed_dim)->capture_default_str();
    cmd->add_option("--hidden-dim", hidden_dim)->capture_default_str();
    cmd->add_flag("--separate-embeddings", separate_embeddings,
                  "decouple input and candidate embedding tables");
    cmd->add_option("--mlp-layers", mlp_layers)->capture_default_str();
    cmd->add_option("--mos-k", mos_k)->capture_default_str();
    cmd->add_option("--ggnn-steps", ggnn_steps)->capture_default_str();
    cmd->add_option("--session-dropout", session_dropout)->capture_default_str();
    cmd->add_option("--encoder-dropout", encoder_dropout)->capture_default_str();
    cmd->add_option("--candidate-dropout", candidate_dropout)->capture_default_str();
  }

  ModelConfig build(int vocab) const {
    ModelConfig m;
    m.encoder = parse_encoder(encoder);
    m.decoder = parse_decoder(decoder);
    m.vocab_size = vocab;
    m.embed_dim = embed_dim;
    m.hidden_dim = hidden_dim;
    m.share_embeddings = !separate_embeddings;
    m.mlp_layers = mlp_layers;
    m.mos_k = mos_k;
    m.ggnn_steps = ggnn_steps;
    m.session_dropout = session_dropout;
    m.encoder_dropout = encoder_dropout;
    m.candidate_dropout = candidate_dropout;
    return m;
  }
};

Model load_model(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  Model m;
  m.cfg = ck.config;
  m.params = ck.params;
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"session-based recommendation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.set_version_flag("--version", std::string("sbr ") + build_id());
  app.set_config("--config", "", "key=value option file; command line wins")
      ->configurable(false);
  app.allow_config_extras(CLI::config_extras_mode::ignore_all);

  std::string out_dir = ".";
  std::uint64_t seed = 1;
  int jobs = 1;
  bool dry_run = false;
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--jobs", jobs, "worker threads (reserved; runs are single-threaded "
                                 "for determinism)")
      ->capture_default_str();
  app.add_flag("--dry-run", dry_run, "print the resolved plan and exit");

  // ---- preprocess ----
  auto* pre = app.add_subcommand("preprocess", "events file -> filtered, split corpus");
  std::string input, delimiter = "\t";
  FormatSpec fmt;
  std::int64_t gap_seconds = 8 * 3600;
  int min_item_count = 5, min_session_len = 2;
  double test_fraction = 0.1, val_fraction = 0.1;
  pre->add_option("--input", input, "tsv/csv event log")->required();
  pre->add_option("--delimiter", delimiter)->capture_default_str();
  pre->add_option("--session-col", fmt.session_col)->capture_default_str();
  pre->add_option("--item-col", fmt.item_col)->capture_default_str();
  pre->add_option("--time-col", fmt.time_col)->capture_default_str();
  pre->add_option("--gap-seconds", gap_seconds)->capture_default_str();
  pre->add_option("--min-item-count", min_item_count)->capture_default_str();
  pre->add_option("--min-session-len", min_session_len)->capture_default_str();
  pre->add_option("--test-fraction", test_fraction)->capture_default_str();
  pre->add_option("--val-fraction", val_fraction)->capture_default_str();

  // ---- train ----
  auto* tr = app.add_subcommand("train", "fit a model on a preprocessed corpus");
  std::string corpus_path;
  ModelFlags mf;
  TrainConfig tc;
  tr->add_option("--corpus", corpus_path, "corpus container from preprocess")->required();
  mf.add_to(tr);
  tr->add_option("--batch-size", tc.batch_size)->capture_default_str();
  tr->add_option("--lr", tc.lr)->capture_default_str();
  tr->add_option("--max-epochs", tc.max_epochs)->capture_default_str();
  tr->add_option("--patience", tc.patience)->capture_default_str();
  tr->add_option("--metric-k", tc.metric_k)->capture_default_str();
  tr->add_option("--clip-norm", tc.clip_norm)->capture_default_str();
  tr->add_option("--max-prefix-len", tc.max_prefix_len)->capture_default_str();

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint or baseline on a split");
  std::string ev_corpus, ev_model, ev_baseline, ev_split = "test";
  int ev_k = 20;
  ev->add_option("--corpus", ev_corpus)->required();
  ev->add_option("--model", ev_model, "checkpoint container");
  ev->add_option("--baseline", ev_baseline, "pop | spop | itemknn");
  ev->add_option("--split", ev_split, "train | validation | test")->capture_default_str();
  ev->add_option("--k", ev_k)->capture_default_str();

  // ---- recommend ----
  auto* rec = app.add_subcommand("recommend", "top-L items for an item-id prefix");
  std::string rec_model, rec_items, rec_index, rec_build_index;
  int rec_l = 20;
  bool rec_exact = false;
  rec->add_option("--model", rec_model)->required();
  rec->add_option("--items", rec_items, "comma-separated item ids, oldest first")
      ->required();
  rec->add_option("-L,--top", rec_l, "list length")->capture_default_str();
  rec->add_option("--index", rec_index, "prebuilt retrieval index container");
  rec->add_option("--build-index", rec_build_index,
                  "build the retrieval index, save it here, then serve from it");
  rec->add_flag("--exact", rec_exact, "force exact scoring even with an index");

  // ---- report ----
  auto* rep = app.add_subcommand("report", "summarize a finished run directory");
  std::string rep_dir;
  rep->add_option("--run", rep_dir, "directory produced by train/evaluate")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(out_dir);

    if (*pre) {
      if (delimiter.size() != 1)
        throw std::runtime_error("--delimiter must be a single character");
      fmt.delimiter = delimiter[0];
      if (dry_run) {
        json plan{{"command", "preprocess"}, {"input", input},
                  {"gap_seconds", gap_seconds}, {"min_item_count", min_item_count},
                  {"min_session_len", min_session_len}, {"test_fraction", test_fraction},
                  {"val_fraction", val_fraction}, {"seed", seed}, {"out", out_dir}};
        std::cout << plan.dump(2) << "\n";
        return 0;
      }
      EventLog log = ingest_events(input, fmt);
      const std::size_t malformed = log.malformed;
      log = sessionize_by_gap(log, gap_seconds);
      SessionCorpus corpus = filter_support(build_corpus(log), min_item_count,
                                            min_session_len);
      corpus = temporal_split(corpus, test_fraction, val_fraction, seed);
      save_corpus(corpus, (fs::path(out_dir) / "corpus.sbrc").string());
      json stats = corpus_stats_to_json(corpus_stats(corpus));
      stats["malformed_rows"] = malformed;
      int counts[3] = {0, 0, 0};
      for (Split s : corpus.splits) ++counts[int(s)];
      stats["train_sessions"] = counts[0];
      stats["validation_sessions"] = counts[1];
      stats["test_sessions"] = counts[2];
      write_text(fs::path(out_dir) / "stats.json", stats.dump(2) + "\n");
      std::cout << stats.dump(2) << "\n";
    }

    if (*tr) {
      SessionCorpus corpus = load_corpus(corpus_path);
      if (corpus.splits.empty())
        throw std::runtime_error("corpus has no split labels; rerun preprocess");
      tc.model = mf.build(corpus.vocab_size());
      tc.seed = seed;
      if (dry_run) {
        json plan{{"command", "train"}, {"corpus", corpus_path},
                  {"model", model_config_to_json(tc.model)},
                  {"batch_size", tc.batch_size}, {"lr", tc.lr},
                  {"max_epochs", tc.max_epochs}, {"patience", tc.patience},
                  {"seed", tc.seed}, {"out", out_dir}};
        std::cout << plan.dump(2) << "\n";
        return 0;
      }
      std::ofstream log_out(fs::path(out_dir) / "train_log.jsonl");
      TrainRun run = fit(tc, corpus, [&](const EpochRecord& r) {
        json line{{"epoch", r.epoch}, {"train_loss", r.train_loss},
                  {"val_hr", r.val_hr}, {"val_mrr", r.val_mrr},
                  {"wall_ms", r.wall_ms}};
        log_out << line.dump() << "\n";
        log_out.flush();
        std::cout << line.dump() << "\n";
      });
      for (const auto& [stem, params, epoch] :
           {std::tuple{"model_hr", &run.best_by_hr, run.best_epoch_hr},
            std::tuple{"model_mrr", &run.best_by_mrr, run.best_epoch_mrr}}) {
        Checkpoint ck;
        ck.config = run.cfg.model;
        ck.params = *params;
        ck.epoch = epoch;
        ck.extra = json{{"seed", tc.seed}, {"lr", tc.lr},
                        {"batch_size", tc.batch_size}}.dump();
        save_checkpoint(ck, (fs::path(out_dir) / (std::string(stem) + ".sbrm")).string());
      }
      write_metrics(out_dir, "test_by_hr", run.test_by_hr);
      write_metrics(out_dir, "test_by_mrr", run.test_by_mrr);
      json summary{{"epochs", run.log.size()},
                   {"best_epoch_hr", run.best_epoch_hr},
                   {"best_epoch_mrr", run.best_epoch_mrr},
                   {"best_val_hr", run.best_val_hr},
                   {"best_val_mrr", run.best_val_mrr},
                   {"test_hr", run.test_by_hr.hr_at_k},
                   {"test_mrr", run.test_by_mrr.mrr_at_k}};
      write_text(fs::path(out_dir) / "summary.json", summary.dump(2) + "\n");
      std::cout << summary.dump(2) << "\n";
    }

    if (*ev) {
      SessionCorpus corpus = load_corpus(ev_corpus);
      Split split = ev_split == "train" ? Split::train
                    : ev_split == "validation" ? Split::validation
                    : ev_split == "test" ? Split::test
                    : throw std::runtime_error("unknown split: " + ev_split);
      auto samples = samples_for_split(corpus, split);
      if (ev_model.empty() == ev_baseline.empty())
        throw std::runtime_error("evaluate needs exactly one of --model / --baseline");
      if (dry_run) {
        json plan{{"command", "evaluate"}, {"split", ev_split}, {"k", ev_k},
                  {"samples", samples.size()}};
        std::cout << plan.dump(2) << "\n";
        return 0;
      }
      MetricReport r;
      if (!ev_model.empty()) {
        Model m = load_model(ev_model);
        if (m.cfg.vocab_size != corpus.vocab_size())
          throw std::runtime_error("model/corpus vocabulary size mismatch");
        r = evaluate_model(m, samples, corpus.pad_id(), ev_k);
      } else {
        r = evaluate_baseline(parse_baseline(ev_baseline), corpus, samples, ev_k);
      }
      write_metrics(out_dir, "metrics", r);
      std::cout << metric_report_to_json(r).dump(2) << "\n";
    }

    if (*rec) {
      Model m = load_model(rec_model);
      auto items = parse_items(rec_items);
      for (int id : items)
        if (id < 0 || id >= m.cfg.vocab_size)
          throw std::runtime_error("item id out of range: " + std::to_string(id));
      if (dry_run) {
        json plan{{"command", "recommend"}, {"items", items}, {"L", rec_l}};
        std::cout << plan.dump(2) << "\n";
        return 0;
      }
      TopLResult top;
      if (m.cfg.decoder == DecoderKind::mlp || m.cfg.decoder == DecoderKind::mos) {
        // no factorized candidate matrix: score through the full forward
        Batch b;
        b.n = 1;
        b.t = int(items.size());
        b.items = items;
        b.lengths = {b.t};
        b.targets = {0};
        b.pad_id = m.cfg.vocab_size;
        ad::Tape t;
        Rng rng(0);
        ForwardResult f = m.forward(t, b, ad::Mode::eval, rng);
        CandidateIndex scratch;
        scratch.matrix = f.scores->value.row(0).transpose();
        Eigen::VectorXd one(1);
        one << 1.0;
        top = topl_exact(one, scratch, rec_l);
      } else {
        CandidateIndex idx;
        if (!rec_index.empty()) {
          idx = load_index(rec_index);
        } else {
          idx = precompute_candidates(m);
          if (!rec_build_index.empty()) {
            idx.mips = build_mips_index(idx.matrix);
            save_index(idx, rec_build_index);
          }
        }
        Eigen::VectorXd q = query_vector(m, items);
        top = (idx.mips && !rec_exact)
                  ? topl_indexed(idx, q, rec_l, m.param_hash())
                  : topl_exact(q, idx, rec_l);
      }
      json out = json::array();
      for (const auto& [id, score] : top.items)
        out.push_back({{"item", id}, {"score", score}});
      std::cout << out.dump(2) << "\n";
      write_text(fs::path(out_dir) / "recommendations.json", out.dump(2) + "\n");
    }

    if (*rep) {
      json report;
      const fs::path dir(rep_dir);
      for (const char* name : {"summary.json", "stats.json", "metrics.json",
                               "test_by_hr.json", "test_by_mrr.json"}) {
        std::ifstream in(dir / name);
        if (in) report[name] = json::parse(in);
      }
      std::ifstream log_in(dir / "train_log.jsonl");
      if (log_in) {
        json epochs = json::array();
        std::string line;
        while (std::getline(log_in, line))
          if (!line.empty()) epochs.push_back(json::parse(line));
        report["epochs"] = epochs.size();
        if (!epochs.empty()) report["last_epoch"] = epochs.back();
      }
      if (report.empty())
        throw std::runtime_error("no run artifacts found in " + rep_dir);
      std::cout << report.dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
