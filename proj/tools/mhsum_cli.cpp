// Command-line front end. Every subcommand writes into --out and finishes by
// writing a manifest that hashes the inputs and outputs.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mhsum/eval/metrics.hpp"
#include "mhsum/pipeline/experiment.hpp"
#include "mhsum/util/kvfile.hpp"
#include "mhsum/util/manifest.hpp"

namespace fs = std::filesystem;
using namespace mhsum;
using pipeline::ExperimentConfig;
using pipeline::System;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* app, Common& c, bool with_seed = true) {
  app->add_option("-c,--config", c.config, "flat key = value config file");
  app->add_option("-s,--set", c.overrides, "override a config key (key=value), repeatable");
  app->add_option("-o,--out", c.out, "output directory")->required();
  if (with_seed) {
    app->add_option("--seed", c.seed, "run seed (defaults to the first configured seed)")
        ->each([&c](const std::string&) { c.seed_given = true; });
  }
}

ExperimentConfig load_config(const Common& c) {
  util::KeyValues kv;
  if (!c.config.empty()) kv = util::load_kv(c.config);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + o + "'");
    auto one = util::parse_kv(o);
    for (auto& [k, v] : one) kv[k] = v;
  }
  return ExperimentConfig::from_kv(kv);
}

std::uint64_t run_seed(const Common& c, const ExperimentConfig& cfg) { return c.seed_given ? c.seed : cfg.seeds.front(); }

util::Manifest start_manifest(const std::string& command, const Common& c, const ExperimentConfig& cfg,
                              bool with_seed = true) {
  util::Manifest m;
  m.command = command;
  if (with_seed) m.param("seed", std::to_string(run_seed(c, cfg)));
  for (const auto& [k, v] : cfg.to_kv()) m.param(k, v);
  if (!c.config.empty()) m.input(c.config);
  return m;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

// --- subcommands -------------------------------------------------------------

void cmd_gen_corpus(const Common& c) {
  const auto cfg = load_config(c);
  const auto seed = run_seed(c, cfg);
  const fs::path out = c.out;
  const auto corpus = pipeline::gen_corpus(cfg.corpus, seed);
  pipeline::write_documents(out / "train.jsonl", corpus.train);
  pipeline::write_documents(out / "test.jsonl", corpus.test);

  std::vector<eval::SummaryPair> pairs;
  for (const auto& d : corpus.train) pairs.push_back({d.sentences, d.summary});
  const auto st = eval::corpus_stats(pairs);
  eval::MetricReport r;
  r.add("documents", static_cast<double>(st.documents));
  r.add("source_sentences", st.mean_source_sentences);
  r.add("source_words", st.mean_source_words);
  r.add("summary_sentences", st.mean_summary_sentences);
  r.add("summary_words", st.mean_summary_words);
  r.add("compression_sentence_pct", st.compression_sentence);
  r.add("compression_word_pct", st.compression_word);
  r.add("word_overlap_pct", st.word_overlap);
  util::write_file(out / "stats.csv", r.to_csv());
  std::cout << r.to_table();
  start_manifest("gen-corpus", c, cfg).write(out);
}

void cmd_simulate_asr(const Common& c, const std::string& corpus_dir, double rate) {
  auto cfg = load_config(c);
  const auto seed = run_seed(c, cfg);
  const fs::path out = c.out, in = corpus_dir;
  if (rate >= 0) cfg.channel.sub_rate = rate;
  const auto train_docs = pipeline::read_documents(in / "train.jsonl");
  const auto test_docs = pipeline::read_documents(in / "test.jsonl");
  const auto vocab = pipeline::build_vocab(train_docs, cfg.bpe_size);
  vocab.save(out / "vocab.bpe");
  const auto train = pipeline::tokenize(train_docs, vocab);
  const auto test = pipeline::tokenize(test_docs, vocab);

  auto spec = cfg.channel;
  spec.seed = pipeline::channel_seed(seed, spec.sub_rate);
  const std::size_t n = std::max(cfg.attention_hyps, cfg.posterior_hyps);
  const auto train_h = pipeline::simulate_asr(train, vocab, spec, n);
  const auto test_h = pipeline::simulate_asr(test, vocab, spec, n);
  asr::write_hypotheses(out / "train.hyps.jsonl", train_h);
  asr::write_hypotheses(out / "test.hyps.jsonl", test_h);

  std::vector<std::vector<int>> summaries;
  for (const auto& t : train) summaries.push_back(t.summary);
  model::LMTable::estimate(summaries, vocab.size(), cfg.decode.lm_add_k).save(out / "summary_lm.bin");

  eval::MetricReport r;
  r.add("sub_rate", spec.sub_rate);
  r.add("hypotheses", static_cast<double>(n));
  r.add("vocab_size", static_cast<double>(vocab.size()));
  r.add("train_wer_pct", 100.0 * pipeline::corpus_wer(train, train_h, vocab));
  r.add("test_wer_pct", 100.0 * pipeline::corpus_wer(test, test_h, vocab));
  util::write_file(out / "asr_stats.csv", r.to_csv());
  std::cout << r.to_table();
  auto m = start_manifest("simulate-asr", c, cfg);
  m.param("channel.effective_seed", std::to_string(spec.seed));
  m.input(in / "train.jsonl");
  m.input(in / "test.jsonl");
  m.write(out);
}

// Hypotheses the system reads: clean text for the oracle, ASR output otherwise.
std::vector<asr::HypothesisSet> system_inputs(System s, const std::vector<pipeline::TokenizedDoc>& docs,
                                              const fs::path& hyps_path) {
  if (s == System::kOracleText) return pipeline::clean_inputs(docs);
  auto h = asr::read_hypotheses(hyps_path);
  if (h.size() != docs.size()) throw std::runtime_error("hypothesis file does not match the documents");
  for (std::size_t i = 0; i < h.size(); ++i)
    if (h[i].doc_id != docs[i].doc_id) throw std::runtime_error("hypothesis order differs from documents");
  return h;
}

void cmd_train(const Common& c, const std::string& corpus_dir, const std::string& asr_dir, const std::string& sys,
               const std::string& init) {
  const auto cfg = load_config(c);
  const auto seed = run_seed(c, cfg);
  const System s = pipeline::parse_system(sys);
  if (!pipeline::system_trains(s)) throw std::invalid_argument("baseline-1best reuses the oracle-text model");
  const fs::path out = c.out, cdir = corpus_dir, adir = asr_dir;
  const auto vocab = text::Vocab::load(adir / "vocab.bpe");
  const auto docs = pipeline::tokenize(pipeline::read_documents(cdir / "train.jsonl"), vocab);
  const auto inputs = system_inputs(s, docs, adir / "train.hyps.jsonl");

  model::Model m(cfg.model_for(s, vocab.size()), asr::derive_seed(seed, "init/" + sys));
  std::size_t steps = cfg.training.steps;
  if (!init.empty()) {
    const auto from = model::Model::load(init);
    pipeline::copy_matching_parameters(from, m);
    steps = cfg.training.finetune_steps;
  }
  std::vector<model::Example> examples;
  for (std::size_t i = 0; i < docs.size(); ++i) examples.push_back({&inputs[i], docs[i].summary});
  const auto losses =
      pipeline::train_model(m, examples, cfg.training, steps, asr::derive_seed(seed, "batches/" + sys), &std::cerr, sys);
  m.save(out);
  std::string curve = "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) curve += std::to_string(i + 1) + "," + eval::format_number(losses[i], 6) + "\n";
  util::write_file(out / "loss.csv", curve);

  auto man = start_manifest("train", c, cfg);
  man.param("system", sys);
  man.param("steps", std::to_string(steps));
  man.input(cdir / "train.jsonl");
  man.input(adir / "vocab.bpe");
  if (s != System::kOracleText) man.input(adir / "train.hyps.jsonl");
  if (!init.empty()) man.input(fs::path(init) / "model.ckpt");
  man.write(out);
}

void cmd_summarize(const Common& c, const std::string& model_dir, const std::string& asr_dir,
                   const std::string& corpus_dir, bool clean) {
  const auto cfg = load_config(c);
  const fs::path out = c.out, adir = asr_dir;
  const auto vocab = text::Vocab::load(adir / "vocab.bpe");
  const auto m = model::Model::load(model_dir);
  std::vector<asr::HypothesisSet> inputs;
  std::vector<std::string> ids;
  if (clean) {
    const auto docs = pipeline::tokenize(pipeline::read_documents(fs::path(corpus_dir) / "test.jsonl"), vocab);
    inputs = pipeline::clean_inputs(docs);
  } else {
    inputs = asr::read_hypotheses(adir / "test.hyps.jsonl");
  }
  const auto lm = model::LMTable::load(adir / "summary_lm.bin");
  model::DecodeOptions opts;
  opts.beam = cfg.decode.beam;
  opts.lm_weight = cfg.decode.lm_weight;
  opts.lm = &lm;
  std::vector<std::string> lines;
  for (const auto& h : inputs) {
    const auto d = model::summarize(m, h, opts);
    std::string joined;
    for (const auto& w : eval::normalize_words(text::decode(d.tokens, vocab))) joined += (joined.empty() ? "" : " ") + w;
    lines.push_back(h.doc_id + "\t" + joined);
  }
  util::write_file(out / "summaries.txt", join_lines(lines));
  auto man = start_manifest("summarize", c, cfg, false);
  man.param("input", clean ? "clean" : "asr");
  man.input(fs::path(model_dir) / "model.ckpt");
  man.input(adir / "vocab.bpe");
  man.input(clean ? fs::path(corpus_dir) / "test.jsonl" : adir / "test.hyps.jsonl");
  man.write(out);
}

void cmd_evaluate(const Common& c, const std::string& summaries, const std::string& docs_path) {
  const fs::path out = c.out;
  std::map<std::string, std::string> produced;
  std::istringstream in(util::read_file(summaries));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("summaries: expected 'doc_id<TAB>summary' lines");
    produced[line.substr(0, tab)] = line.substr(tab + 1);
  }
  const auto docs = pipeline::read_documents(docs_path);
  eval::RougeScores total;
  std::size_t missing = 0;
  for (const auto& d : docs) {
    auto it = produced.find(d.doc_id);
    if (it == produced.end()) ++missing;
    const auto hyp = eval::normalize_words(it == produced.end() ? "" : it->second);
    const auto r = eval::rouge_all(hyp, eval::normalize_words(pipeline::summary_text(d)));
    total.rouge1 += r.rouge1;
    total.rouge2 += r.rouge2;
    total.rougeL += r.rougeL;
  }
  const double n = static_cast<double>(std::max<std::size_t>(docs.size(), 1));
  eval::MetricReport r;
  r.add("documents", static_cast<double>(docs.size()));
  r.add("missing", static_cast<double>(missing));
  r.add("rouge1", total.rouge1 / n);
  r.add("rouge2", total.rouge2 / n);
  r.add("rougeL", total.rougeL / n);
  util::write_file(out / "metrics.csv", r.to_csv());
  std::cout << r.to_table();
  util::Manifest man;
  man.command = "evaluate";
  man.input(summaries);
  man.input(docs_path);
  man.write(out);
}

void cmd_oracle(const Common& c, const std::string& docs_path, std::size_t max_k) {
  const fs::path out = c.out;
  const auto docs = pipeline::read_documents(docs_path);
  std::vector<std::string> lines;
  eval::RougeScores total;
  for (const auto& d : docs) {
    const auto res = eval::oracle_extractive(d.sentences, eval::normalize_words(pipeline::summary_text(d)), max_k);
    std::string idx, text;
    for (auto i : res.indices) {
      idx += (idx.empty() ? "" : ",") + std::to_string(i);
      text += (text.empty() ? "" : " ") + d.sentences[i];
    }
    lines.push_back(d.doc_id + "\t" + idx + "\t" + text);
    total.rouge1 += res.scores.rouge1;
    total.rouge2 += res.scores.rouge2;
    total.rougeL += res.scores.rougeL;
  }
  const double n = static_cast<double>(std::max<std::size_t>(docs.size(), 1));
  eval::MetricReport r;
  r.add("rouge1", total.rouge1 / n);
  r.add("rouge2", total.rouge2 / n);
  r.add("rougeL", total.rougeL / n);
  util::write_file(out / "oracle.txt", join_lines(lines));
  util::write_file(out / "metrics.csv", r.to_csv());
  std::cout << r.to_table();
  util::Manifest man;
  man.command = "oracle-extract";
  man.param("max_k", std::to_string(max_k));
  man.input(docs_path);
  man.write(out);
}

void cmd_experiment(const Common& c) {
  const auto cfg = load_config(c);
  const fs::path out = c.out;
  const auto rows = pipeline::run_experiment(cfg, out, std::cerr);
  std::cout << pipeline::results_table(rows);
  start_manifest("experiment", c, cfg, false).write(out);
}

void cmd_sweep(const Common& c) {
  const auto cfg = load_config(c);
  const fs::path out = c.out;
  const auto rows = pipeline::wer_sweep(cfg, out, std::cerr);
  std::cout << pipeline::sweep_csv(rows);
  start_manifest("sweep-wer", c, cfg, false).write(out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fusion of ASR hypotheses for spoken document summarization"};
  app.require_subcommand(1);

  Common gen, sim, train, summ, ev, orc, exp, sweep;
  std::string corpus_dir, asr_dir, system, init, model_dir, summaries, docs;
  double rate = -1.0;
  bool clean = false;
  std::size_t max_k = 2;

  auto* g = app.add_subcommand("gen-corpus", "generate the synthetic document/summary corpus");
  add_common(g, gen);

  auto* s = app.add_subcommand("simulate-asr", "build the vocabulary and N-best hypotheses for a corpus");
  add_common(s, sim);
  s->add_option("--corpus", corpus_dir, "directory written by gen-corpus")->required();
  s->add_option("--sub-rate", rate, "substitution rate (overrides channel.sub_rate)");

  auto* t = app.add_subcommand("train", "train one system");
  add_common(t, train);
  t->add_option("--corpus", corpus_dir, "directory written by gen-corpus")->required();
  t->add_option("--asr", asr_dir, "directory written by simulate-asr")->required();
  t->add_option("--system", system, "system name")->required();
  t->add_option("--init", init, "model directory to start from (uses train.finetune_steps)");

  auto* su = app.add_subcommand("summarize", "decode summaries for the test split");
  add_common(su, summ, false);
  su->add_option("--model", model_dir, "trained model directory")->required();
  su->add_option("--asr", asr_dir, "directory written by simulate-asr")->required();
  su->add_option("--corpus", corpus_dir, "corpus directory (needed with --clean)");
  su->add_flag("--clean", clean, "summarize the clean test text instead of ASR output");

  auto* e = app.add_subcommand("evaluate", "score summaries against references");
  add_common(e, ev, false);
  e->add_option("--summaries", summaries, "doc_id<TAB>summary lines")->required();
  e->add_option("--docs", docs, "reference documents (jsonl)")->required();

  auto* o = app.add_subcommand("oracle-extract", "best extractive sentence subset per document");
  add_common(o, orc, false);
  o->add_option("--docs", docs, "documents (jsonl)")->required();
  o->add_option("--max-k", max_k, "largest subset size");

  auto* x = app.add_subcommand("experiment", "train and evaluate the full systems ladder");
  add_common(x, exp, false);

  auto* w = app.add_subcommand("sweep-wer", "re-score trained systems across substitution rates");
  add_common(w, sweep, false);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) cmd_gen_corpus(gen);
    else if (*s) cmd_simulate_asr(sim, corpus_dir, rate);
    else if (*t) cmd_train(train, corpus_dir, asr_dir, system, init);
    else if (*su) {
      if (clean && corpus_dir.empty()) throw std::invalid_argument("--clean needs --corpus");
      cmd_summarize(summ, model_dir, asr_dir, corpus_dir, clean);
    } else if (*e) cmd_evaluate(ev, summaries, docs);
    else if (*o) cmd_oracle(orc, docs, max_k);
    else if (*x) cmd_experiment(exp);
    else if (*w) cmd_sweep(sweep);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
