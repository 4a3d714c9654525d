#include "mhsum/pipeline/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mhsum/util/kvfile.hpp"

namespace mhsum::pipeline {

namespace fs = std::filesystem;

namespace {

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty() || !out.empty()) out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, const std::string& key) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw std::invalid_argument("config key '" + key + "': bad number '" + s + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw std::invalid_argument("config key '" + key + "': bad integer '" + s + "'");
  }
  return v;
}

std::size_t get_size(const util::KeyValues& kv, const char* key, std::size_t fallback) {
  const auto v = util::kv_int(kv, key, static_cast<long long>(fallback));
  if (v < 0) throw std::invalid_argument(std::string("config key '") + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

std::string rate_tag(double rate) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << rate;
  return s.str();
}

}  // namespace

const std::vector<System>& all_systems() {
  static const std::vector<System> systems{System::kOracleText,  System::kBaseline1Best,    System::kRetrain1Best,
                                           System::kConfidence, System::kPosteriorFusion, System::kAttentionFusion};
  return systems;
}

std::string system_name(System s) {
  switch (s) {
    case System::kOracleText: return "oracle-text";
    case System::kBaseline1Best: return "baseline-1best";
    case System::kRetrain1Best: return "retrain-1best";
    case System::kConfidence: return "confidence";
    case System::kPosteriorFusion: return "posterior-fusion";
    case System::kAttentionFusion: return "attention-fusion";
  }
  return "?";
}

System parse_system(std::string_view name) {
  for (auto s : all_systems())
    if (system_name(s) == name) return s;
  throw std::invalid_argument("unknown system '" + std::string(name) + "'");
}

model::FusionMode system_mode(System s) {
  switch (s) {
    case System::kConfidence: return model::FusionMode::kConfidence;
    case System::kPosteriorFusion: return model::FusionMode::kPosterior;
    case System::kAttentionFusion: return model::FusionMode::kAttention;
    default: return model::FusionMode::kNone;
  }
}

bool system_trains(System s) { return s != System::kBaseline1Best; }

void ExperimentConfig::validate() const {
  corpus.validate();
  channel.validate();
  if (seeds.empty()) throw std::invalid_argument("experiment: at least one seed is required");
  if (sweep_rates.empty()) throw std::invalid_argument("experiment: the channel grid is empty");
  for (double r : sweep_rates)
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("experiment: sweep rate outside [0, 1]");
  if (systems.empty()) throw std::invalid_argument("experiment: no systems selected");
  if (attention_hyps == 0 || attention_hyps > asr::kPosteriorCandidates || posterior_hyps == 0 ||
      posterior_hyps > asr::kPosteriorCandidates) {
    throw std::invalid_argument("experiment: hypothesis counts must lie in [1, " +
                                std::to_string(asr::kPosteriorCandidates) + "]");
  }
  if (training.batch == 0) throw std::invalid_argument("experiment: batch size must be positive");
  if (decode.beam == 0) throw std::invalid_argument("experiment: beam width must be positive");
  auto needs = [&](System s) { return std::find(systems.begin(), systems.end(), s) != systems.end(); };
  if (needs(System::kBaseline1Best) && !needs(System::kOracleText)) {
    throw std::invalid_argument("experiment: baseline-1best reuses the oracle-text model; select both");
  }
  if (training.finetune_from_oracle && !needs(System::kOracleText)) {
    for (auto s : systems)
      if (s != System::kOracleText && system_trains(s)) {
        throw std::invalid_argument("experiment: fine-tuning from the oracle needs oracle-text selected");
      }
  }
  auto m = model;
  m.vocab_size = 1000;
  m.validate();
}

util::KeyValues ExperimentConfig::to_kv() const {
  util::KeyValues kv = model.to_kv();
  kv.erase("model.vocab_size");
  kv.erase("model.fusion_mode");
  kv.erase("model.num_hyps");
  corpus.write_kv(kv);
  kv["channel.sub_rate"] = shortest(channel.sub_rate);
  kv["channel.confusion_sharpness"] = shortest(channel.confusion_sharpness);
  kv["channel.error_sharpness_ratio"] = shortest(channel.error_sharpness_ratio);
  kv["channel.ref_rank_decay"] = shortest(channel.ref_rank_decay);
  std::string rates;
  for (double r : sweep_rates) rates += (rates.empty() ? "" : ",") + shortest(r);
  kv["sweep.rates"] = rates;
  kv["fusion.attention_hyps"] = std::to_string(attention_hyps);
  kv["fusion.posterior_hyps"] = std::to_string(posterior_hyps);
  kv["bpe.size"] = std::to_string(bpe_size);
  kv["train.steps"] = std::to_string(training.steps);
  kv["train.finetune_steps"] = std::to_string(training.finetune_steps);
  kv["train.finetune_from_oracle"] = training.finetune_from_oracle ? "true" : "false";
  kv["train.batch"] = std::to_string(training.batch);
  kv["train.lr"] = shortest(training.optimizer.peak_lr);
  kv["train.warmup"] = std::to_string(training.optimizer.warmup);
  kv["train.beta1"] = shortest(training.optimizer.beta1);
  kv["train.beta2"] = shortest(training.optimizer.beta2);
  kv["train.clip_norm"] = shortest(training.optimizer.clip_norm);
  kv["train.log_every"] = std::to_string(training.log_every);
  kv["decode.beam"] = std::to_string(decode.beam);
  kv["decode.lm_weight"] = shortest(decode.lm_weight);
  kv["decode.lm_add_k"] = shortest(decode.lm_add_k);
  std::string seeds_s;
  for (auto s : seeds) seeds_s += (seeds_s.empty() ? "" : ",") + std::to_string(s);
  kv["seeds"] = seeds_s;
  std::string sys;
  for (auto s : systems) sys += (sys.empty() ? "" : ",") + system_name(s);
  kv["systems"] = sys;
  return kv;
}

ExperimentConfig ExperimentConfig::from_kv(const util::KeyValues& kv) {
  static const std::vector<std::string> prefixes{"model.", "corpus.", "channel.", "sweep.", "fusion.", "bpe.",
                                                 "train.", "decode."};
  for (const auto& [k, v] : kv) {
    const bool known = k == "seeds" || k == "systems" || std::any_of(prefixes.begin(), prefixes.end(), [&](auto& p) {
                         return k.rfind(p, 0) == 0;
                       });
    if (!known) throw std::invalid_argument("unknown config key '" + k + "'");
  }
  ExperimentConfig c;
  c.model = model::ModelConfig::from_kv(kv, c.model);
  c.corpus = CorpusConfig::from_kv(kv);
  c.channel.sub_rate = util::kv_double(kv, "channel.sub_rate", c.channel.sub_rate);
  c.channel.confusion_sharpness = util::kv_double(kv, "channel.confusion_sharpness", c.channel.confusion_sharpness);
  c.channel.error_sharpness_ratio =
      util::kv_double(kv, "channel.error_sharpness_ratio", c.channel.error_sharpness_ratio);
  c.channel.ref_rank_decay = util::kv_double(kv, "channel.ref_rank_decay", c.channel.ref_rank_decay);
  if (kv.count("sweep.rates")) {
    c.sweep_rates.clear();
    for (const auto& r : split_list(kv.at("sweep.rates"))) c.sweep_rates.push_back(parse_double(r, "sweep.rates"));
  }
  c.attention_hyps = get_size(kv, "fusion.attention_hyps", c.attention_hyps);
  c.posterior_hyps = get_size(kv, "fusion.posterior_hyps", c.posterior_hyps);
  c.bpe_size = get_size(kv, "bpe.size", c.bpe_size);
  c.training.steps = get_size(kv, "train.steps", c.training.steps);
  c.training.finetune_steps = get_size(kv, "train.finetune_steps", c.training.finetune_steps);
  c.training.finetune_from_oracle = util::kv_bool(kv, "train.finetune_from_oracle", c.training.finetune_from_oracle);
  c.training.batch = get_size(kv, "train.batch", c.training.batch);
  c.training.optimizer.peak_lr = util::kv_double(kv, "train.lr", c.training.optimizer.peak_lr);
  c.training.optimizer.warmup = get_size(kv, "train.warmup", c.training.optimizer.warmup);
  c.training.optimizer.beta1 = util::kv_double(kv, "train.beta1", c.training.optimizer.beta1);
  c.training.optimizer.beta2 = util::kv_double(kv, "train.beta2", c.training.optimizer.beta2);
  c.training.optimizer.clip_norm = util::kv_double(kv, "train.clip_norm", c.training.optimizer.clip_norm);
  c.training.log_every = get_size(kv, "train.log_every", c.training.log_every);
  c.decode.beam = get_size(kv, "decode.beam", c.decode.beam);
  c.decode.lm_weight = util::kv_double(kv, "decode.lm_weight", c.decode.lm_weight);
  c.decode.lm_add_k = util::kv_double(kv, "decode.lm_add_k", c.decode.lm_add_k);
  if (kv.count("seeds")) {
    c.seeds.clear();
    for (const auto& s : split_list(kv.at("seeds"))) c.seeds.push_back(parse_u64(s, "seeds"));
  }
  if (kv.count("systems")) {
    c.systems.clear();
    for (const auto& s : split_list(kv.at("systems"))) c.systems.push_back(parse_system(s));
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) { return from_kv(util::load_kv(path)); }

model::ModelConfig ExperimentConfig::model_for(System s, std::size_t vocab_size) const {
  auto m = model;
  m.vocab_size = vocab_size;
  m.fusion_mode = system_mode(s);
  m.num_hyps = hyps_for(s);
  m.validate();
  return m;
}

std::size_t ExperimentConfig::hyps_for(System s) const {
  switch (s) {
    case System::kPosteriorFusion: return posterior_hyps;
    case System::kAttentionFusion: return attention_hyps;
    default: return 1;
  }
}

text::Vocab build_vocab(std::span<const DocumentPair> train, std::size_t bpe_size) {
  std::vector<std::string> lines;
  for (const auto& d : train) lines.insert(lines.end(), d.sentences.begin(), d.sentences.end());
  return text::train_bpe(lines, bpe_size == 0 ? std::numeric_limits<std::size_t>::max() : bpe_size);
}

std::vector<TokenizedDoc> tokenize(std::span<const DocumentPair> docs, const text::Vocab& vocab) {
  std::vector<TokenizedDoc> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    TokenizedDoc t;
    t.doc_id = d.doc_id;
    t.source = text::prepare_document(d.sentences, vocab);
    const auto joined = summary_text(d);
    t.summary = text::encode(joined, vocab).ids;
    t.reference = eval::normalize_words(joined);
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<asr::HypothesisSet> simulate_asr(std::span<const TokenizedDoc> docs, const text::Vocab& vocab,
                                             const asr::ChannelSpec& spec, std::size_t n) {
  std::vector<asr::HypothesisSet> out;
  out.reserve(docs.size());
  for (const auto& d : docs) {
    auto s = spec;
    s.seed = asr::derive_seed(spec.seed, d.doc_id);
    out.push_back(asr::generate_nbest_aligned(asr::channel_corrupt(d.source, vocab, s), n, d.doc_id));
  }
  return out;
}

std::vector<asr::HypothesisSet> clean_inputs(std::span<const TokenizedDoc> docs) {
  std::vector<asr::HypothesisSet> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(asr::reference_hypothesis(d.source, d.doc_id));
  return out;
}

double corpus_wer(std::span<const TokenizedDoc> docs, std::span<const asr::HypothesisSet> hyps,
                  const text::Vocab& vocab) {
  if (docs.size() != hyps.size()) throw std::invalid_argument("corpus_wer: document and hypothesis counts differ");
  std::size_t errors = 0, words = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto ref = text::split_words(text::decode(docs[i].source.ids, vocab));
    const auto hyp = text::split_words(text::decode(hyps[i].one_best(), vocab));
    const auto e = asr::word_edits(hyp, ref);
    errors += e.errors;
    words += e.ref_words;
  }
  return words == 0 ? 0.0 : static_cast<double>(errors) / static_cast<double>(words);
}

std::size_t copy_matching_parameters(const model::Model& from, model::Model& to) {
  std::map<std::string, num::Tensor> src;
  for (auto& [name, t] : from.named_parameters()) src.emplace(name, t);
  std::size_t copied = 0;
  for (auto& [name, t] : to.named_parameters()) {
    auto it = src.find(name);
    if (it == src.end() || it->second.shape() != t.shape()) continue;
    auto dst = t.mutable_data();
    std::copy(it->second.data().begin(), it->second.data().end(), dst.begin());
    ++copied;
  }
  return copied;
}

std::vector<double> train_model(model::Model& m, std::span<const model::Example> examples, const TrainingConfig& cfg,
                                std::size_t steps, std::uint64_t seed, std::ostream* log, const std::string& tag) {
  if (examples.empty()) throw std::invalid_argument("train_model: no training examples");
  model::Adam opt(m.parameters(), cfg.optimizer);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0;
  std::vector<double> losses;
  double window = 0.0;
  std::size_t in_window = 0;
  std::vector<model::Example> batch;
  for (std::size_t step = 1; step <= steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(examples[order[cursor++]]);
    }
    const double loss = model::training_step(m, opt, batch);
    losses.push_back(loss);
    window += loss;
    ++in_window;
    if (log && cfg.log_every > 0 && (step % cfg.log_every == 0 || step == steps)) {
      *log << "[" << tag << "] step " << step << "/" << steps << " loss " << std::fixed << std::setprecision(4)
           << window / static_cast<double>(in_window) << " lr " << std::scientific << std::setprecision(2)
           << opt.last_lr() << std::defaultfloat << "\n";
      log->flush();
      window = 0.0;
      in_window = 0;
    }
  }
  return losses;
}

EvalOutput evaluate_model(const model::Model& m, std::span<const asr::HypothesisSet> inputs,
                          std::span<const TokenizedDoc> docs, const text::Vocab& vocab, const DecodeConfig& decode,
                          const model::LMTable* lm) {
  if (inputs.size() != docs.size()) throw std::invalid_argument("evaluate_model: input and document counts differ");
  EvalOutput out;
  model::DecodeOptions opts;
  opts.beam = decode.beam;
  opts.lm_weight = decode.lm_weight;
  opts.lm = lm;
  eval::RougeScores total;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto d = model::summarize(m, inputs[i], opts);
    const std::string text = text::decode(d.tokens, vocab);
    const auto words = eval::normalize_words(text);
    const auto r = eval::rouge_all(words, docs[i].reference);
    total.rouge1 += r.rouge1;
    total.rouge2 += r.rouge2;
    total.rougeL += r.rougeL;
    std::string joined;
    for (const auto& w : words) joined += (joined.empty() ? "" : " ") + w;
    out.summaries.push_back(docs[i].doc_id + "\t" + joined);
  }
  const double n = static_cast<double>(std::max<std::size_t>(docs.size(), 1));
  out.mean = {total.rouge1 / n, total.rouge2 / n, total.rougeL / n};
  return out;
}

std::string results_csv(std::span<const ResultRow> rows) {
  std::string out = "system,seed,rate,wer,hyps,rouge1,rouge2,rougeL,status\n";
  for (const auto& r : rows) {
    out += system_name(r.system) + "," + std::to_string(r.seed) + "," + eval::format_number(r.rate, 2) + "," +
           eval::format_number(100.0 * r.wer, 2) + "," + std::to_string(r.hyps) + "," +
           eval::format_number(100.0 * r.rouge.rouge1, 2) + "," + eval::format_number(100.0 * r.rouge.rouge2, 2) +
           "," + eval::format_number(100.0 * r.rouge.rougeL, 2) + "," + (r.ok ? "ok" : "failed") + "\n";
  }
  return out;
}

std::optional<double> mean_rouge1(std::span<const ResultRow> rows, System s) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.system == s && r.ok) {
      total += r.rouge.rouge1;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

std::string results_table(std::span<const ResultRow> rows) {
  std::vector<std::vector<std::string>> table;
  for (auto s : all_systems()) {
    double r1 = 0, r2 = 0, rl = 0, wer = 0;
    std::size_t n = 0, failed = 0, hyps = 0;
    for (const auto& r : rows) {
      if (r.system != s) continue;
      if (!r.ok) {
        ++failed;
        continue;
      }
      r1 += r.rouge.rouge1;
      r2 += r.rouge.rouge2;
      rl += r.rouge.rougeL;
      wer += r.wer;
      hyps = r.hyps;
      ++n;
    }
    if (n == 0 && failed == 0) continue;
    const double k = static_cast<double>(std::max<std::size_t>(n, 1));
    table.push_back({system_name(s), std::to_string(hyps), eval::format_number(100.0 * wer / k),
                     eval::format_number(100.0 * r1 / k), eval::format_number(100.0 * r2 / k),
                     eval::format_number(100.0 * rl / k), std::to_string(n), std::to_string(failed)});
  }
  return eval::format_table({"system", "N", "WER", "R-1", "R-2", "R-L", "seeds", "failed"}, table);
}

fs::path seed_dir(const fs::path& out, std::uint64_t seed) { return out / ("seed-" + std::to_string(seed)); }

fs::path model_dir(const fs::path& out, std::uint64_t seed, System s) {
  return seed_dir(out, seed) / "models" / system_name(s);
}

std::uint64_t channel_seed(std::uint64_t seed, double rate) {
  return asr::derive_seed(seed, "channel@" + rate_tag(rate));
}

SeedData prepare_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out) {
  const fs::path dir = seed_dir(out, seed);
  SeedData d{gen_corpus(cfg.corpus, seed), text::Vocab({}, {}), {}, {}, {}, {}, model::LMTable::uniform(1)};
  write_documents(dir / "train.jsonl", d.corpus.train);
  write_documents(dir / "test.jsonl", d.corpus.test);
  d.vocab = build_vocab(d.corpus.train, cfg.bpe_size);
  d.vocab.save(dir / "vocab.bpe");
  d.train = tokenize(d.corpus.train, d.vocab);
  d.test = tokenize(d.corpus.test, d.vocab);

  auto spec = cfg.channel;
  spec.seed = channel_seed(seed, spec.sub_rate);
  const std::size_t n = std::max(cfg.attention_hyps, cfg.posterior_hyps);
  d.train_hyps = simulate_asr(d.train, d.vocab, spec, n);
  d.test_hyps = simulate_asr(d.test, d.vocab, spec, n);
  asr::write_hypotheses(dir / "asr" / ("train-" + rate_tag(spec.sub_rate) + ".jsonl"), d.train_hyps);
  asr::write_hypotheses(dir / "asr" / ("test-" + rate_tag(spec.sub_rate) + ".jsonl"), d.test_hyps);

  std::vector<std::vector<int>> summaries;
  for (const auto& t : d.train) summaries.push_back(t.summary);
  d.lm = model::LMTable::estimate(summaries, d.vocab.size(), cfg.decode.lm_add_k);
  d.lm.save(dir / "summary_lm.bin");
  return d;
}

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  fs::create_directories(out);
  util::write_file(out / "config.txt", util::format_kv(cfg.to_kv()));
  auto selected = [&](System s) { return std::find(cfg.systems.begin(), cfg.systems.end(), s) != cfg.systems.end(); };

  std::vector<ResultRow> rows;
  for (auto seed : cfg.seeds) {
    log << "== seed " << seed << "\n";
    const SeedData data = prepare_seed(cfg, seed, out);
    const fs::path dir = seed_dir(out, seed);
    const double wer = corpus_wer(data.test, data.test_hyps, data.vocab);
    const auto clean_train = clean_inputs(data.train);
    const auto clean_test = clean_inputs(data.test);
    log << "vocab " << data.vocab.size() << ", test 1-best WER " << eval::format_number(100.0 * wer) << "%\n";

    std::optional<model::Model> oracle;
    for (auto s : all_systems()) {
      if (!selected(s)) continue;
      ResultRow row;
      row.system = s;
      row.seed = seed;
      row.rate = s == System::kOracleText ? 0.0 : cfg.channel.sub_rate;
      row.wer = s == System::kOracleText ? 0.0 : wer;
      row.hyps = cfg.hyps_for(s);
      const std::string tag = system_name(s) + "/" + std::to_string(seed);
      try {
        const bool clean = s == System::kOracleText;
        const auto& train_inputs = clean ? clean_train : data.train_hyps;
        const auto& test_inputs = clean ? clean_test : data.test_hyps;
        std::optional<model::Model> trained;
        if (s == System::kBaseline1Best) {
          if (!oracle) throw std::runtime_error("oracle-text model unavailable");
        } else {
          const std::uint64_t init_seed = asr::derive_seed(seed, "init/" + system_name(s));
          model::Model m(cfg.model_for(s, data.vocab.size()), init_seed);
          std::size_t steps = cfg.training.steps;
          if (s != System::kOracleText && cfg.training.finetune_from_oracle) {
            if (!oracle) throw std::runtime_error("oracle-text model unavailable for fine-tuning");
            copy_matching_parameters(*oracle, m);
            steps = cfg.training.finetune_steps;
          }
          std::vector<model::Example> examples;
          for (std::size_t i = 0; i < data.train.size(); ++i)
            examples.push_back({&train_inputs[i], data.train[i].summary});
          train_model(m, examples, cfg.training, steps, asr::derive_seed(seed, "batches/" + system_name(s)), &log,
                      tag);
          m.save(model_dir(out, seed, s));
          trained.emplace(std::move(m));
        }
        const model::Model& m = s == System::kBaseline1Best ? *oracle : *trained;
        const auto ev = evaluate_model(m, test_inputs, data.test, data.vocab, cfg.decode, &data.lm);
        row.rouge = ev.mean;
        std::string lines;
        for (const auto& l : ev.summaries) lines += l + "\n";
        util::write_file(dir / "summaries" / (system_name(s) + ".txt"), lines);
        if (s == System::kOracleText) oracle = std::move(trained);
        log << "[" << tag << "] ROUGE-1 " << eval::format_number(100.0 * row.rouge.rouge1) << "\n";
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
        log << "[" << tag << "] failed: " << e.what() << "\n";
      }
      rows.push_back(std::move(row));
    }
  }
  util::write_file(out / "results.csv", results_csv(rows));
  util::write_file(out / "results.txt", results_table(rows));
  return rows;
}

std::vector<SweepRow> wer_sweep(const ExperimentConfig& cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  std::vector<System> systems;
  for (auto s : all_systems())
    if (s != System::kOracleText && std::find(cfg.systems.begin(), cfg.systems.end(), s) != cfg.systems.end())
      systems.push_back(s);
  if (std::find(systems.begin(), systems.end(), System::kRetrain1Best) == systems.end()) {
    throw std::invalid_argument("wer_sweep: retrain-1best is required as the reference system");
  }
  std::vector<double> rates = cfg.sweep_rates;
  std::sort(rates.begin(), rates.end());
  if (rates.size() < 3) throw std::invalid_argument("wer_sweep: need at least three rates");

  // (rate index, system) -> sums over seeds
  std::map<std::pair<std::size_t, System>, double> r1_sum;
  std::vector<double> wer_sum(rates.size(), 0.0);
  for (auto seed : cfg.seeds) {
    const fs::path dir = seed_dir(out, seed);
    const auto vocab = text::Vocab::load(dir / "vocab.bpe");
    const auto test = tokenize(read_documents(dir / "test.jsonl"), vocab);
    const auto lm = model::LMTable::load(dir / "summary_lm.bin");
    std::map<System, model::Model> models;
    for (auto s : systems) {
      const System src = s == System::kBaseline1Best ? System::kOracleText : s;
      const fs::path md = model_dir(out, seed, src);
      if (!fs::exists(md / "model.ckpt")) {
        throw std::runtime_error("wer_sweep: missing checkpoint for system " + system_name(src) + " (seed " +
                                 std::to_string(seed) + ") at " + md.string());
      }
      models.emplace(s, model::Model::load(md));
    }
    const std::size_t n = std::max(cfg.attention_hyps, cfg.posterior_hyps);
    for (std::size_t ri = 0; ri < rates.size(); ++ri) {
      auto spec = cfg.channel;
      spec.sub_rate = rates[ri];
      spec.seed = channel_seed(seed, rates[ri]);
      const auto hyps = simulate_asr(test, vocab, spec, n);
      const double wer = corpus_wer(test, hyps, vocab);
      wer_sum[ri] += wer;
      for (auto s : systems) {
        const auto ev = evaluate_model(models.at(s), hyps, test, vocab, cfg.decode, &lm);
        r1_sum[{ri, s}] += ev.mean.rouge1;
        log << "[sweep " << rate_tag(rates[ri]) << " seed " << seed << "] " << system_name(s) << " ROUGE-1 "
            << eval::format_number(100.0 * ev.mean.rouge1) << " (WER " << eval::format_number(100.0 * wer) << "%)\n";
      }
    }
  }
  const double k = static_cast<double>(cfg.seeds.size());
  std::vector<SweepRow> rows;
  for (std::size_t ri = 0; ri < rates.size(); ++ri) {
    const double base = r1_sum[{ri, System::kRetrain1Best}] / k;
    for (auto s : systems) rows.push_back({rates[ri], wer_sum[ri] / k, s, r1_sum[{ri, s}] / k - base});
  }
  util::write_file(out / "sweep.csv", sweep_csv(rows));
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "rate,wer,system,rouge1_delta\n";
  for (const auto& r : rows) {
    out += eval::format_number(r.rate, 2) + "," + eval::format_number(100.0 * r.wer, 2) + "," +
           system_name(r.system) + "," + eval::format_number(100.0 * r.rouge1_delta, 2) + "\n";
  }
  return out;
}

}  // namespace mhsum::pipeline
