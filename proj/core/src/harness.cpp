#include "imsm/harness.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "imsm/random.hpp"

namespace imsm {

TaskKind task_kind_from_name(const std::string& name) {
  if (name == "copy") return TaskKind::copy;
  if (name == "reverse") return TaskKind::reverse;
  if (name == "mod_add") return TaskKind::mod_add;
  if (name == "sort_digits") return TaskKind::sort_digits;
  throw UsageError("unknown task kind: " + name);
}

std::string task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::copy: return "copy";
    case TaskKind::reverse: return "reverse";
    case TaskKind::mod_add: return "mod_add";
    case TaskKind::sort_digits: return "sort_digits";
  }
  throw UsageError("unknown task kind");
}

namespace {

std::string random_letters(Rng& rng, int len) {
  std::string s;
  for (int i = 0; i < len; ++i)
    s += static_cast<char>('a' + rng.uniform_int(0, 25));
  return s;
}

std::string random_digits(Rng& rng, int len) {
  std::string s;
  for (int i = 0; i < len; ++i)
    s += static_cast<char>('0' + rng.uniform_int(0, 9));
  return s;
}

TextPair make_pair_for(TaskKind kind, Rng& rng, int min_len, int max_len) {
  const int len = rng.uniform_int(min_len, max_len);
  switch (kind) {
    case TaskKind::copy: {
      std::string s = random_letters(rng, len);
      return {"copy:" + s + "→", s};
    }
    case TaskKind::reverse: {
      std::string s = random_letters(rng, len);
      return {"rev:" + s + "→", std::string(s.rbegin(), s.rend())};
    }
    case TaskKind::sort_digits: {
      std::string s = random_digits(rng, len);
      std::string sorted = s;
      std::sort(sorted.begin(), sorted.end());
      return {"sort:" + s + "→", sorted};
    }
    case TaskKind::mod_add: {
      // Fixed-width rendering: every digit sits at the same position in the
      // prompt, which keeps the positional structure of the task uniform.
      const auto two = [](int v) {
        std::string s = std::to_string(v);
        return s.size() < 2 ? "0" + s : s;
      };
      const int a = rng.uniform_int(0, 99), b = rng.uniform_int(0, 99);
      return {two(a) + "+" + two(b) + "=", two((a + b) % 100)};
    }
  }
  throw UsageError("unknown task kind");
}

}  // namespace

SynthSplits synth(const TaskSpec& spec) {
  if (spec.size < 3) throw UsageError("synth: size must be >= 3");
  if (spec.min_len < 1 || spec.max_len < spec.min_len)
    throw UsageError("synth: infeasible length bounds");

  Rng rng(spec.seed);
  std::vector<TextPair> rows;
  std::set<std::string> seen;
  // Unique-prompt rejection sampling; bail out when the space is too small.
  long attempts = 0;
  const long max_attempts = 200L * spec.size + 10000;
  while (static_cast<int>(rows.size()) < spec.size) {
    if (++attempts > max_attempts)
      throw UsageError("synth: bounds infeasible for requested size");
    TextPair p = make_pair_for(spec.kind, rng, spec.min_len, spec.max_len);
    if (seen.insert(p.first).second) rows.push_back(std::move(p));
  }

  std::shuffle(rows.begin(), rows.end(), rng.engine());
  const int n = spec.size;
  const int n_train = std::max(1, (n * 8) / 10);
  const int n_dev = std::max(1, n / 10);
  SynthSplits s;
  s.train.assign(rows.begin(), rows.begin() + n_train);
  s.dev.assign(rows.begin() + n_train,
               rows.begin() + std::min(n, n_train + n_dev));
  s.test.assign(rows.begin() + std::min(n, n_train + n_dev), rows.end());
  return s;
}

void write_jsonl(const std::string& path, const std::vector<TextPair>& rows) {
  std::ofstream out(path);
  if (!out) throw UsageError("write_jsonl: cannot write " + path);
  for (const TextPair& p : rows) {
    nlohmann::json j = {{"prompt", p.first}, {"completion", p.second}};
    out << j.dump() << '\n';
  }
}

Vocab default_task_vocab() {
  return Vocab::build(
      {"abcdefghijklmnopqrstuvwxyz0123456789+=:→"});
}

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw UsageError("metrics csv: cannot write " + path);
  out << "run_id,mode,task,split,exact_match,loss,tokens_per_sec,"
         "trainable_params,gate_rank,seed\n";
  for (const MetricsRow& r : rows)
    out << r.run_id << ',' << r.mode << ',' << r.task << ',' << r.split << ','
        << r.exact_match << ',' << r.loss << ',' << r.tokens_per_sec << ','
        << r.trainable_params << ',' << r.gate_rank << ',' << r.seed << '\n';
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("metrics csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError("metrics csv: empty file " + path);
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[10];
    for (int i = 0; i < 10; ++i)
      if (!std::getline(ss, f[i], ','))
        throw ParseError("metrics csv: short row in " + path);
    MetricsRow r;
    r.run_id = f[0];
    r.mode = f[1];
    r.task = f[2];
    r.split = f[3];
    r.exact_match = std::stod(f[4]);
    r.loss = std::stod(f[5]);
    r.tokens_per_sec = std::stod(f[6]);
    r.trainable_params = std::stoll(f[7]);
    r.gate_rank = std::stoi(f[8]);
    r.seed = std::stoull(f[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

double eval_exact_match(const std::vector<TextPair>& pairs, const Vocab& vocab,
                        const BaseWeights& weights, const AdapterSet* adapters,
                        const GateParams* gate_params, FusionMode fusion,
                        bool imsm_mode, const DecodeConfig& decode,
                        int limit) {
  if (pairs.empty()) throw UsageError("eval: empty dataset");
  const int n = limit > 0
                    ? std::min<int>(limit, static_cast<int>(pairs.size()))
                    : static_cast<int>(pairs.size());
  int hits = 0;
  for (int i = 0; i < n; ++i) {
    Example ex = make_example(pairs[i].first, "", vocab);
    std::vector<int> out =
        imsm_mode ? generate(ex.prompt_tokens, decode, weights, adapters,
                             gate_params, fusion)
                  : generate_vanilla(ex.prompt_tokens, decode, weights,
                                     adapters);
    if (vocab.decode(out) == pairs[i].second) ++hits;
  }
  return static_cast<double>(hits) / n;
}

nlohmann::json HarnessConfig::to_json() const {
  return {{"d_model", model.d_model},
          {"n_layers", model.n_layers},
          {"n_heads", model.n_heads},
          {"d_ff", model.d_ff},
          {"vocab_size", model.vocab_size},
          {"max_seq_len", model.max_seq_len},
          {"lora_rank", lora_rank},
          {"lora_alpha", lora_alpha},
          {"lora_sites", lora_sites},
          {"gate_rank", gate_rank},
          {"lora_lr", lora_lr},
          {"gate_lr", gate_lr},
          {"ia3_lr", ia3_lr},
          {"pretrain_lr", pretrain_lr},
          {"pretrain_epochs", pretrain_epochs},
          {"finetune_epochs", finetune_epochs},
          {"batch_size", batch_size},
          {"task_size", task_size},
          {"eval_limit", eval_limit},
          {"max_new_tokens", max_new_tokens},
          {"seeds", seeds}};
}

HarnessConfig HarnessConfig::from_json(const nlohmann::json& j) {
  HarnessConfig c;
  c.model.d_model = j.value("d_model", c.model.d_model);
  c.model.n_layers = j.value("n_layers", c.model.n_layers);
  c.model.n_heads = j.value("n_heads", c.model.n_heads);
  c.model.d_ff = j.value("d_ff", c.model.d_ff);
  c.model.vocab_size = j.value("vocab_size", c.model.vocab_size);
  c.model.max_seq_len = j.value("max_seq_len", c.model.max_seq_len);
  c.lora_rank = j.value("lora_rank", c.lora_rank);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.lora_sites = j.value("lora_sites", c.lora_sites);
  c.gate_rank = j.value("gate_rank", c.gate_rank);
  c.lora_lr = j.value("lora_lr", c.lora_lr);
  c.gate_lr = j.value("gate_lr", c.gate_lr);
  c.ia3_lr = j.value("ia3_lr", c.ia3_lr);
  c.pretrain_lr = j.value("pretrain_lr", c.pretrain_lr);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.task_size = j.value("task_size", c.task_size);
  c.eval_limit = j.value("eval_limit", c.eval_limit);
  c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
  c.seeds = j.value("seeds", c.seeds);
  return c;
}

TaskData make_task_data(const HarnessConfig& config) {
  const int per_task = std::max(3, config.task_size / 3);
  SynthSplits copy = synth({TaskKind::copy, per_task, 3, 6, 11});
  SynthSplits rev = synth({TaskKind::reverse, per_task, 3, 6, 12});
  SynthSplits sort = synth({TaskKind::sort_digits, per_task, 3, 6, 13});

  TaskData data;
  auto merge = [](std::vector<TextPair>& into,
                  const std::vector<TextPair>& a,
                  const std::vector<TextPair>& b,
                  const std::vector<TextPair>& c) {
    const std::size_t n = std::max({a.size(), b.size(), c.size()});
    for (std::size_t i = 0; i < n; ++i) {
      if (i < a.size()) into.push_back(a[i]);
      if (i < b.size()) into.push_back(b[i]);
      if (i < c.size()) into.push_back(c[i]);
    }
  };
  merge(data.task_a.train, copy.train, rev.train, sort.train);
  merge(data.task_a.dev, copy.dev, rev.dev, sort.dev);
  merge(data.task_a.test, copy.test, rev.test, sort.test);
  data.task_b = synth({TaskKind::mod_add, config.task_size, 3, 6, 14});
  return data;
}

namespace {

std::vector<Example> to_examples(const std::vector<TextPair>& pairs,
                                 const Vocab& vocab) {
  std::vector<Example> out;
  for (const TextPair& p : pairs)
    out.push_back(make_example(p.first, p.second, vocab));
  return out;
}

}  // namespace

BaseWeights pretrain_base(const HarnessConfig& config, const Vocab& vocab,
                          const TaskData& data, std::uint64_t seed) {
  ModelConfig mc = config.model;
  mc.vocab_size = vocab.size();
  BaseWeights weights = BaseWeights::init(mc, seed);

  TrainConfig tc;
  tc.lr = config.pretrain_lr;
  tc.epochs = config.pretrain_epochs;
  tc.batch_size = config.batch_size;
  tc.seed = seed;
  tc.mode = TrainMode::vanilla;
  pretrain(tc, to_examples(data.task_a.train, vocab), weights);
  return weights;
}

FinetuneResult finetune_variant(const HarnessConfig& config,
                                const Vocab& vocab, const BaseWeights& base,
                                const TaskData& data, const std::string& peft,
                                bool imsm_mode, FusionMode fusion,
                                std::uint64_t seed) {
  FinetuneResult result;
  if (peft == "lora") {
    result.adapters =
        make_lora_adapters(base.config, config.lora_rank, config.lora_alpha,
                           seed + 1000, config.lora_sites);
  } else if (peft == "ia3") {
    result.adapters = make_ia3_adapters(base.config);
  } else {
    throw UsageError("finetune: unknown peft kind " + peft);
  }

  TrainConfig tc;
  tc.lr = peft == "lora" ? config.lora_lr : config.ia3_lr;
  tc.gate_lr = config.gate_lr;
  tc.epochs = config.finetune_epochs;
  tc.batch_size = config.batch_size;
  tc.seed = seed;
  tc.mode = imsm_mode ? TrainMode::imsm : TrainMode::vanilla;
  tc.fusion = fusion;

  GateParams* gate_ptr = nullptr;
  if (imsm_mode && fusion != FusionMode::fixed_half) {
    result.gate = GateParams::init(base.config.d_model, config.gate_rank,
                                   fusion, seed + 2000);
    result.has_gate = true;
    gate_ptr = &result.gate;
  }

  result.curve = train(tc, to_examples(data.task_b.train, vocab), base,
                       &result.adapters, gate_ptr);
  result.trainable_params = trainable_param_count(
      result.adapters, result.has_gate ? &result.gate : nullptr);
  return result;
}

namespace {

struct Variant {
  std::string name;
  std::string peft;
  bool imsm;
  FusionMode fusion;
};

std::vector<MetricsRow> run_variants(const HarnessConfig& config,
                                     const Vocab& vocab,
                                     const BaseWeights& base,
                                     const TaskData& data,
                                     const std::vector<Variant>& variants,
                                     const std::string& run_id,
                                     int gate_rank_for_report) {
  DecodeConfig decode;
  decode.max_new_tokens = config.max_new_tokens;

  std::vector<MetricsRow> rows;
  const double base_a =
      eval_exact_match(data.task_a.test, vocab, base, nullptr, nullptr,
                       FusionMode::fixed_half, false, decode,
                       config.eval_limit);
  {
    MetricsRow r;
    r.run_id = run_id;
    r.mode = "base";
    r.task = "task_a";
    r.split = "a_base";
    r.exact_match = base_a;
    rows.push_back(r);
  }

  for (const Variant& v : variants) {
    for (std::uint64_t seed : config.seeds) {
      FinetuneResult ft = finetune_variant(config, vocab, base, data, v.peft,
                                           v.imsm, v.fusion, seed);
      const GateParams* gp = ft.has_gate ? &ft.gate : nullptr;
      const double final_loss =
          ft.curve.empty() ? 0.0 : ft.curve.back().loss;

      MetricsRow b_row;
      b_row.run_id = run_id;
      b_row.mode = v.name;
      b_row.task = "mod_add";
      b_row.split = "b_test";
      b_row.exact_match = eval_exact_match(
          data.task_b.test, vocab, base, &ft.adapters, gp, v.fusion, v.imsm,
          decode, config.eval_limit);
      b_row.loss = final_loss;
      b_row.trainable_params = ft.trainable_params;
      b_row.gate_rank = ft.has_gate ? ft.gate.rank : gate_rank_for_report;
      b_row.seed = seed;
      rows.push_back(b_row);

      MetricsRow a_row = b_row;
      a_row.task = "task_a";
      a_row.split = "a_retention";
      a_row.exact_match = eval_exact_match(
          data.task_a.test, vocab, base, &ft.adapters, gp, v.fusion, v.imsm,
          decode, config.eval_limit);
      rows.push_back(a_row);
    }
  }
  return rows;
}

}  // namespace

std::vector<MetricsRow> run_forgetting_protocol(const HarnessConfig& config,
                                                const Vocab& vocab,
                                                const BaseWeights& base,
                                                const TaskData& data) {
  const std::vector<Variant> variants = {
      {"vanilla-lora", "lora", false, FusionMode::fixed_half},
      {"imsm-lora", "lora", true, FusionMode::query_gate},
      {"vanilla-ia3", "ia3", false, FusionMode::fixed_half},
      {"imsm-ia3", "ia3", true, FusionMode::query_gate},
  };
  return run_variants(config, vocab, base, data, variants, "forgetting", 0);
}

std::vector<MetricsRow> run_ablation(const HarnessConfig& config,
                                     const Vocab& vocab,
                                     const BaseWeights& base,
                                     const TaskData& data) {
  const std::vector<Variant> variants = {
      {"imsm-query", "lora", true, FusionMode::query_gate},
      {"imsm-noquery", "lora", true, FusionMode::no_query_gate},
      {"imsm-half", "lora", true, FusionMode::fixed_half},
  };
  return run_variants(config, vocab, base, data, variants, "ablation", 0);
}

std::vector<MetricsRow> run_rank_sweep(const HarnessConfig& config,
                                       const Vocab& vocab,
                                       const BaseWeights& base,
                                       const TaskData& data,
                                       const std::vector<int>& ranks) {
  if (ranks.empty()) throw UsageError("rank sweep: empty rank list");
  std::vector<MetricsRow> rows;
  for (int rank : ranks) {
    if (rank >= config.model.d_model)
      throw UsageError("rank sweep: rank must be < d_model");
    HarnessConfig c = config;
    c.gate_rank = rank;
    c.seeds = {config.seeds.front()};
    const std::vector<Variant> variants = {
        {"imsm-lora", "lora", true, FusionMode::query_gate}};
    for (MetricsRow& r :
         run_variants(c, vocab, base, data, variants, "sweep", rank)) {
      if (r.mode == "base") continue;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

double median(std::vector<double> values) {
  if (values.empty()) throw UsageError("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2]
                    : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace imsm
