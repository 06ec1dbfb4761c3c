// Command-line entry point for the whole lab: synthetic data generation,
// backbone pretraining, PEFT / interwoven fine-tuning, evaluation, greedy
// generation, and the forgetting / ablation / rank-sweep protocols.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "imsm/checkpoint.hpp"
#include "imsm/harness.hpp"

using namespace imsm;
using nlohmann::json;

namespace {

FusionMode fusion_from_name(const std::string& name) {
  if (name == "query") return FusionMode::query_gate;
  if (name == "noquery") return FusionMode::no_query_gate;
  if (name == "half") return FusionMode::fixed_half;
  throw UsageError("unknown fusion mode: " + name);
}

std::string fusion_name(FusionMode mode) {
  switch (mode) {
    case FusionMode::query_gate: return "query";
    case FusionMode::no_query_gate: return "noquery";
    case FusionMode::fixed_half: return "half";
  }
  return "?";
}

HarnessConfig load_harness_config(const std::string& path) {
  if (path.empty()) return HarnessConfig{};
  std::ifstream in(path);
  if (!in) throw UsageError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("config: " + path + ": " + e.what());
  }
  return HarnessConfig::from_json(j);
}

// Every artifact-producing run drops the exact configuration it ran with
// next to its outputs, so a row in a report can always be re-run.
void echo_config(const std::string& out_path, const json& j) {
  std::ofstream out(out_path);
  out << j.dump(2) << "\n";
}

std::vector<TextPair> load_text_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("dataset: cannot open " + path);
  std::vector<TextPair> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      out.emplace_back(j.at("prompt").get<std::string>(),
                       j.at("completion").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

int cmd_synth(const std::string& task, int size, int min_len, int max_len,
              std::uint64_t seed, const std::string& out_dir) {
  TaskSpec spec;
  spec.kind = task_kind_from_name(task);
  spec.size = size;
  spec.min_len = min_len;
  spec.max_len = max_len;
  spec.seed = seed;
  SynthSplits splits = synth(spec);
  std::filesystem::create_directories(out_dir);
  write_jsonl(out_dir + "/train.jsonl", splits.train);
  write_jsonl(out_dir + "/dev.jsonl", splits.dev);
  write_jsonl(out_dir + "/test.jsonl", splits.test);
  echo_config(out_dir + "/synth.json",
              {{"task", task},
               {"size", size},
               {"min_len", min_len},
               {"max_len", max_len},
               {"seed", seed}});
  std::printf("wrote %zu/%zu/%zu examples to %s\n", splits.train.size(),
              splits.dev.size(), splits.test.size(), out_dir.c_str());
  return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& train_path,
                 std::uint64_t seed, const std::string& out,
                 const std::string& loss_csv) {
  HarnessConfig hc = load_harness_config(config_path);
  Vocab vocab = default_task_vocab();
  hc.model.vocab_size = vocab.size();

  std::vector<Example> examples;
  if (!train_path.empty()) {
    examples = load_examples(train_path, vocab);
  } else {
    TaskData data = make_task_data(hc);
    for (const TextPair& p : data.task_a.train)
      examples.push_back(make_example(p.first, p.second, vocab));
  }

  ModelConfig mc = hc.model;
  mc.vocab_size = vocab.size();
  BaseWeights weights = BaseWeights::init(mc, seed);
  TrainConfig tc;
  tc.lr = hc.pretrain_lr;
  tc.epochs = hc.pretrain_epochs;
  tc.batch_size = hc.batch_size;
  tc.seed = seed;
  std::vector<LossRecord> curve = pretrain(tc, examples, weights);
  save_model(out, weights);
  if (!loss_csv.empty()) write_loss_csv(loss_csv, curve);
  echo_config(out + ".config.json",
              {{"harness", hc.to_json()}, {"seed", seed},
               {"train", tc.to_json()}});
  std::printf("pretrained %d epochs, final loss %.4f, saved %s\n", tc.epochs,
              curve.back().loss, out.c_str());
  return 0;
}

int cmd_finetune(const std::string& config_path, const std::string& base_path,
                 const std::string& train_path, const std::string& peft,
                 const std::string& mode, const std::string& fusion,
                 int gate_rank, std::uint64_t seed, const std::string& out_dir,
                 const std::string& loss_csv) {
  HarnessConfig hc = load_harness_config(config_path);
  if (gate_rank > 0) hc.gate_rank = gate_rank;
  Vocab vocab = default_task_vocab();
  hc.model.vocab_size = vocab.size();
  BaseWeights base = load_model(base_path);
  hc.model = base.config;

  TaskData data = make_task_data(hc);
  if (!train_path.empty()) {
    data.task_b.train = load_text_pairs(train_path);
  }

  const bool imsm_mode = mode == "imsm";
  if (!imsm_mode && mode != "vanilla")
    throw UsageError("unknown mode: " + mode);
  FusionMode fm = fusion_from_name(fusion);

  FinetuneResult result =
      finetune_variant(hc, vocab, base, data, peft, imsm_mode, fm, seed);

  std::filesystem::create_directories(out_dir);
  save_adapters(out_dir + "/adapters.ckpt", result.adapters, hc.lora_rank,
                hc.lora_alpha);
  if (result.has_gate)
    save_gate(out_dir + "/gate.ckpt", result.gate, fm);
  if (!loss_csv.empty()) write_loss_csv(loss_csv, result.curve);
  echo_config(out_dir + "/finetune.config.json",
              {{"harness", hc.to_json()},
               {"base", base_path},
               {"peft", peft},
               {"mode", mode},
               {"fusion", fusion},
               {"gate_rank", hc.gate_rank},
               {"seed", seed},
               {"trainable_params", result.trainable_params}});
  std::printf(
      "finetuned %s/%s, %lld trainable params, final loss %.4f, saved to "
      "%s\n",
      peft.c_str(), mode.c_str(),
      static_cast<long long>(result.trainable_params),
      result.curve.back().loss, out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& base_path, const std::string& adapters_path,
             const std::string& gate_path, const std::string& data_path,
             const std::string& mode, const std::string& fusion,
             int max_new_tokens, int limit, const std::string& metrics_path,
             const std::string& run_id, const std::string& task,
             const std::string& split, std::uint64_t seed) {
  Vocab vocab = default_task_vocab();
  BaseWeights base = load_model(base_path);
  std::optional<AdapterSet> adapters;
  if (!adapters_path.empty()) adapters = load_adapters(adapters_path);
  std::optional<GateParams> gate;
  FusionMode fm = fusion_from_name(fusion);
  if (!gate_path.empty()) {
    FusionMode stored;
    gate = load_gate(gate_path, stored);
    fm = stored;
  }
  const bool imsm_mode = mode == "imsm";
  if (!imsm_mode && mode != "vanilla")
    throw UsageError("unknown mode: " + mode);

  std::vector<TextPair> pairs = load_text_pairs(data_path);
  DecodeConfig dc;
  dc.max_new_tokens = max_new_tokens;
  const double em = eval_exact_match(
      pairs, vocab, base, adapters ? &*adapters : nullptr,
      gate ? &*gate : nullptr, fm, imsm_mode, dc, limit);
  std::printf("exact_match %.4f over %zu prompts\n", em,
              limit > 0 ? std::min<std::size_t>(limit, pairs.size())
                        : pairs.size());

  if (!metrics_path.empty()) {
    MetricsRow row;
    row.run_id = run_id;
    row.mode = mode;
    row.task = task;
    row.split = split;
    row.exact_match = em;
    row.gate_rank = gate ? gate->rank : 0;
    row.seed = seed;
    std::vector<MetricsRow> rows;
    if (std::filesystem::exists(metrics_path))
      rows = read_metrics_csv(metrics_path);
    rows.push_back(row);
    write_metrics_csv(metrics_path, rows);
  }
  return 0;
}

int cmd_generate(const std::string& base_path,
                 const std::string& adapters_path,
                 const std::string& gate_path, const std::string& mode,
                 const std::string& fusion, const std::string& prompt,
                 int max_new_tokens, const std::string& trace_path) {
  Vocab vocab = default_task_vocab();
  BaseWeights base = load_model(base_path);
  std::optional<AdapterSet> adapters;
  if (!adapters_path.empty()) adapters = load_adapters(adapters_path);
  std::optional<GateParams> gate;
  FusionMode fm = fusion_from_name(fusion);
  if (!gate_path.empty()) {
    FusionMode stored;
    gate = load_gate(gate_path, stored);
    fm = stored;
  }

  std::vector<int> tokens = {Vocab::kBos};
  for (int id : vocab.encode(prompt)) tokens.push_back(id);
  DecodeConfig dc;
  dc.max_new_tokens = max_new_tokens;

  std::vector<int> out;
  std::vector<StepTrace> trace;
  if (mode == "imsm") {
    out = generate(tokens, dc, base, adapters ? &*adapters : nullptr,
                   gate ? &*gate : nullptr, fm,
                   trace_path.empty() ? nullptr : &trace);
  } else if (mode == "vanilla") {
    out = generate_vanilla(tokens, dc, base,
                           adapters ? &*adapters : nullptr);
  } else {
    throw UsageError("unknown mode: " + mode);
  }
  std::printf("%s\n", vocab.decode(out).c_str());

  if (!trace_path.empty()) {
    std::ofstream tf(trace_path);
    for (const StepTrace& st : trace) {
      json j = {{"token", st.token},
                {"gate_mean", st.gate_mean},
                {"gate_min", st.gate_min},
                {"gate_max", st.gate_max}};
      tf << j.dump() << "\n";
    }
  }
  return 0;
}

int run_protocol(const std::string& which, const std::string& config_path,
                 const std::string& base_path, const std::string& out_csv,
                 const std::vector<int>& ranks) {
  HarnessConfig hc = load_harness_config(config_path);
  Vocab vocab = default_task_vocab();
  hc.model.vocab_size = vocab.size();
  TaskData data = make_task_data(hc);

  BaseWeights base = [&] {
    if (!base_path.empty()) {
      BaseWeights w = load_model(base_path);
      hc.model = w.config;
      return w;
    }
    std::fprintf(stderr, "no --base given; pretraining from scratch\n");
    return pretrain_base(hc, vocab, data, hc.seeds.empty() ? 1 : hc.seeds[0]);
  }();

  std::vector<MetricsRow> rows;
  if (which == "forgetting")
    rows = run_forgetting_protocol(hc, vocab, base, data);
  else if (which == "ablate")
    rows = run_ablation(hc, vocab, base, data);
  else
    rows = run_rank_sweep(hc, vocab, base, data, ranks);
  write_metrics_csv(out_csv, rows);
  std::printf("wrote %zu metric rows to %s\n", rows.size(), out_csv.c_str());
  return 0;
}

// Median-over-seeds summary of a metrics CSV, grouped by (mode, task,
// split); the plotting boundary stays CSV, this is just a terminal view.
int cmd_report(const std::string& metrics_path) {
  std::vector<MetricsRow> rows = read_metrics_csv(metrics_path);
  if (rows.empty()) {
    std::printf("no rows in %s\n", metrics_path.c_str());
    return 0;
  }
  std::map<std::string, std::vector<double>> em;
  std::map<std::string, std::vector<double>> tput;
  for (const MetricsRow& r : rows) {
    const std::string key = r.mode + "  " + r.task + "  " + r.split;
    em[key].push_back(r.exact_match);
    if (r.tokens_per_sec > 0) tput[key].push_back(r.tokens_per_sec);
  }
  std::printf("%-52s %8s %6s %12s\n", "mode  task  split", "med EM", "runs",
              "med tok/s");
  for (auto& [key, vals] : em) {
    const auto it = tput.find(key);
    if (it != tput.end())
      std::printf("%-52s %8.4f %6zu %12.2f\n", key.c_str(), median(vals),
                  vals.size(), median(it->second));
    else
      std::printf("%-52s %8.4f %6zu %12s\n", key.c_str(), median(vals),
                  vals.size(), "-");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"interwoven-memories fine-tuning lab"};
  app.require_subcommand(1);

  // synth
  std::string task = "copy", out_dir = "data";
  int size = 256, min_len = 3, max_len = 6;
  std::uint64_t seed = 0;
  CLI::App* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic task dataset");
  synth_cmd->add_option("--task", task,
                        "copy|reverse|mod_add|sort_digits");
  synth_cmd->add_option("--size", size, "total example count");
  synth_cmd->add_option("--min-len", min_len, "minimum body length");
  synth_cmd->add_option("--max-len", max_len, "maximum body length");
  synth_cmd->add_option("--seed", seed, "generation seed");
  synth_cmd->add_option("--out-dir", out_dir, "output directory");

  // pretrain
  std::string config_path, train_path, out_path = "base.ckpt", loss_csv;
  CLI::App* pre_cmd =
      app.add_subcommand("pretrain", "full-weight training of the backbone");
  pre_cmd->add_option("--config", config_path, "harness config JSON");
  pre_cmd->add_option("--train", train_path,
                      "training JSONL (default: built-in task-A mixture)");
  pre_cmd->add_option("--seed", seed, "init and shuffle seed");
  pre_cmd->add_option("--out", out_path, "output checkpoint");
  pre_cmd->add_option("--loss-csv", loss_csv, "per-step loss CSV");

  // finetune
  std::string base_path, peft = "lora", mode = "imsm", fusion = "query";
  std::string ft_out_dir = "run";
  int gate_rank = 0;
  CLI::App* ft_cmd = app.add_subcommand(
      "finetune", "PEFT fine-tuning, optionally with the interwoven gate");
  ft_cmd->add_option("--config", config_path, "harness config JSON");
  ft_cmd->add_option("--base", base_path, "pretrained base checkpoint")
      ->required();
  ft_cmd->add_option("--train", train_path,
                     "training JSONL (default: built-in mod_add)");
  ft_cmd->add_option("--peft", peft, "lora|ia3");
  ft_cmd->add_option("--mode", mode, "vanilla|imsm");
  ft_cmd->add_option("--fusion", fusion, "query|noquery|half");
  ft_cmd->add_option("--gate-rank", gate_rank, "gate rank override");
  ft_cmd->add_option("--seed", seed, "training seed");
  ft_cmd->add_option("--out-dir", ft_out_dir, "output directory");
  ft_cmd->add_option("--loss-csv", loss_csv, "per-step loss CSV");

  // eval
  std::string adapters_path, gate_path, data_path, metrics_path;
  std::string run_id = "run", eval_task = "task", split = "test";
  int max_new_tokens = 12, limit = 0;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "exact-match evaluation on a JSONL dataset");
  eval_cmd->add_option("--base", base_path, "base checkpoint")->required();
  eval_cmd->add_option("--adapters", adapters_path, "adapter checkpoint");
  eval_cmd->add_option("--gate", gate_path, "gate checkpoint");
  eval_cmd->add_option("--data", data_path, "evaluation JSONL")->required();
  eval_cmd->add_option("--mode", mode, "vanilla|imsm");
  eval_cmd->add_option("--fusion", fusion, "query|noquery|half");
  eval_cmd->add_option("--max-new-tokens", max_new_tokens, "decode budget");
  eval_cmd->add_option("--limit", limit, "evaluate only the first N prompts");
  eval_cmd->add_option("--metrics", metrics_path, "append a MetricsRow here");
  eval_cmd->add_option("--run-id", run_id, "run id for the metrics row");
  eval_cmd->add_option("--task", eval_task, "task name for the metrics row");
  eval_cmd->add_option("--split", split, "split name for the metrics row");
  eval_cmd->add_option("--seed", seed, "seed recorded in the metrics row");

  // generate
  std::string prompt, trace_path;
  CLI::App* gen_cmd =
      app.add_subcommand("generate", "greedy generation for one prompt");
  gen_cmd->add_option("--base", base_path, "base checkpoint")->required();
  gen_cmd->add_option("--adapters", adapters_path, "adapter checkpoint");
  gen_cmd->add_option("--gate", gate_path, "gate checkpoint");
  gen_cmd->add_option("--mode", mode, "vanilla|imsm");
  gen_cmd->add_option("--fusion", fusion, "query|noquery|half");
  gen_cmd->add_option("--prompt", prompt, "prompt text")->required();
  gen_cmd->add_option("--max-new-tokens", max_new_tokens, "decode budget");
  gen_cmd->add_option("--trace", trace_path,
                      "JSONL per-step gate statistics");

  // protocols
  std::string out_csv = "metrics.csv";
  CLI::App* forget_cmd = app.add_subcommand(
      "forgetting", "pretrain/fine-tune forgetting comparison");
  CLI::App* ablate_cmd =
      app.add_subcommand("ablate", "gate-variant ablation");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "gate-rank sweep");
  std::vector<int> ranks = {4, 8, 16};
  for (CLI::App* cmd : {forget_cmd, ablate_cmd, sweep_cmd}) {
    cmd->add_option("--config", config_path, "harness config JSON");
    cmd->add_option("--base", base_path,
                    "pretrained base checkpoint (otherwise trained now)");
    cmd->add_option("--out", out_csv, "metrics CSV path");
  }
  sweep_cmd->add_option("--ranks", ranks, "gate ranks to sweep");

  // report
  CLI::App* report_cmd =
      app.add_subcommand("report", "summarize a metrics CSV");
  report_cmd->add_option("--metrics", metrics_path, "metrics CSV")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed())
      return cmd_synth(task, size, min_len, max_len, seed, out_dir);
    if (pre_cmd->parsed())
      return cmd_pretrain(config_path, train_path, seed, out_path, loss_csv);
    if (ft_cmd->parsed())
      return cmd_finetune(config_path, base_path, train_path, peft, mode,
                          fusion, gate_rank, seed, ft_out_dir, loss_csv);
    if (eval_cmd->parsed())
      return cmd_eval(base_path, adapters_path, gate_path, data_path, mode,
                      fusion, max_new_tokens, limit, metrics_path, run_id,
                      eval_task, split, seed);
    if (gen_cmd->parsed())
      return cmd_generate(base_path, adapters_path, gate_path, mode, fusion,
                          prompt, max_new_tokens, trace_path);
    if (forget_cmd->parsed())
      return run_protocol("forgetting", config_path, base_path, out_csv, {});
    if (ablate_cmd->parsed())
      return run_protocol("ablate", config_path, base_path, out_csv, {});
    if (sweep_cmd->parsed())
      return run_protocol("sweep", config_path, base_path, out_csv, ranks);
    if (report_cmd->parsed()) return cmd_report(metrics_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
