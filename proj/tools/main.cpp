#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pepler/bpe.hpp"
#include "pepler/checkpoint.hpp"
#include "pepler/config.hpp"
#include "pepler/corpus.hpp"
#include "pepler/errors.hpp"
#include "pepler/metrics.hpp"
#include "pepler/model.hpp"
#include "pepler/pretrain.hpp"
#include "pepler/state_io.hpp"
#include "pepler/train.hpp"
#include "pepler/training_log.hpp"
#include "pepler/transformer.hpp"

namespace {

using nlohmann::json;
using namespace pepler;

void note(bool quiet, const std::string& line) {
  if (!quiet) std::cout << line << "\n";
}

std::string loss_pair(double train, double valid) {
  return "train " + format_loss(train) + " valid " + format_loss(valid);
}

// --set section.key=value, applied in order after the config file loads.
void apply_overrides(cli::Config& cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw UsageError("--set expects section.key=value, got \"" + kv + "\"");
    cli::set_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
}

cli::Config load_effective_config(const std::string& path,
                                  const std::vector<std::string>& sets) {
  cli::Config cfg = cli::load_config(path);
  apply_overrides(cfg, sets);
  cli::validate_config(cfg);
  return cfg;
}

bpe::BpeModel load_tokenizer(const cli::Config& cfg) {
  if (cfg.tokenizer.empty())
    throw ValidationError("config paths.tokenizer is empty");
  auto tok = bpe::BpeModel::load(cfg.tokenizer + ".merges.txt",
                                 cfg.tokenizer + ".vocab.json");
  if (static_cast<int>(tok.vocab_size()) != cfg.vocab)
    throw ValidationError(
        "tokenizer vocabulary " + std::to_string(tok.vocab_size()) +
        " does not match model.vocab " + std::to_string(cfg.vocab));
  return tok;
}

// Loads the persisted split when the file exists, otherwise builds one from
// the configured seed (and saves it for later commands when allowed).
corpus::Split obtain_split(const cli::Config& cfg,
                           std::span<const corpus::Record> records,
                           bool allow_write, bool quiet) {
  if (!cfg.split.empty() && std::filesystem::exists(cfg.split)) {
    corpus::Split split = corpus::load_split(cfg.split);
    for (const auto* part : {&split.train, &split.valid, &split.test})
      for (std::size_t idx : *part)
        if (idx >= records.size())
          throw ValidationError(cfg.split + ": record index " +
                                std::to_string(idx) +
                                " is out of range for this dataset");
    return split;
  }
  corpus::Split split = corpus::make_split(records, cfg.seed);
  if (!cfg.split.empty() && allow_write) {
    corpus::save_split(split, cfg.split);
    note(quiet, "wrote split " + cfg.split);
  }
  return split;
}

std::vector<corpus::Record> gather(std::span<const corpus::Record> records,
                                   std::span<const std::size_t> indices) {
  std::vector<corpus::Record> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records[i]);
  return out;
}

long long best_epoch(const std::vector<EpochLog>& log) {
  long long epoch = 0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : log) {
    if (e.valid_loss < best) {
      best = e.valid_loss;
      epoch = e.epoch;
    }
  }
  return epoch;
}

void cmd_bpe_train(const std::string& data, std::size_t vocab_size,
                   const std::string& out, bool quiet) {
  auto records = corpus::load_records(data);
  std::string text;
  for (const auto& r : records) {
    text += r.text;
    text += '\n';
  }
  auto tok = bpe::BpeModel::train(text, vocab_size);
  tok.save(out + ".merges.txt", out + ".vocab.json");
  note(quiet, "learned " + std::to_string(tok.merge_count()) + " merges on " +
                  std::to_string(records.size()) + " records; wrote " + out +
                  ".merges.txt and " + out + ".vocab.json");
}

template <typename T>
void run_pretrain(const cli::Config& cfg, bool quiet) {
  if (cfg.backbone.empty())
    throw ValidationError("config paths.backbone is empty");
  auto records = corpus::load_records(cfg.dataset);
  auto split = obtain_split(cfg, records, /*allow_write=*/true, quiet);
  auto tok = load_tokenizer(cfg);

  std::vector<int> stream;
  for (std::size_t i : split.train) {
    auto ids = tok.encode(records[i].text);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(tok.eos_id());  // document separator
  }

  lm::PretrainHyper hyper;
  hyper.lr = cfg.resolved_lr();
  hyper.weight_decay = cfg.weight_decay;
  hyper.batch = cfg.batch;
  hyper.max_epochs = cfg.max_epochs;
  hyper.patience = cfg.patience;
  hyper.valid_fraction = cfg.valid_fraction;
  hyper.seed = cfg.seed;

  auto result = lm::pretrain<T>(
      stream, transformer_config(cfg), hyper,
      [&](const EpochLog& e, const lm::TransformerParams<T>&) {
        note(quiet, "epoch " + std::to_string(e.epoch) + " " +
                        loss_pair(e.train_loss, e.valid_loss));
      });

  if (!cfg.log.empty()) write_training_log(result.log, cfg.log);
  CheckpointMeta meta;
  meta.config = cli::config_to_map(cfg);
  meta.seed = cfg.seed;
  meta.epoch = best_epoch(result.log);
  meta.valid_loss = std::isfinite(result.best_valid) ? result.best_valid : 0.0;
  save_checkpoint(cfg.backbone, snapshot_tensors<T>(result.best), meta);
  note(quiet, "wrote backbone checkpoint " + cfg.backbone);
}

template <typename T>
void run_train(const cli::Config& cfg, bool quiet) {
  auto plan = training_plan(cfg);
  plan.validate();
  if (cfg.checkpoint.empty())
    throw ValidationError("config paths.checkpoint is empty");
  if (cfg.backbone.empty())
    throw ValidationError("config paths.backbone is empty");

  auto records = corpus::load_records(cfg.dataset);
  auto split = obtain_split(cfg, records, /*allow_write=*/true, quiet);
  auto tok = load_tokenizer(cfg);

  model::ModelState<T> state;
  state.lm = restore_backbone<T>(load_checkpoint(cfg.backbone),
                                 transformer_config(cfg));

  std::vector<model::TrainExample> train_ex, valid_ex;
  model::IdIndex users, items;
  if (plan.mode == model::PromptMode::kContinuous) {
    users = model::index_users(records, split.train);
    items = model::index_items(records, split.train);
    num::Rng prompt_rng = num::Rng(cfg.seed).derive(10);
    state.prompt = model::PromptParams<T>::init(users, items, cfg.dim,
                                                prompt_rng);
    train_ex = model::make_examples(records, split.train, plan.mode, tok,
                                    cfg.expl_len, &users, &items, nullptr, 0);
    valid_ex = model::make_examples(records, split.valid, plan.mode, tok,
                                    cfg.expl_len, &users, &items, nullptr, 0);
  } else {
    auto profiles = corpus::FeatureProfiles::build(gather(records,
                                                          split.train));
    train_ex = model::make_examples(records, split.train, plan.mode, tok,
                                    cfg.expl_len, nullptr, nullptr, &profiles,
                                    cfg.prompt_budget);
    valid_ex = model::make_examples(records, split.valid, plan.mode, tok,
                                    cfg.expl_len, nullptr, nullptr, &profiles,
                                    cfg.prompt_budget);
  }
  if (plan.strategy == model::Strategy::kRecRegularizedMlp) {
    num::Rng mlp_rng = num::Rng(cfg.seed).derive(11);
    state.mlp = model::RecMlpParams<T>::init(cfg.mlp_layers, cfg.mlp_hidden,
                                             cfg.dim, mlp_rng);
  }

  auto result = model::train<T>(
      plan, std::move(state), train_ex, valid_ex, tok.bos_id(), tok.eos_id(),
      [&](const EpochLog& e, const model::ModelState<T>&) {
        note(quiet, "epoch " + std::to_string(e.epoch) + " stage " +
                        std::to_string(e.stage) + " " +
                        loss_pair(e.train_loss, e.valid_loss));
      });

  if (!cfg.log.empty()) write_training_log(result.log, cfg.log);
  CheckpointMeta meta;
  meta.config = cli::config_to_map(cfg);
  meta.seed = cfg.seed;
  meta.epoch = best_epoch(result.log);
  meta.valid_loss = std::isfinite(result.best_valid) ? result.best_valid : 0.0;
  if (result.best.prompt) {
    meta.users = result.best.prompt->users.ids();
    meta.items = result.best.prompt->items.ids();
  }
  save_checkpoint(cfg.checkpoint, snapshot_tensors<T>(result.best), meta);
  note(quiet, "wrote model checkpoint " + cfg.checkpoint);
}

struct GenerateArgs {
  std::string checkpoint, pairs, out, attention_dir;
  std::vector<std::string> sets;
  bool quiet = false;
};

template <typename T>
void dump_attention(const lm::TransformerParams<T>& params,
                    const num::Tensor<T>& prefix, const std::vector<int>& ids,
                    const std::string& dir, std::size_t pair_index) {
  const auto d = static_cast<std::size_t>(params.config.dim);
  const std::size_t rows = std::min(
      prefix.rows() + ids.size(), static_cast<std::size_t>(params.config.max_seq));
  num::Tensor<T> input({rows, d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c)
      input.at(r, c) =
          r < prefix.rows()
              ? prefix.at(r, c)
              : params.wte.at(static_cast<std::size_t>(ids[r - prefix.rows()]),
                              c) +
                    params.wpe.at(r, c);
  auto heads = lm::export_attention<T>(params, input, lm::causal_mask<T>(rows));
  for (std::size_t h = 0; h < heads.size(); ++h) {
    char name[48];
    std::snprintf(name, sizeof name, "pair%04zu.head%zu.csv", pair_index, h);
    std::string path = (std::filesystem::path(dir) / name).string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (std::size_t r = 0; r < heads[h].rows(); ++r) {
      for (std::size_t c = 0; c < heads[h].cols(); ++c) {
        if (c) out << ',';
        out << format_loss(heads[h].at(r, c));
      }
      out << '\n';
    }
  }
}

template <typename T>
int run_generate(const Checkpoint& ck, const cli::Config& cfg,
                 const GenerateArgs& args) {
  auto state = restore_state<T>(ck);
  auto mode = model::parse_mode(cfg.mode);
  if (mode == model::PromptMode::kContinuous && !state.prompt)
    throw ValidationError(
        "checkpoint has no prompt tables but the config mode is continuous");
  auto tok = load_tokenizer(cfg);
  auto records = corpus::load_records(cfg.dataset);

  std::map<std::string, const corpus::Record*> references;
  for (const auto& r : records)
    references.emplace(r.user + "\t" + r.item, &r);  // first occurrence wins

  std::optional<corpus::FeatureProfiles> profiles;
  if (mode == model::PromptMode::kDiscrete) {
    auto split = obtain_split(cfg, records, /*allow_write=*/false, args.quiet);
    profiles = corpus::FeatureProfiles::build(gather(records, split.train));
  }
  if (!args.attention_dir.empty())
    std::filesystem::create_directories(args.attention_dir);

  std::ifstream in(args.pairs);
  if (!in) throw IoError("cannot read " + args.pairs);
  std::ofstream out(args.out, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + args.out);

  std::string line;
  int lineno = 0, failures = 0;
  std::size_t pair_index = 0, written = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw ParseError(args.pairs + ":" + std::to_string(lineno) +
                       ": expected user<TAB>item");
    std::string user = line.substr(0, tab);
    std::string item = line.substr(tab + 1);

    json rec;
    rec["user"] = user;
    rec["item"] = item;
    try {
      int user_row = -1, item_row = -1;
      std::vector<int> prompt_ids;
      if (mode == model::PromptMode::kContinuous) {
        user_row = state.prompt->users.row(user);
        item_row = state.prompt->items.row(item);
      } else {
        prompt_ids =
            corpus::build_discrete_prompt(
                user, item, *profiles,
                static_cast<std::size_t>(cfg.prompt_budget), tok)
                .token_ids;
      }
      auto prefix = model::assemble_prefix<T>(
          state.lm, state.prompt ? &*state.prompt : nullptr, mode, user_row,
          item_row, prompt_ids, tok.bos_id(), cfg.pos_on_prompt);
      auto ids = lm::greedy_decode<T>(state.lm, prefix, cfg.max_new,
                                      tok.eos_id());
      rec["generated"] = tok.decode(ids, /*strip_special=*/true);
      auto ref = references.find(user + "\t" + item);
      rec["reference"] = ref != references.end() ? ref->second->text : "";
      rec["feature"] = ref != references.end() ? ref->second->feature : "";
      if (!args.attention_dir.empty())
        dump_attention<T>(state.lm, prefix, ids, args.attention_dir,
                          pair_index);
    } catch (const LookupError& e) {
      rec["error"] = std::string(e.what());
      ++failures;
    }
    out << rec.dump() << "\n";
    ++pair_index;
    ++written;
  }
  if (!out) throw IoError("write failed for " + args.out);
  note(args.quiet, "wrote " + std::to_string(written) + " records (" +
                       std::to_string(failures) + " errors) to " + args.out);
  return failures > 0 ? 2 : 0;
}

int cmd_generate(const GenerateArgs& args) {
  auto ck = load_checkpoint(args.checkpoint);
  cli::Config cfg = config_from_meta(ck.meta.config);
  apply_overrides(cfg, args.sets);
  cli::validate_config(cfg);
  return cfg.precision == "f64" ? run_generate<double>(ck, cfg, args)
                                : run_generate<float>(ck, cfg, args);
}

std::string lowercase(std::string s) {
  for (char& c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> load_feature_universe(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::vector<std::string> universe;
  std::set<std::string> seen;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t");
    std::string feature = lowercase(line.substr(first, last - first + 1));
    if (seen.insert(feature).second) universe.push_back(std::move(feature));
  }
  if (universe.empty())
    throw ValidationError("feature universe " + path + " is empty");
  return universe;
}

void cmd_evaluate(const std::string& generated_path,
                  const std::string& references_path,
                  const std::string& features_path, const std::string& out,
                  bool quiet) {
  std::ifstream in(generated_path);
  if (!in) throw IoError("cannot read " + generated_path);

  struct GeneratedRecord {
    std::string user, item, generated;
  };
  std::vector<GeneratedRecord> generated;
  std::vector<int> error_lines;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(generated_path + ":" + std::to_string(lineno) + ": " +
                       e.what());
    }
    if (j.contains("error")) {
      error_lines.push_back(lineno);
      continue;
    }
    for (const char* key : {"user", "item", "generated"})
      if (!j.contains(key) || !j[key].is_string())
        throw ParseError(generated_path + ":" + std::to_string(lineno) +
                         ": missing string field \"" + key + "\"");
    generated.push_back({j["user"].get<std::string>(),
                         j["item"].get<std::string>(),
                         j["generated"].get<std::string>()});
  }
  if (!error_lines.empty()) {
    std::string lines;
    for (int l : error_lines)
      lines += (lines.empty() ? "" : ", ") + std::to_string(l);
    throw ValidationError(generated_path +
                          " contains generation error records at lines " +
                          lines + "; regenerate before evaluating");
  }
  if (generated.empty())
    throw ValidationError("no generated records in " + generated_path);

  auto records = corpus::load_records(references_path);
  std::map<std::string, const corpus::Record*> references;
  for (const auto& r : records)
    references.emplace(r.user + "\t" + r.item, &r);

  std::vector<metrics::EvalSample> samples;
  std::string missing;
  for (const auto& g : generated) {
    auto it = references.find(g.user + "\t" + g.item);
    if (it == references.end()) {
      missing += (missing.empty() ? "" : ", ") + g.user + "/" + g.item;
      continue;
    }
    samples.push_back({g.generated, it->second->text, it->second->feature});
  }
  if (!missing.empty())
    throw ValidationError("no reference record for: " + missing);

  auto universe = load_feature_universe(features_path);
  auto report = metrics::evaluate(samples, universe);

  json j = {{"bleu1", report.bleu1},
            {"bleu4", report.bleu4},
            {"rouge1_p", report.rouge.p1},
            {"rouge1_r", report.rouge.r1},
            {"rouge1_f", report.rouge.f1},
            {"rouge2_p", report.rouge.p2},
            {"rouge2_r", report.rouge.r2},
            {"rouge2_f", report.rouge.f2},
            {"usr", report.usr},
            {"fmr", report.fmr},
            {"fcr", report.fcr},
            {"div", report.div}};
  {
    std::ofstream jf(out + ".json", std::ios::binary | std::ios::trunc);
    if (!jf) throw IoError("cannot write " + out + ".json");
    jf << j.dump(2) << "\n";
    if (!jf) throw IoError("write failed for " + out + ".json");
  }
  {
    std::ofstream cf(out + ".csv", std::ios::binary | std::ios::trunc);
    if (!cf) throw IoError("cannot write " + out + ".csv");
    cf << "bleu1,bleu4,rouge1_p,rouge1_r,rouge1_f,rouge2_p,rouge2_r,rouge2_f,"
          "usr,fmr,fcr,div\n";
    const double row[] = {report.bleu1,    report.bleu4,    report.rouge.p1,
                          report.rouge.r1, report.rouge.f1, report.rouge.p2,
                          report.rouge.r2, report.rouge.f2, report.usr,
                          report.fmr,      report.fcr,      report.div};
    for (std::size_t i = 0; i < 12; ++i)
      cf << (i ? "," : "") << format_loss(row[i]);
    cf << "\n";
    if (!cf) throw IoError("write failed for " + out + ".csv");
  }
  note(quiet, "evaluated " + std::to_string(samples.size()) +
                  " samples; wrote " + out + ".json and " + out + ".csv");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prompt-based explanation generation for recommendations"};
  app.require_subcommand(1);

  auto* bpe_cmd =
      app.add_subcommand("bpe-train", "learn a byte-level BPE tokenizer");
  std::string bpe_data, bpe_out;
  std::size_t bpe_vocab = 0;
  bool bpe_quiet = false;
  bpe_cmd->add_option("--data", bpe_data, "JSON-lines dataset")->required();
  bpe_cmd->add_option("--vocab-size", bpe_vocab,
                      "total vocabulary including byte base and specials")
      ->required();
  bpe_cmd->add_option("--out", bpe_out,
                      "output prefix for .merges.txt / .vocab.json")
      ->required();
  bpe_cmd->add_flag("--quiet", bpe_quiet, "suppress progress output");

  auto* pre_cmd =
      app.add_subcommand("pretrain", "next-token pretraining of the backbone");
  std::string pre_config;
  std::vector<std::string> pre_sets;
  bool pre_quiet = false;
  pre_cmd->add_option("--config", pre_config, "config file")->required();
  pre_cmd->add_option("--set", pre_sets, "override section.key=value");
  pre_cmd->add_flag("--quiet", pre_quiet, "suppress progress output");

  auto* train_cmd = app.add_subcommand(
      "train", "prompt training on top of a pretrained backbone");
  std::string train_config, train_mode, train_strategy;
  std::vector<std::string> train_sets;
  double train_lambda = 0.0;
  bool train_quiet = false;
  train_cmd->add_option("--config", train_config, "config file")->required();
  train_cmd->add_option("--mode", train_mode, "prompt mode")
      ->check(CLI::IsMember({"continuous", "discrete"}));
  train_cmd
      ->add_option("--strategy", train_strategy, "training strategy")
      ->check(CLI::IsMember({"fixed-lm-prompt-tuning", "prompt+lm-fine-tuning",
                             "sequential", "rec-regularized-mf",
                             "rec-regularized-mlp"}));
  auto* lambda_opt = train_cmd->add_option(
      "--lambda", train_lambda, "rating regularization weight");
  train_cmd->add_option("--set", train_sets, "override section.key=value");
  train_cmd->add_flag("--quiet", train_quiet, "suppress progress output");

  auto* gen_cmd = app.add_subcommand(
      "generate", "greedy explanations for user/item pairs");
  GenerateArgs gen;
  gen_cmd->add_option("--checkpoint", gen.checkpoint, "model checkpoint")
      ->required();
  gen_cmd->add_option("--pairs", gen.pairs, "TSV file of user<TAB>item lines")
      ->required();
  gen_cmd->add_option("--out", gen.out, "output JSON-lines file")->required();
  gen_cmd->add_option("--attention-dir", gen.attention_dir,
                      "directory for last-layer attention CSV dumps");
  gen_cmd->add_option("--set", gen.sets, "override section.key=value");
  gen_cmd->add_flag("--quiet", gen.quiet, "suppress progress output");

  auto* eval_cmd =
      app.add_subcommand("evaluate", "score generated explanations");
  std::string eval_generated, eval_references, eval_features, eval_out;
  bool eval_quiet = false;
  eval_cmd->add_option("--generated", eval_generated,
                       "JSON-lines output of the generate command")
      ->required();
  eval_cmd->add_option("--references", eval_references,
                       "JSON-lines dataset with reference texts and features")
      ->required();
  eval_cmd->add_option("--features", eval_features,
                       "feature universe, one per line")
      ->required();
  eval_cmd->add_option("--out", eval_out, "output prefix for .json / .csv")
      ->required();
  eval_cmd->add_flag("--quiet", eval_quiet, "suppress progress output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (bpe_cmd->parsed()) {
      cmd_bpe_train(bpe_data, bpe_vocab, bpe_out, bpe_quiet);
    } else if (pre_cmd->parsed()) {
      cli::Config cfg = load_effective_config(pre_config, pre_sets);
      if (cfg.precision == "f64")
        run_pretrain<double>(cfg, pre_quiet);
      else
        run_pretrain<float>(cfg, pre_quiet);
    } else if (train_cmd->parsed()) {
      cli::Config cfg = cli::load_config(train_config);
      apply_overrides(cfg, train_sets);
      if (!train_mode.empty()) cfg.mode = train_mode;
      if (!train_strategy.empty()) cfg.strategy = train_strategy;
      if (lambda_opt->count() > 0) {
        if (!model::uses_rating_head(model::parse_strategy(cfg.strategy)))
          throw UsageError(
              "--lambda only applies to the rec-regularized strategies");
        cfg.lambda = train_lambda;
      }
      cli::validate_config(cfg);
      if (cfg.precision == "f64")
        run_train<double>(cfg, train_quiet);
      else
        run_train<float>(cfg, train_quiet);
    } else if (gen_cmd->parsed()) {
      return cmd_generate(gen);
    } else if (eval_cmd->parsed()) {
      cmd_evaluate(eval_generated, eval_references, eval_features, eval_out,
                   eval_quiet);
    }
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    // parse, validation, lookup, and shape problems are data errors
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
