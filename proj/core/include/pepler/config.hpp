#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace pepler::cli {

// Flat key=value file with [sections]; '#' or ';' lines are comments.
// Unknown sections or keys are rejected. CLI flags override file values.
struct Config {
  // [paths]
  std::string dataset;     // JSON-lines records
  std::string tokenizer;   // prefix for <prefix>.merges.txt / .vocab.json
  std::string backbone;    // pretrained transformer checkpoint
  std::string checkpoint;  // output checkpoint of the train command
  std::string log;         // CSV training log
  std::string split;       // persisted split JSON (written if absent)

  // [model]
  int layers = 4;
  int heads = 4;
  int dim = 128;
  int ffn_dim = 512;
  int max_seq = 64;
  int vocab = 8192;
  std::string attn_scale = "per_head";  // per_head | model_dim
  bool pos_on_prompt = true;  // add positional embeddings on prompt slots

  // [training]
  std::string mode = "continuous";   // continuous | discrete
  std::string strategy = "sequential";
  double lambda = 0.01;
  double lr = 0.0;         // 0 = pick by mode: 1e-3 continuous, 1e-4 discrete
  double lr_stage2 = 0.0;  // 0 = same as lr
  int batch = 128;
  int patience = 5;
  int max_epochs = 50;
  double weight_decay = 0.01;
  int mlp_layers = 2;
  int mlp_hidden = 400;
  int prompt_budget = 20;  // discrete prompt BPE-token cap
  int expl_len = 20;       // training explanations truncated to this many ids
  int max_new = 20;        // generation length cap
  double valid_fraction = 0.1;  // pretraining window holdout

  // [run]
  std::uint64_t seed = 42;
  std::string precision = "f32";  // f32 | f64

  double resolved_lr() const;
  double resolved_lr_stage2() const;
};

Config parse_config(std::string_view text, const std::string& origin);
Config load_config(const std::string& path);

// Applies one "section.key" override (used by CLI flags). Unknown keys or
// unparsable values throw the same errors as the file parser.
void set_config_key(Config& config, const std::string& dotted_key,
                    const std::string& value);

// Enum fields and numeric ranges; throws ValidationError.
void validate_config(const Config& config);

// Every key as "section.key" -> value string, for checkpoint metadata.
std::map<std::string, std::string> config_to_map(const Config& config);

}  // namespace pepler::cli
