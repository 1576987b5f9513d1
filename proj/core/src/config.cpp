#include "pepler/config.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "pepler/errors.hpp"

namespace pepler::cli {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' ||
                        s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

long long parse_int(std::string_view v, const std::string& where) {
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ParseError(where + ": expected an integer, got \"" +
                     std::string(v) + "\"");
  return out;
}

double parse_double(std::string_view v, const std::string& where) {
  double out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size())
    throw ParseError(where + ": expected a number, got \"" + std::string(v) +
                     "\"");
  return out;
}

bool parse_bool(std::string_view v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ParseError(where + ": expected true/false, got \"" + std::string(v) +
                   "\"");
}

// Single source of truth for the key set: one entry per key with a setter
// and a getter (the getter feeds config_to_map).
struct KeyEntry {
  const char* name;
  std::function<void(Config&, std::string_view, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

const std::array<KeyEntry, 29>& key_table() {
  auto str = [](std::string Config::* field) {
    return KeyEntry{nullptr,
                    [field](Config& c, std::string_view v, const std::string&) {
                      c.*field = std::string(v);
                    },
                    [field](const Config& c) { return c.*field; }};
  };
  auto num = [](int Config::* field) {
    return KeyEntry{
        nullptr,
        [field](Config& c, std::string_view v, const std::string& where) {
          c.*field = static_cast<int>(parse_int(v, where));
        },
        [field](const Config& c) { return std::to_string(c.*field); }};
  };
  auto real = [](double Config::* field) {
    return KeyEntry{
        nullptr,
        [field](Config& c, std::string_view v, const std::string& where) {
          c.*field = parse_double(v, where);
        },
        [field](const Config& c) {
          std::ostringstream ss;
          ss << c.*field;
          return ss.str();
        }};
  };
  auto flag = [](bool Config::* field) {
    return KeyEntry{
        nullptr,
        [field](Config& c, std::string_view v, const std::string& where) {
          c.*field = parse_bool(v, where);
        },
        [field](const Config& c) {
          return std::string(c.*field ? "true" : "false");
        }};
  };
  auto named = [](const char* name, KeyEntry e) {
    e.name = name;
    return e;
  };
  static const std::array<KeyEntry, 29> table = {
      named("paths.dataset", str(&Config::dataset)),
      named("paths.tokenizer", str(&Config::tokenizer)),
      named("paths.backbone", str(&Config::backbone)),
      named("paths.checkpoint", str(&Config::checkpoint)),
      named("paths.log", str(&Config::log)),
      named("paths.split", str(&Config::split)),
      named("model.layers", num(&Config::layers)),
      named("model.heads", num(&Config::heads)),
      named("model.dim", num(&Config::dim)),
      named("model.ffn_dim", num(&Config::ffn_dim)),
      named("model.max_seq", num(&Config::max_seq)),
      named("model.vocab", num(&Config::vocab)),
      named("model.attn_scale", str(&Config::attn_scale)),
      named("model.pos_on_prompt", flag(&Config::pos_on_prompt)),
      named("training.mode", str(&Config::mode)),
      named("training.strategy", str(&Config::strategy)),
      named("training.lambda", real(&Config::lambda)),
      named("training.lr", real(&Config::lr)),
      named("training.lr_stage2", real(&Config::lr_stage2)),
      named("training.batch", num(&Config::batch)),
      named("training.patience", num(&Config::patience)),
      named("training.max_epochs", num(&Config::max_epochs)),
      named("training.weight_decay", real(&Config::weight_decay)),
      named("training.mlp_layers", num(&Config::mlp_layers)),
      named("training.mlp_hidden", num(&Config::mlp_hidden)),
      named("training.prompt_budget", num(&Config::prompt_budget)),
      named("training.expl_len", num(&Config::expl_len)),
      named("training.max_new", num(&Config::max_new)),
      named("training.valid_fraction", real(&Config::valid_fraction)),
  };
  return table;
}

// seed needs width beyond int; precision is a string. Both live outside the
// generic table to keep its value types simple.
bool set_run_key(Config& config, const std::string& key, std::string_view v,
                 const std::string& where) {
  if (key == "run.seed") {
    long long s = parse_int(v, where);
    if (s < 0) throw ParseError(where + ": seed must be non-negative");
    config.seed = static_cast<std::uint64_t>(s);
    return true;
  }
  if (key == "run.precision") {
    config.precision = std::string(v);
    return true;
  }
  return false;
}

void set_key(Config& config, const std::string& dotted, std::string_view value,
             const std::string& where) {
  if (set_run_key(config, dotted, value, where)) return;
  for (const auto& entry : key_table()) {
    if (dotted == entry.name) {
      entry.set(config, value, where);
      return;
    }
  }
  throw ParseError(where + ": unknown key \"" + dotted + "\"");
}

}  // namespace

double Config::resolved_lr() const {
  if (lr > 0) return lr;
  return mode == "discrete" ? 1e-4 : 1e-3;
}

double Config::resolved_lr_stage2() const {
  return lr_stage2 > 0 ? lr_stage2 : resolved_lr();
}

Config parse_config(std::string_view text, const std::string& origin) {
  Config config;
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = eol == std::string_view::npos
                                ? text.substr(pos)
                                : text.substr(pos, eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    std::string where = origin + ":" + std::to_string(line_no);

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError(where + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      if (section != "paths" && section != "model" && section != "training" &&
          section != "run")
        throw ParseError(where + ": unknown section \"" + section + "\"");
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError(where + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ParseError(where + ": key \"" + key + "\" outside any section");
    set_key(config, section + "." + key, value, where);
  }
  return config;
}

Config load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

void set_config_key(Config& config, const std::string& dotted_key,
                    const std::string& value) {
  set_key(config, dotted_key, value, "override " + dotted_key);
}

void validate_config(const Config& config) {
  auto fail = [](const std::string& msg) { throw ValidationError(msg); };
  if (config.layers < 1 || config.heads < 1 || config.dim < 1 ||
      config.ffn_dim < 1 || config.max_seq < 1)
    fail("model dimensions must be positive");
  if (config.dim % config.heads != 0)
    fail("model.dim must be divisible by model.heads");
  if (config.vocab < 259)
    fail("model.vocab must be at least 259 (256 bytes + 3 specials)");
  if (config.attn_scale != "per_head" && config.attn_scale != "model_dim")
    fail("model.attn_scale must be per_head or model_dim");
  if (config.mode != "continuous" && config.mode != "discrete")
    fail("training.mode must be continuous or discrete");
  static const char* kStrategies[] = {
      "fixed-lm-prompt-tuning", "prompt+lm-fine-tuning", "sequential",
      "rec-regularized-mf", "rec-regularized-mlp"};
  bool known = false;
  for (const char* s : kStrategies) known = known || config.strategy == s;
  if (!known)
    fail("training.strategy must be one of fixed-lm-prompt-tuning, "
         "prompt+lm-fine-tuning, sequential, rec-regularized-mf, "
         "rec-regularized-mlp");
  if (config.lambda < 0) fail("training.lambda must be >= 0");
  if (config.lr < 0 || config.lr_stage2 < 0)
    fail("learning rates must be >= 0");
  if (config.batch < 1) fail("training.batch must be >= 1");
  if (config.patience < 1) fail("training.patience must be >= 1");
  if (config.max_epochs < 0) fail("training.max_epochs must be >= 0");
  if (config.weight_decay < 0) fail("training.weight_decay must be >= 0");
  if (config.mlp_layers < 1) fail("training.mlp_layers must be >= 1");
  if (config.mlp_hidden < 1) fail("training.mlp_hidden must be >= 1");
  if (config.prompt_budget < 0) fail("training.prompt_budget must be >= 0");
  if (config.expl_len < 1) fail("training.expl_len must be >= 1");
  if (config.max_new < 0) fail("training.max_new must be >= 0");
  if (config.valid_fraction < 0 || config.valid_fraction >= 1)
    fail("training.valid_fraction must be in [0, 1)");
  if (config.precision != "f32" && config.precision != "f64")
    fail("run.precision must be f32 or f64");
}

std::map<std::string, std::string> config_to_map(const Config& config) {
  std::map<std::string, std::string> out;
  for (const auto& entry : key_table()) out[entry.name] = entry.get(config);
  out["run.seed"] = std::to_string(config.seed);
  out["run.precision"] = config.precision;
  return out;
}

}  // namespace pepler::cli
