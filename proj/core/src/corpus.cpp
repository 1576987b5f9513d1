#include "pepler/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "pepler/errors.hpp"
#include "pepler/metrics.hpp"
#include "pepler/rng.hpp"

namespace pepler::corpus {
namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string ascii_lower(std::string s) {
  for (char& c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string require_string(const json& obj, const char* key,
                           const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end())
    throw ParseError(where + ": missing key \"" + key + "\"");
  if (!it->is_string())
    throw ParseError(where + ": key \"" + key + "\" must be a string");
  return it->get<std::string>();
}

}  // namespace

std::vector<Record> parse_records(std::string_view text,
                                  const std::string& origin) {
  std::vector<Record> records;
  std::vector<std::string> violations;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t eol = text.find('\n', pos);
    std::string_view line = eol == std::string_view::npos
                                ? text.substr(pos)
                                : text.substr(pos, eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    std::string where = origin + ":" + std::to_string(line_no);

    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object())
      throw ParseError(where + ": not a JSON object");

    Record rec;
    rec.user = require_string(obj, "user", where);
    rec.item = require_string(obj, "item", where);
    rec.text = require_string(obj, "text", where);
    rec.feature = ascii_lower(require_string(obj, "feature", where));

    auto rating_it = obj.find("rating");
    if (rating_it == obj.end())
      throw ParseError(where + ": missing key \"rating\"");
    if (!rating_it->is_number())
      throw ParseError(where + ": key \"rating\" must be a number");
    double raw = rating_it->get<double>();
    rec.rating = static_cast<int>(raw);

    if (raw != static_cast<double>(rec.rating) || rec.rating < 1 ||
        rec.rating > 5) {
      violations.push_back(where + ": rating must be an integer in 1..5");
    } else if (rec.user.empty() || rec.item.empty()) {
      violations.push_back(where + ": empty user or item id");
    } else if (rec.text.empty()) {
      violations.push_back(where + ": empty explanation text");
    } else if (rec.feature.empty()) {
      violations.push_back(where + ": empty feature");
    } else if (!metrics::feature_in_text(rec.feature, rec.text)) {
      violations.push_back(where + ": feature \"" + rec.feature +
                           "\" does not occur in the explanation");
    }
    records.push_back(std::move(rec));
  }
  if (!violations.empty()) {
    std::string msg = "invalid records:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw ValidationError(msg);
  }
  return records;
}

std::vector<Record> load_records(const std::string& path) {
  return parse_records(read_file(path), path);
}

Split make_split(std::span<const Record> records, std::uint64_t seed,
                 int train_ratio, int valid_ratio, int test_ratio) {
  if (train_ratio <= 0 || valid_ratio < 0 || test_ratio < 0)
    throw ValidationError("split ratios must be positive (train) and "
                          "non-negative (valid/test)");
  const std::size_t n = records.size();
  const long long total = train_ratio + valid_ratio + test_ratio;
  const std::size_t n_valid =
      static_cast<std::size_t>(static_cast<long long>(n) * valid_ratio / total);
  const std::size_t n_test =
      static_cast<std::size_t>(static_cast<long long>(n) * test_ratio / total);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  num::Rng rng(seed);
  rng.shuffle(order);

  Split split;
  split.seed = seed;
  split.train.assign(order.begin(), order.end() - n_valid - n_test);
  split.valid.assign(order.end() - n_valid - n_test, order.end() - n_test);
  split.test.assign(order.end() - n_test, order.end());

  std::unordered_set<std::string> users_covered, items_covered;
  for (std::size_t idx : split.train) {
    users_covered.insert(records[idx].user);
    items_covered.insert(records[idx].item);
  }

  // Where each entity's records live among the held-out indices.
  auto move_into_train = [&](std::size_t idx) {
    auto erase_from = [&](std::vector<std::size_t>& part) {
      auto it = std::find(part.begin(), part.end(), idx);
      if (it == part.end()) return false;
      part.erase(it);
      return true;
    };
    if (!erase_from(split.valid)) erase_from(split.test);
    split.train.push_back(idx);
    users_covered.insert(records[idx].user);
    items_covered.insert(records[idx].item);
  };

  auto repair = [&](auto key_of, std::unordered_set<std::string>& covered) {
    std::map<std::string, std::size_t> lowest;  // entity -> lowest held-out idx
    for (const auto& part : {split.valid, split.test}) {
      for (std::size_t idx : part) {
        const std::string& key = key_of(records[idx]);
        auto it = lowest.find(key);
        if (it == lowest.end() || idx < it->second) lowest[key] = idx;
      }
    }
    for (const auto& [key, idx] : lowest) {  // sorted entity order
      if (!covered.count(key)) move_into_train(idx);
    }
  };
  repair([](const Record& r) -> const std::string& { return r.user; },
         users_covered);
  repair([](const Record& r) -> const std::string& { return r.item; },
         items_covered);

  std::sort(split.train.begin(), split.train.end());
  std::sort(split.valid.begin(), split.valid.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void save_split(const Split& split, const std::string& path) {
  json obj;
  obj["seed"] = split.seed;
  obj["train"] = split.train;
  obj["valid"] = split.valid;
  obj["test"] = split.test;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << obj.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

Split load_split(const std::string& path) {
  json obj = json::parse(read_file(path), nullptr, false);
  if (obj.is_discarded() || !obj.is_object())
    throw ParseError(path + ": not a JSON object");
  Split split;
  if (!obj.contains("seed") || !obj["seed"].is_number_unsigned())
    throw ParseError(path + ": missing or invalid \"seed\"");
  split.seed = obj["seed"].get<std::uint64_t>();
  auto read_part = [&](const char* key, std::vector<std::size_t>& out) {
    if (!obj.contains(key) || !obj[key].is_array())
      throw ParseError(path + ": missing or invalid \"" + std::string(key) +
                       "\"");
    for (const auto& v : obj[key]) {
      if (!v.is_number_unsigned())
        throw ParseError(path + ": \"" + std::string(key) +
                         "\" must hold non-negative indices");
      out.push_back(v.get<std::size_t>());
    }
  };
  read_part("train", split.train);
  read_part("valid", split.valid);
  read_part("test", split.test);

  std::unordered_set<std::size_t> seen;
  for (const auto* part : {&split.train, &split.valid, &split.test}) {
    for (std::size_t idx : *part) {
      if (!seen.insert(idx).second)
        throw ValidationError(path + ": index " + std::to_string(idx) +
                              " appears in more than one split part");
    }
  }
  return split;
}

FeatureProfiles FeatureProfiles::build(std::span<const Record> train_records) {
  if (train_records.empty())
    throw ValidationError("cannot build feature profiles from an empty "
                          "training split");
  std::map<std::string, std::map<std::string, std::size_t>> user_counts,
      item_counts;
  for (const auto& rec : train_records) {
    ++user_counts[rec.user][rec.feature];
    ++item_counts[rec.item][rec.feature];
  }
  auto order = [](const std::map<std::string, std::size_t>& counts) {
    std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(),
                                                             counts.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    std::vector<std::string> features;
    features.reserve(entries.size());
    for (auto& [feature, count] : entries) features.push_back(feature);
    return features;
  };
  FeatureProfiles profiles;
  for (const auto& [id, counts] : user_counts)
    profiles.users_[id] = order(counts);
  for (const auto& [id, counts] : item_counts)
    profiles.items_[id] = order(counts);
  return profiles;
}

const std::vector<std::string>& FeatureProfiles::user_features(
    const std::string& id) const {
  auto it = users_.find(id);
  if (it == users_.end()) throw LookupError("unknown user id: " + id);
  return it->second;
}

const std::vector<std::string>& FeatureProfiles::item_features(
    const std::string& id) const {
  auto it = items_.find(id);
  if (it == items_.end()) throw LookupError("unknown item id: " + id);
  return it->second;
}

FeaturePrompt build_discrete_prompt(const std::string& user,
                                    const std::string& item,
                                    const FeatureProfiles& profiles,
                                    std::size_t budget,
                                    const bpe::BpeModel& tok) {
  const auto& fu = profiles.user_features(user);
  const auto& fi = profiles.item_features(item);
  std::unordered_set<std::string> fu_set(fu.begin(), fu.end());
  std::unordered_set<std::string> fi_set(fi.begin(), fi.end());

  std::vector<std::string> merged;
  merged.reserve(fu.size() + fi.size());
  for (const auto& f : fu)
    if (fi_set.count(f)) merged.push_back(f);
  for (const auto& f : fu)
    if (!fi_set.count(f)) merged.push_back(f);
  for (const auto& f : fi)
    if (!fu_set.count(f)) merged.push_back(f);

  FeaturePrompt prompt;
  for (std::size_t k = 0; k < merged.size(); ++k) {
    if (prompt.token_ids.size() >= budget) break;
    std::vector<int> ids =
        k == 0 ? tok.encode(merged[k]) : tok.encode(" " + merged[k]);
    std::size_t room = budget - prompt.token_ids.size();
    std::size_t take = std::min(room, ids.size());
    if (take == 0) continue;
    prompt.token_ids.insert(prompt.token_ids.end(), ids.begin(),
                            ids.begin() + take);
    prompt.features.push_back(merged[k]);
  }
  return prompt;
}

}  // namespace pepler::corpus
