#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pepler/bpe.hpp"

namespace pepler::corpus {

struct Record {
  std::string user;
  std::string item;
  int rating = 0;  // 1..5
  std::string text;
  std::string feature;  // lowercased on ingest; guaranteed to occur in text
};

// Reads JSON-lines records with keys {user, item, rating, text, feature}.
// Malformed JSON or wrong field types raise ParseError naming the line.
// Semantic violations (rating out of 1..5, empty fields, feature phrase
// absent from the explanation) are collected and raised together as one
// ValidationError listing every offending line.
std::vector<Record> load_records(const std::string& path);
std::vector<Record> parse_records(std::string_view text,
                                  const std::string& origin);

struct Split {
  std::vector<std::size_t> train, valid, test;
  std::uint64_t seed = 0;
};

// Seeded shuffle into ~8:1:1 (valid/test floored), then coverage repair:
// every user and item occurring anywhere must own at least one train record.
// Repair scans uncovered users, then items, in sorted id order and moves the
// entity's lowest-index valid/test record into train.
Split make_split(std::span<const Record> records, std::uint64_t seed,
                 int train_ratio = 8, int valid_ratio = 1,
                 int test_ratio = 1);

void save_split(const Split& split, const std::string& path);
Split load_split(const std::string& path);

// Ordered feature lists per user and per item, built from train records
// only. Order: descending train frequency, ties lexicographic ascending.
class FeatureProfiles {
 public:
  static FeatureProfiles build(std::span<const Record> train_records);

  // Throw LookupError for ids absent from the training split.
  const std::vector<std::string>& user_features(const std::string& id) const;
  const std::vector<std::string>& item_features(const std::string& id) const;

  bool has_user(const std::string& id) const { return users_.count(id) > 0; }
  bool has_item(const std::string& id) const { return items_.count(id) > 0; }

  const std::map<std::string, std::vector<std::string>>& users() const {
    return users_;
  }
  const std::map<std::string, std::vector<std::string>>& items() const {
    return items_;
  }

 private:
  std::map<std::string, std::vector<std::string>> users_, items_;
};

struct FeaturePrompt {
  std::vector<std::string> features;  // those contributing >= 1 token
  std::vector<int> token_ids;         // length <= budget, cut mid-feature
};

// Fuses the two profiles as [F_u intersect F_i in F_u order, F_u leftovers,
// F_i leftovers], tokenizes the space-joined phrase and cuts at exactly
// `budget` BPE tokens.
FeaturePrompt build_discrete_prompt(const std::string& user,
                                    const std::string& item,
                                    const FeatureProfiles& profiles,
                                    std::size_t budget,
                                    const bpe::BpeModel& tok);

}  // namespace pepler::corpus
