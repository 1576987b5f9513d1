#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pepler::bpe {

// Byte-level BPE. The base alphabet is the 256 single bytes; training adds
// merges until the vocabulary (bytes + merges + the three specials) hits the
// target size exactly. <bos>, <eos>, <pad> take the top three ids in that
// order and are never produced by encode() on plain text.
class BpeModel {
 public:
  // Learns merges from `text`. Most frequent adjacent pair wins each round;
  // ties go to the lexicographically smaller (left, right) byte-string pair.
  // Throws ValidationError when the corpus is empty or runs out of mergeable
  // pairs before reaching target_vocab.
  static BpeModel train(std::string_view text, std::size_t target_vocab);

  // Rebuilds a model from merge lines alone ("left right" per line in
  // priority order, tokens in the serialized alphabet, '#'-prefixed and blank
  // lines skipped). Externally produced GPT-2-family tables load this way.
  static BpeModel from_merge_lines(const std::vector<std::string>& lines);

  static BpeModel load(const std::string& merges_path, const std::string& vocab_path);
  static BpeModel import_merges(const std::string& merges_path);
  void save(const std::string& merges_path, const std::string& vocab_path) const;

  std::vector<int> encode(std::string_view text) const;

  // Inverse of encode on any id sequence. Special ids render as their
  // markers ("<bos>", "<eos>", "<pad>") unless strip_special is set.
  std::string decode(const std::vector<int>& ids, bool strip_special = false) const;

  std::size_t vocab_size() const { return tokens_.size() + 3; }
  int bos_id() const { return static_cast<int>(tokens_.size()); }
  int eos_id() const { return static_cast<int>(tokens_.size()) + 1; }
  int pad_id() const { return static_cast<int>(tokens_.size()) + 2; }
  bool is_special(int id) const { return id >= bos_id() && id <= pad_id(); }

  // Raw byte string of a non-special token id.
  const std::string& token_bytes(int id) const;

  std::size_t merge_count() const { return merges_.size(); }

  // Whitespace pretokenization: the text splits before every whitespace run,
  // so each pretoken is [whitespace run][non-whitespace run] and a space
  // sticks to the word that follows it. Encoding works per pretoken, which
  // bounds how far a later edit can change earlier ids.
  static std::vector<std::string_view> pretokenize(std::string_view text);

 private:
  BpeModel() = default;

  static std::uint64_t pack(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }

  void index_merges();
  void encode_pretoken(std::string_view piece, std::vector<int>& out) const;

  std::vector<std::string> tokens_;          // id -> bytes; ids 0..255 are bytes
  std::vector<std::pair<int, int>> merges_;  // (left id, right id), priority order
  // pair -> (rank, merged id); rebuilt by index_merges().
  std::unordered_map<std::uint64_t, std::pair<int, int>> rank_;
};

// Serialized token alphabet: printable bytes map to themselves, the rest to
// U+0100.. offsets (the GPT-2 byte/unicode bijection), so merge-table lines
// never contain raw whitespace or control bytes.
std::string bytes_to_serial(std::string_view bytes);
std::string serial_to_bytes(std::string_view serial);

}  // namespace pepler::bpe
