#include "pepler/bpe.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "pepler/errors.hpp"

namespace pepler::bpe {
namespace {

using json = nlohmann::json;

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// GPT-2 byte/unicode bijection: bytes that are printable and not a space map
// to their own codepoint, the remaining 68 map to 256, 257, ... in byte order.
struct ByteAlphabet {
  std::array<int, 256> to_cp{};
  std::unordered_map<int, int> to_byte;

  ByteAlphabet() {
    auto direct = [](int b) {
      return (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
    };
    int n = 0;
    for (int b = 0; b < 256; ++b) {
      int cp = direct(b) ? b : 256 + n++;
      to_cp[static_cast<std::size_t>(b)] = cp;
      to_byte[cp] = b;
    }
  }
};

const ByteAlphabet& alphabet() {
  static ByteAlphabet a;
  return a;
}

void append_utf8(std::string& out, int cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("short write to " + path);
}

std::vector<std::string> file_lines(const std::string& path) {
  std::string text = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) {
      if (start < text.size()) lines.push_back(text.substr(start));
      break;
    }
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace

std::string bytes_to_serial(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) append_utf8(out, alphabet().to_cp[b]);
  return out;
}

std::string serial_to_bytes(std::string_view serial) {
  std::string out;
  std::size_t i = 0;
  while (i < serial.size()) {
    unsigned char c = static_cast<unsigned char>(serial[i]);
    int cp;
    if (c < 0x80) {
      cp = c;
      i += 1;
    } else if ((c & 0xE0) == 0xC0 && i + 1 < serial.size() &&
               (static_cast<unsigned char>(serial[i + 1]) & 0xC0) == 0x80) {
      cp = ((c & 0x1F) << 6) | (static_cast<unsigned char>(serial[i + 1]) & 0x3F);
      i += 2;
    } else {
      throw ParseError("merge table: invalid UTF-8 in token");
    }
    auto it = alphabet().to_byte.find(cp);
    if (it == alphabet().to_byte.end()) {
      throw ParseError("merge table: codepoint " + std::to_string(cp) +
                       " is not in the token alphabet");
    }
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

std::vector<std::string_view> BpeModel::pretokenize(std::string_view text) {
  std::vector<std::string_view> pieces;
  std::size_t start = 0;
  for (std::size_t i = 1; i < text.size(); ++i) {
    if (is_ws(text[i]) && !is_ws(text[i - 1])) {
      pieces.push_back(text.substr(start, i - start));
      start = i;
    }
  }
  if (start < text.size()) pieces.push_back(text.substr(start));
  return pieces;
}

void BpeModel::index_merges() {
  rank_.clear();
  rank_.reserve(merges_.size() * 2);
  for (std::size_t r = 0; r < merges_.size(); ++r) {
    int merged = 256 + static_cast<int>(r);
    rank_[pack(merges_[r].first, merges_[r].second)] = {static_cast<int>(r), merged};
  }
}

BpeModel BpeModel::train(std::string_view text, std::size_t target_vocab) {
  if (text.empty()) throw ValidationError("bpe train: empty corpus");
  if (target_vocab < 256 + 3) {
    throw ValidationError("bpe train: target vocab " + std::to_string(target_vocab) +
                          " is below the 259 minimum (256 bytes + 3 specials)");
  }
  BpeModel model;
  model.tokens_.reserve(target_vocab);
  for (int b = 0; b < 256; ++b) model.tokens_.push_back(std::string(1, static_cast<char>(b)));

  // Distinct pretokens with counts; pair statistics are aggregates, so the
  // hash iteration order never influences the result.
  std::unordered_map<std::string, long long> counts;
  for (std::string_view piece : pretokenize(text)) counts[std::string(piece)] += 1;
  struct Word {
    std::vector<int> syms;
    long long count;
  };
  std::vector<Word> words;
  words.reserve(counts.size());
  for (const auto& [piece, count] : counts) {
    Word w;
    w.count = count;
    w.syms.reserve(piece.size());
    for (unsigned char b : piece) w.syms.push_back(static_cast<int>(b));
    words.push_back(std::move(w));
  }

  const std::size_t merges_needed = target_vocab - 256 - 3;
  std::unordered_map<std::uint64_t, long long> pair_counts;
  for (std::size_t m = 0; m < merges_needed; ++m) {
    pair_counts.clear();
    for (const Word& w : words) {
      for (std::size_t j = 0; j + 1 < w.syms.size(); ++j) {
        pair_counts[pack(w.syms[j], w.syms[j + 1])] += w.count;
      }
    }
    if (pair_counts.empty()) {
      throw ValidationError("bpe train: corpus exhausted after " + std::to_string(m) +
                            " merges; target vocab " + std::to_string(target_vocab) +
                            " needs " + std::to_string(merges_needed));
    }
    long long best_count = -1;
    int best_a = -1, best_b = -1;
    for (const auto& [key, count] : pair_counts) {
      if (count < best_count) continue;
      int a = static_cast<int>(key >> 32);
      int b = static_cast<int>(key & 0xFFFFFFFFull);
      if (count > best_count) {
        best_count = count;
        best_a = a;
        best_b = b;
        continue;
      }
      // Tie: lexicographically smaller (left, right) byte-string pair wins.
      const std::string& ta = model.tokens_[static_cast<std::size_t>(a)];
      const std::string& tb = model.tokens_[static_cast<std::size_t>(b)];
      const std::string& ba = model.tokens_[static_cast<std::size_t>(best_a)];
      const std::string& bb = model.tokens_[static_cast<std::size_t>(best_b)];
      if (std::tie(ta, tb) < std::tie(ba, bb)) {
        best_a = a;
        best_b = b;
      }
    }
    int merged = static_cast<int>(model.tokens_.size());
    model.tokens_.push_back(model.tokens_[static_cast<std::size_t>(best_a)] +
                            model.tokens_[static_cast<std::size_t>(best_b)]);
    model.merges_.emplace_back(best_a, best_b);
    for (Word& w : words) {
      if (w.syms.size() < 2) continue;
      std::vector<int> out;
      out.reserve(w.syms.size());
      std::size_t i = 0;
      while (i < w.syms.size()) {
        if (i + 1 < w.syms.size() && w.syms[i] == best_a && w.syms[i + 1] == best_b) {
          out.push_back(merged);
          i += 2;
        } else {
          out.push_back(w.syms[i]);
          i += 1;
        }
      }
      w.syms = std::move(out);
    }
  }
  model.index_merges();
  return model;
}

BpeModel BpeModel::from_merge_lines(const std::vector<std::string>& lines) {
  BpeModel model;
  for (int b = 0; b < 256; ++b) model.tokens_.push_back(std::string(1, static_cast<char>(b)));
  std::unordered_map<std::string, int> by_bytes;
  by_bytes.reserve(lines.size() + 256);
  for (int b = 0; b < 256; ++b) by_bytes[model.tokens_[static_cast<std::size_t>(b)]] = b;

  std::size_t lineno = 0;
  for (const std::string& raw : lines) {
    ++lineno;
    if (raw.empty() || raw[0] == '#') continue;
    std::size_t sp = raw.find(' ');
    if (sp == std::string::npos || sp == 0 || sp + 1 >= raw.size() ||
        raw.find(' ', sp + 1) != std::string::npos) {
      throw ParseError("merge table line " + std::to_string(lineno) +
                       ": expected exactly two tokens");
    }
    std::string left = serial_to_bytes(raw.substr(0, sp));
    std::string right = serial_to_bytes(raw.substr(sp + 1));
    auto li = by_bytes.find(left);
    auto ri = by_bytes.find(right);
    if (li == by_bytes.end() || ri == by_bytes.end()) {
      throw ParseError("merge table line " + std::to_string(lineno) +
                       ": merge references a token not yet defined");
    }
    std::string joined = left + right;
    if (by_bytes.count(joined) != 0) {
      throw ParseError("merge table line " + std::to_string(lineno) +
                       ": duplicate merge result");
    }
    int id = static_cast<int>(model.tokens_.size());
    by_bytes[joined] = id;
    model.tokens_.push_back(std::move(joined));
    model.merges_.emplace_back(li->second, ri->second);
  }
  model.index_merges();
  return model;
}

BpeModel BpeModel::import_merges(const std::string& merges_path) {
  return from_merge_lines(file_lines(merges_path));
}

BpeModel BpeModel::load(const std::string& merges_path, const std::string& vocab_path) {
  BpeModel model = import_merges(merges_path);
  json v;
  try {
    v = json::parse(read_file(vocab_path));
  } catch (const json::exception& e) {
    throw ParseError("vocab file " + vocab_path + ": " + e.what());
  }
  if (!v.is_object() || !v.contains("vocab") || !v["vocab"].is_object()) {
    throw ParseError("vocab file " + vocab_path + ": missing \"vocab\" object");
  }
  const auto& entries = v["vocab"];
  if (entries.size() != model.tokens_.size()) {
    throw ParseError("vocab file " + vocab_path + ": has " +
                     std::to_string(entries.size()) + " tokens, merge table implies " +
                     std::to_string(model.tokens_.size()));
  }
  for (const auto& [serial, id] : entries.items()) {
    if (!id.is_number_integer()) {
      throw ParseError("vocab file " + vocab_path + ": non-integer id");
    }
    int i = id.get<int>();
    if (i < 0 || static_cast<std::size_t>(i) >= model.tokens_.size() ||
        model.tokens_[static_cast<std::size_t>(i)] != serial_to_bytes(serial)) {
      throw ParseError("vocab file " + vocab_path +
                       ": entry disagrees with the merge table at id " + std::to_string(i));
    }
  }
  return model;
}

void BpeModel::save(const std::string& merges_path, const std::string& vocab_path) const {
  std::string merges;
  for (const auto& [a, b] : merges_) {
    merges += bytes_to_serial(tokens_[static_cast<std::size_t>(a)]);
    merges += ' ';
    merges += bytes_to_serial(tokens_[static_cast<std::size_t>(b)]);
    merges += '\n';
  }
  write_file(merges_path, merges);

  json vocab = json::object();
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    vocab[bytes_to_serial(tokens_[i])] = i;
  }
  json doc;
  doc["model"] = "byte-bpe";
  doc["vocab"] = std::move(vocab);
  doc["specials"] = {{"<bos>", bos_id()}, {"<eos>", eos_id()}, {"<pad>", pad_id()}};
  write_file(vocab_path, doc.dump(2) + "\n");
}

void BpeModel::encode_pretoken(std::string_view piece, std::vector<int>& out) const {
  std::vector<int> syms;
  syms.reserve(piece.size());
  for (unsigned char b : piece) syms.push_back(static_cast<int>(b));
  while (syms.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    int best_a = -1, best_b = -1, best_merged = -1;
    for (std::size_t j = 0; j + 1 < syms.size(); ++j) {
      auto it = rank_.find(pack(syms[j], syms[j + 1]));
      if (it != rank_.end() && it->second.first < best_rank) {
        best_rank = it->second.first;
        best_a = syms[j];
        best_b = syms[j + 1];
        best_merged = it->second.second;
      }
    }
    if (best_a < 0) break;
    std::vector<int> merged;
    merged.reserve(syms.size());
    std::size_t i = 0;
    while (i < syms.size()) {
      if (i + 1 < syms.size() && syms[i] == best_a && syms[i + 1] == best_b) {
        merged.push_back(best_merged);
        i += 2;
      } else {
        merged.push_back(syms[i]);
        i += 1;
      }
    }
    syms = std::move(merged);
  }
  out.insert(out.end(), syms.begin(), syms.end());
}

std::vector<int> BpeModel::encode(std::string_view text) const {
  std::vector<int> out;
  for (std::string_view piece : pretokenize(text)) encode_pretoken(piece, out);
  return out;
}

const std::string& BpeModel::token_bytes(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw LookupError("bpe: token id " + std::to_string(id) +
                      " outside learned vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string BpeModel::decode(const std::vector<int>& ids, bool strip_special) const {
  std::string out;
  for (int id : ids) {
    if (id == bos_id()) {
      if (!strip_special) out += "<bos>";
    } else if (id == eos_id()) {
      if (!strip_special) out += "<eos>";
    } else if (id == pad_id()) {
      if (!strip_special) out += "<pad>";
    } else if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw LookupError("bpe decode: unknown token id " + std::to_string(id));
    } else {
      out += tokens_[static_cast<std::size_t>(id)];
    }
  }
  return out;
}

}  // namespace pepler::bpe
