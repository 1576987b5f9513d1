#include "pepler/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "pepler/errors.hpp"

namespace pepler::metrics {
namespace {

bool is_word_char(unsigned char c) {
  return std::isalnum(c) || c >= 0x80;  // non-ASCII bytes stay inside words
}

bool is_kept_hyphen(std::string_view text, std::size_t i) {
  return text[i] == '-' && i > 0 && i + 1 < text.size() &&
         is_word_char(static_cast<unsigned char>(text[i - 1])) &&
         is_word_char(static_cast<unsigned char>(text[i + 1]));
}

std::vector<std::string> ngrams(const std::vector<std::string>& tokens, int n) {
  std::vector<std::string> out;
  if (tokens.size() < static_cast<std::size_t>(n)) return out;
  out.reserve(tokens.size() - n + 1);
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string g = tokens[i];
    for (int k = 1; k < n; ++k) {
      g += ' ';
      g += tokens[i + k];
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::unordered_map<std::string, int> counts_of(std::vector<std::string> grams) {
  std::unordered_map<std::string, int> counts;
  for (auto& g : grams) ++counts[std::move(g)];
  return counts;
}

// Clipped n-gram overlap between candidate and reference counts.
long long clipped_matches(const std::unordered_map<std::string, int>& cand,
                          const std::unordered_map<std::string, int>& ref) {
  long long total = 0;
  for (const auto& [gram, count] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) total += std::min(count, it->second);
  }
  return total;
}

double sentence_bleu(const std::vector<std::string>& cand,
                     const std::vector<std::string>& ref, int max_n) {
  if (cand.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    auto cand_counts = counts_of(ngrams(cand, n));
    auto ref_counts = counts_of(ngrams(ref, n));
    long long total = cand.size() >= static_cast<std::size_t>(n)
                          ? static_cast<long long>(cand.size()) - n + 1
                          : 0;
    long long matched = clipped_matches(cand_counts, ref_counts);
    double p;
    if (n == 1) {
      p = total > 0 ? static_cast<double>(matched) / total : 0.0;
    } else {
      p = static_cast<double>(matched + 1) / static_cast<double>(total + 1);
    }
    if (p <= 0.0) return 0.0;
    log_sum += std::log(p);
  }
  double c = static_cast<double>(cand.size());
  double r = static_cast<double>(ref.size());
  double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / max_n);
}

struct PrfScores {
  double p = 0, r = 0, f = 0;
};

PrfScores rouge_n(const std::vector<std::string>& cand,
                  const std::vector<std::string>& ref, int n) {
  auto cand_grams = ngrams(cand, n);
  auto ref_grams = ngrams(ref, n);
  PrfScores s;
  if (cand_grams.empty() || ref_grams.empty()) return s;
  long long matched =
      clipped_matches(counts_of(cand_grams), counts_of(std::move(ref_grams)));
  s.p = static_cast<double>(matched) / static_cast<double>(cand_grams.size());
  s.r = static_cast<double>(matched) /
        static_cast<double>(ngrams(ref, n).size());
  s.f = s.p + s.r > 0 ? 2 * s.p * s.r / (s.p + s.r) : 0.0;
  return s;
}

std::string collapse_whitespace(const std::string& text) {
  std::string out;
  bool in_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_space = !out.empty();
      continue;
    }
    if (in_space) out += ' ';
    in_space = false;
    out += static_cast<char>(c);
  }
  return out;
}

void require_pair_count(std::size_t candidates, std::size_t references) {
  if (candidates != references)
    throw ValidationError("candidate/reference count mismatch: " +
                          std::to_string(candidates) + " vs " +
                          std::to_string(references));
  if (candidates == 0) throw ValidationError("no samples to score");
}

// Features from `universe` detected in one text, as universe indices.
std::set<std::size_t> detected_features(
    const std::string& text, std::span<const std::string> universe) {
  std::set<std::size_t> found;
  auto tokens = word_tokenize(text);
  for (std::size_t f = 0; f < universe.size(); ++f) {
    auto feat = word_tokenize(universe[f]);
    if (feat.empty() || feat.size() > tokens.size()) continue;
    for (std::size_t i = 0; i + feat.size() <= tokens.size(); ++i) {
      if (std::equal(feat.begin(), feat.end(), tokens.begin() + i)) {
        found.insert(f);
        break;
      }
    }
  }
  return found;
}

}  // namespace

std::vector<std::string> word_tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (is_word_char(c) || is_kept_hyphen(text, i)) {
      current += static_cast<char>(std::tolower(c));
    } else {
      flush();
      tokens.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return tokens;
}

bool feature_in_text(std::string_view feature, std::string_view text) {
  auto feat = word_tokenize(feature);
  if (feat.empty()) return false;
  auto tokens = word_tokenize(text);
  if (feat.size() > tokens.size()) return false;
  for (std::size_t i = 0; i + feat.size() <= tokens.size(); ++i) {
    if (std::equal(feat.begin(), feat.end(), tokens.begin() + i)) return true;
  }
  return false;
}

double bleu(std::span<const std::string> candidates,
            std::span<const std::string> references, int max_n) {
  require_pair_count(candidates.size(), references.size());
  if (max_n < 1) throw ValidationError("bleu order must be >= 1");
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    sum += sentence_bleu(word_tokenize(candidates[i]),
                         word_tokenize(references[i]), max_n);
  }
  return 100.0 * sum / static_cast<double>(candidates.size());
}

RougeScores rouge(std::span<const std::string> candidates,
                  std::span<const std::string> references) {
  require_pair_count(candidates.size(), references.size());
  RougeScores total;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto cand = word_tokenize(candidates[i]);
    auto ref = word_tokenize(references[i]);
    PrfScores s1 = rouge_n(cand, ref, 1);
    PrfScores s2 = rouge_n(cand, ref, 2);
    total.p1 += s1.p;
    total.r1 += s1.r;
    total.f1 += s1.f;
    total.p2 += s2.p;
    total.r2 += s2.r;
    total.f2 += s2.f;
  }
  double scale = 100.0 / static_cast<double>(candidates.size());
  total.p1 *= scale;
  total.r1 *= scale;
  total.f1 *= scale;
  total.p2 *= scale;
  total.r2 *= scale;
  total.f2 *= scale;
  return total;
}

double usr(std::span<const std::string> generated) {
  if (generated.empty()) throw ValidationError("no samples to score");
  std::unordered_set<std::string> distinct;
  for (const auto& text : generated) distinct.insert(collapse_whitespace(text));
  return static_cast<double>(distinct.size()) /
         static_cast<double>(generated.size());
}

double fmr(std::span<const EvalSample> samples) {
  if (samples.empty()) throw ValidationError("no samples to score");
  std::size_t matched = 0;
  for (const auto& s : samples) {
    if (feature_in_text(s.feature, s.generated)) ++matched;
  }
  return static_cast<double>(matched) / static_cast<double>(samples.size());
}

double fcr(std::span<const EvalSample> samples,
           std::span<const std::string> universe) {
  if (samples.empty()) throw ValidationError("no samples to score");
  if (universe.empty()) throw ValidationError("empty feature universe");
  std::set<std::size_t> covered;
  for (const auto& s : samples) {
    auto found = detected_features(s.generated, universe);
    covered.insert(found.begin(), found.end());
  }
  return static_cast<double>(covered.size()) /
         static_cast<double>(universe.size());
}

double div(std::span<const std::string> generated,
           std::span<const std::string> universe) {
  if (generated.size() < 2)
    throw ValidationError("feature diversity needs at least 2 samples");
  std::vector<std::set<std::size_t>> sets;
  sets.reserve(generated.size());
  for (const auto& text : generated)
    sets.push_back(detected_features(text, universe));
  long long overlap = 0;
  for (std::size_t a = 0; a < sets.size(); ++a) {
    for (std::size_t b = a + 1; b < sets.size(); ++b) {
      std::vector<std::size_t> common;
      std::set_intersection(sets[a].begin(), sets[a].end(), sets[b].begin(),
                            sets[b].end(), std::back_inserter(common));
      overlap += static_cast<long long>(common.size());
    }
  }
  double n = static_cast<double>(generated.size());
  return 2.0 * static_cast<double>(overlap) / (n * (n - 1.0));
}

MetricsReport evaluate(std::span<const EvalSample> samples,
                       std::span<const std::string> universe) {
  if (samples.empty()) throw ValidationError("no samples to score");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.generated.empty() || s.reference.empty() || s.feature.empty())
      throw ValidationError("sample " + std::to_string(i) +
                            " has an empty generated/reference/feature field");
  }
  std::vector<std::string> cands, refs;
  cands.reserve(samples.size());
  refs.reserve(samples.size());
  for (const auto& s : samples) {
    cands.push_back(s.generated);
    refs.push_back(s.reference);
  }
  MetricsReport report;
  report.bleu1 = bleu(cands, refs, 1);
  report.bleu4 = bleu(cands, refs, 4);
  report.rouge = rouge(cands, refs);
  report.usr = usr(cands);
  report.fmr = fmr(samples);
  report.fcr = fcr(samples, universe);
  report.div = div(cands, universe);
  return report;
}

}  // namespace pepler::metrics
