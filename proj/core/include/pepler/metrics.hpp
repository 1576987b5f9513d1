#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pepler::metrics {

// Lowercases, separates ASCII punctuation into standalone tokens, splits on
// whitespace. A '-' flanked by alphanumerics stays inside its word ("wi-fi").
std::vector<std::string> word_tokenize(std::string_view text);

// True when the feature's word-token sequence appears contiguously in the
// word tokens of `text` (case folding comes from word_tokenize itself).
bool feature_in_text(std::string_view feature, std::string_view text);

// Mean sentence-level BLEU-n over candidate/reference pairs, scaled to
// [0, 100]. Modified n-gram precision with clipping; orders >= 2 get add-one
// smoothing; brevity penalty exp(1 - r/c) when the candidate is shorter.
// An empty candidate scores 0 for its sentence.
double bleu(std::span<const std::string> candidates,
            std::span<const std::string> references, int max_n);

struct RougeScores {
  double p1 = 0, r1 = 0, f1 = 0;
  double p2 = 0, r2 = 0, f2 = 0;
};

// Per-sample ROUGE-1/2 precision, recall and F (F forced to 0 when P+R = 0),
// averaged over samples, scaled to [0, 100].
RougeScores rouge(std::span<const std::string> candidates,
                  std::span<const std::string> references);

// Distinct strings (whitespace runs collapsed, ends trimmed) / N.
double usr(std::span<const std::string> generated);

struct EvalSample {
  std::string generated;
  std::string reference;
  std::string feature;
};

// Fraction of samples whose ground-truth feature shows up in the generated
// text under feature_in_text.
double fmr(std::span<const EvalSample> samples);

// Fraction of the feature universe detected in at least one generated text.
double fcr(std::span<const EvalSample> samples,
           std::span<const std::string> universe);

// Mean pairwise |intersection| of detected-feature sets over all N(N-1)/2
// unordered pairs. Requires N >= 2.
double div(std::span<const std::string> generated,
           std::span<const std::string> universe);

struct MetricsReport {
  double bleu1 = 0, bleu4 = 0;
  RougeScores rouge;
  double usr = 0, fmr = 0, fcr = 0, div = 0;
};

MetricsReport evaluate(std::span<const EvalSample> samples,
                       std::span<const std::string> universe);

}  // namespace pepler::metrics
