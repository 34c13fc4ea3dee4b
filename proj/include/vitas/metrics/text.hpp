#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "../synth/vocab.hpp"

namespace vitas::metrics {

using TokenSeq = std::vector<std::string>;

// Sentence BLEU-4: geometric mean of modified 1..4-gram precisions times the
// brevity penalty. Zero-count orders (including candidates shorter than n)
// get add-1 smoothing on numerator and denominator.
inline double bleu4(const TokenSeq& candidate, const std::vector<TokenSeq>& references) {
    if (references.empty()) return 0.0;
    if (candidate.empty()) return 0.0;

    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        std::map<std::vector<std::string>, std::size_t> cand_counts;
        std::size_t total = candidate.size() >= n ? candidate.size() - n + 1 : 0;
        for (std::size_t i = 0; i + n <= candidate.size(); ++i)
            cand_counts[{candidate.begin() + static_cast<long>(i),
                         candidate.begin() + static_cast<long>(i + n)}]++;
        std::size_t clipped = 0;
        for (const auto& [gram, count] : cand_counts) {
            std::size_t best_ref = 0;
            for (const auto& ref : references) {
                std::size_t c = 0;
                for (std::size_t i = 0; i + n <= ref.size(); ++i) {
                    bool eq = std::equal(gram.begin(), gram.end(),
                                         ref.begin() + static_cast<long>(i));
                    if (eq) ++c;
                }
                best_ref = std::max(best_ref, c);
            }
            clipped += std::min(count, best_ref);
        }
        double p = (clipped == 0 || total == 0)
                       ? static_cast<double>(clipped + 1) / static_cast<double>(total + 1)
                       : static_cast<double>(clipped) / static_cast<double>(total);
        log_sum += 0.25 * std::log(p);
    }

    // closest reference length; ties resolved toward the shorter reference
    std::size_t c_len = candidate.size();
    std::size_t r_len = references[0].size();
    for (const auto& ref : references) {
        auto diff = [&](std::size_t l) {
            return l > c_len ? l - c_len : c_len - l;
        };
        if (diff(ref.size()) < diff(r_len) || (diff(ref.size()) == diff(r_len) && ref.size() < r_len))
            r_len = ref.size();
    }
    double bp = c_len >= r_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len));
    return bp * std::exp(log_sum);
}

inline std::size_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double rouge_l_f1(const TokenSeq& candidate, const TokenSeq& reference) {
    if (candidate.empty() && reference.empty()) return 0.0;
    if (candidate.empty() || reference.empty()) return 0.0;
    double lcs = static_cast<double>(lcs_length(candidate, reference));
    double p = lcs / static_cast<double>(candidate.size());
    double r = lcs / static_cast<double>(reference.size());
    if (p + r <= 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

// Rule-based stand-in for a neural report labeler: a class is positive when
// its phrase occurs not immediately negated by "no"/"without".
inline std::array<int, synth::kNumClasses> rule_labels(const TokenSeq& text) {
    std::array<int, synth::kNumClasses> out{};
    for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
        if (c == synth::kNoFindingClass) continue;
        const auto& phrase = synth::class_phrases()[c];
        for (std::size_t i = 0; i + phrase.size() <= text.size(); ++i) {
            if (!std::equal(phrase.begin(), phrase.end(), text.begin() + static_cast<long>(i)))
                continue;
            bool negated = i > 0 && (text[i - 1] == "no" || text[i - 1] == "without");
            if (!negated) {
                out[c] = 1;
                break;
            }
        }
    }
    bool any = false;
    for (std::size_t c = 0; c < synth::kNumClasses; ++c)
        if (c != synth::kNoFindingClass && out[c]) any = true;
    if (!any) out[synth::kNoFindingClass] = 1;
    return out;
}

// Macro F1 over classes across a set of pred/ref text pairs. A class absent
// from both predictions and references scores 1 (0/0 := 1 convention).
inline double label_f1(const std::vector<TokenSeq>& preds, const std::vector<TokenSeq>& refs) {
    std::array<std::size_t, synth::kNumClasses> tp{}, fp{}, fn{};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto lp = rule_labels(preds[i]);
        auto lr = rule_labels(refs[i]);
        for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
            if (lp[c] && lr[c]) tp[c]++;
            else if (lp[c] && !lr[c]) fp[c]++;
            else if (!lp[c] && lr[c]) fn[c]++;
        }
    }
    double macro = 0.0;
    for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
        double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
        double f1 = denom == 0.0 ? 1.0 : 2.0 * static_cast<double>(tp[c]) / denom;
        macro += f1;
    }
    return macro / static_cast<double>(synth::kNumClasses);
}

inline double label_f1_pair(const TokenSeq& pred, const TokenSeq& ref) {
    return label_f1(std::vector<TokenSeq>{pred}, std::vector<TokenSeq>{ref});
}

} // namespace vitas::metrics
