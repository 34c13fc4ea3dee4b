#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>
#include <vector>

#include <vitas/core/rng.hpp>
#include <vitas/metrics/text.hpp>
#include <vitas/synth/vocab.hpp>

using namespace vitas;
using namespace vitas::metrics;

namespace {

TokenSeq toks(const std::string& s) { return synth::split_tokens(s); }

// Independent BLEU oracle: n-gram tallies via string-keyed maps, same add-1
// convention on zero-count orders, same final expression.
double oracle_bleu4(const TokenSeq& cand, const std::vector<TokenSeq>& refs) {
    if (refs.empty() || cand.empty()) return 0.0;
    auto key = [](const TokenSeq& t, std::size_t i, std::size_t n) {
        std::string k;
        for (std::size_t j = 0; j < n; ++j) k += t[i + j] + "\x01";
        return k;
    };
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
        std::map<std::string, std::size_t> cc;
        std::size_t total = 0;
        if (cand.size() >= n) {
            total = cand.size() - n + 1;
            for (std::size_t i = 0; i + n <= cand.size(); ++i) cc[key(cand, i, n)]++;
        }
        std::size_t clipped = 0;
        for (auto& [k, c] : cc) {
            std::size_t best = 0;
            for (const auto& ref : refs) {
                std::size_t rc = 0;
                for (std::size_t i = 0; i + n <= ref.size(); ++i)
                    if (key(ref, i, n) == k) ++rc;
                best = std::max(best, rc);
            }
            clipped += std::min(c, best);
        }
        double p = (clipped == 0 || total == 0) ? double(clipped + 1) / double(total + 1)
                                                : double(clipped) / double(total);
        log_sum += 0.25 * std::log(p);
    }
    std::size_t c_len = cand.size(), r_len = refs[0].size();
    for (const auto& ref : refs) {
        auto d = [&](std::size_t l) { return l > c_len ? l - c_len : c_len - l; };
        if (d(ref.size()) < d(r_len) || (d(ref.size()) == d(r_len) && ref.size() < r_len))
            r_len = ref.size();
    }
    double bp = c_len >= r_len ? 1.0 : std::exp(1.0 - double(r_len) / double(c_len));
    return bp * std::exp(log_sum);
}

// top-down memoized LCS, distinct from the rolling-array DP under test
std::size_t oracle_lcs(const TokenSeq& a, const TokenSeq& b) {
    std::vector<std::vector<long>> memo(a.size() + 1, std::vector<long>(b.size() + 1, -1));
    std::function<std::size_t(std::size_t, std::size_t)> go =
        [&](std::size_t i, std::size_t j) -> std::size_t {
        if (i == 0 || j == 0) return 0;
        long& m = memo[i][j];
        if (m >= 0) return (std::size_t)m;
        std::size_t r = a[i - 1] == b[j - 1]
                            ? go(i - 1, j - 1) + 1
                            : std::max(go(i - 1, j), go(i, j - 1));
        m = (long)r;
        return r;
    };
    return go(a.size(), b.size());
}

TokenSeq random_seq(Rng& rng, int max_len) {
    static const std::vector<std::string> pool = {"a", "b", "c", "d", "e", "f", "g", "h"};
    int len = rng.uniform_int(1, max_len);
    TokenSeq out;
    for (int i = 0; i < len; ++i)
        out.push_back(pool[(std::size_t)rng.uniform_int(0, (int)pool.size() - 1)]);
    return out;
}

} // namespace

TEST_CASE("bleu4 basics: identity, brevity penalty, emptiness", "[metrics]") {
    auto ref = toks("the cat sat on the mat and slept all day");
    CHECK(bleu4(ref, {ref}) == 1.0);

    auto cand2 = toks("the cat");
    double got = bleu4(cand2, {ref});
    double bp = std::exp(1.0 - 10.0 / 2.0);
    CHECK(got <= bp + 1e-12); // brevity penalty as stated caps the score
    CHECK(got > 0.0);

    CHECK(bleu4({}, {ref}) == 0.0);
}

TEST_CASE("bleu4 hand-tallied 12-token case", "[metrics]") {
    auto cand = toks("the cat sat on the mat near the big dog today ok");
    auto ref = toks("the cat sat on the mat beside the big dog yesterday no");
    // hand tally: 1-grams clipped 9/12; 2-grams 7/11; 3-grams 5/10; 4-grams 3/9; BP=1
    double expect = std::exp(0.25 * (std::log(9.0 / 12.0) + std::log(7.0 / 11.0) +
                                     std::log(5.0 / 10.0) + std::log(3.0 / 9.0)));
    CHECK(bleu4(cand, {ref}) == Catch::Approx(expect).epsilon(1e-12));
    CHECK(bleu4(cand, {ref}) == oracle_bleu4(cand, {ref}));
}

TEST_CASE("bleu4 matches the brute-force oracle on random pairs", "[metrics]") {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        auto cand = random_seq(rng, 20);
        auto ref = random_seq(rng, 20);
        double a = bleu4(cand, {ref});
        double b = oracle_bleu4(cand, {ref});
        REQUIRE(a == b);
        REQUIRE(a >= 0.0);
        REQUIRE(a <= 1.0);
    }
}

TEST_CASE("bleu4 is permutation-sensitive", "[metrics]") {
    auto ref = toks("a b c d e");
    auto inorder = toks("a b c d e");
    auto shuffled = toks("e c a d b");
    CHECK(bleu4(inorder, {ref}) >= bleu4(shuffled, {ref}));
    CHECK(bleu4(inorder, {ref}) == 1.0);
    CHECK(bleu4(shuffled, {ref}) < 1.0);
}

TEST_CASE("rouge_l basics and oracle equivalence", "[metrics]") {
    CHECK(rouge_l_f1(toks("the cat sat"), toks("the cat ran")) ==
          Catch::Approx(2.0 / 3.0).epsilon(1e-12));
    auto s = toks("consistent with findings noted on exam");
    CHECK(rouge_l_f1(s, s) == 1.0);
    CHECK(rouge_l_f1(toks("x y z"), toks("p q r")) == 0.0);
    CHECK(rouge_l_f1({}, {}) == 0.0);

    Rng rng(88);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_seq(rng, 20);
        auto b = random_seq(rng, 20);
        REQUIRE(lcs_length(a, b) == oracle_lcs(a, b));
        REQUIRE(lcs_length(a, b) == lcs_length(b, a)); // symmetry
        double f1 = rouge_l_f1(a, b);
        double lcs = (double)oracle_lcs(a, b);
        double p = lcs / (double)a.size(), r = lcs / (double)b.size();
        double want = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
        REQUIRE(f1 == want);
        REQUIRE(f1 >= 0.0);
        REQUIRE(f1 <= 1.0);
    }
}

TEST_CASE("rule labeler reads affirmations and negations", "[metrics]") {
    auto labels = rule_labels(toks("there is evidence of pneumothorax . no pleural effusion is identified ."));
    CHECK(labels[6] == 1);
    CHECK(labels[5] == 0);
    CHECK(labels[synth::kNoFindingClass] == 0);

    auto clean = rule_labels(toks("no acute cardiopulmonary process ."));
    CHECK(clean[synth::kNoFindingClass] == 1);
}

TEST_CASE("label_f1 identity, miss, and confusion-matrix oracle", "[metrics]") {
    auto a = toks("large pneumothorax in the left upper zone .");
    CHECK(label_f1({a}, {a}) == 1.0);

    auto none = toks("no acute cardiopulmonary process .");
    auto one = toks("small consolidation in the right mid zone .");
    double f = label_f1({none}, {one});
    CHECK(f < 1.0); // consolidation F1 = 0 and no-finding F1 = 0 drag the macro down

    // random template pairs vs direct confusion-matrix computation
    Rng rng(99);
    std::vector<TokenSeq> preds, refs;
    for (int i = 0; i < 40; ++i) {
        auto mk = [&](void) {
            TokenSeq t;
            for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
                if (c == synth::kNoFindingClass) continue;
                if (rng.bernoulli(0.4)) {
                    t.push_back("moderate");
                    for (auto& w : synth::class_phrases()[c]) t.push_back(w);
                    for (auto& w : {"in", "the", "left", "mid", "zone", "."}) t.push_back(w);
                }
            }
            if (t.empty()) t = toks("no acute cardiopulmonary process .");
            return t;
        };
        preds.push_back(mk());
        refs.push_back(mk());
    }
    std::array<std::size_t, synth::kNumClasses> tp{}, fp{}, fn{};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        auto lp = rule_labels(preds[i]), lr = rule_labels(refs[i]);
        for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
            tp[c] += lp[c] && lr[c];
            fp[c] += lp[c] && !lr[c];
            fn[c] += !lp[c] && lr[c];
        }
    }
    double macro = 0;
    for (std::size_t c = 0; c < synth::kNumClasses; ++c) {
        double d = double(2 * tp[c] + fp[c] + fn[c]);
        macro += d == 0 ? 1.0 : 2.0 * double(tp[c]) / d;
    }
    macro /= double(synth::kNumClasses);
    CHECK(label_f1(preds, refs) == Catch::Approx(macro).epsilon(1e-12));
}
