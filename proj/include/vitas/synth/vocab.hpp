#pragma once

#include <array>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace vitas::synth {

constexpr std::size_t kNumClasses = 8;

inline const std::array<std::string, kNumClasses>& class_names() {
    static const std::array<std::string, kNumClasses> names = {
        "Atelectasis",      "Cardiomegaly", "Consolidation", "Edema",
        "No Finding",       "Pleural Effusion", "Pneumothorax", "Support Devices"};
    return names;
}

constexpr std::size_t kNoFindingClass = 4;

// token sequences for each class as they appear in report text
inline const std::array<std::vector<std::string>, kNumClasses>& class_phrases() {
    static const std::array<std::vector<std::string>, kNumClasses> p = {{
        {"atelectasis"},
        {"cardiomegaly"},
        {"consolidation"},
        {"pulmonary", "edema"},
        {"no", "acute", "findings"},
        {"pleural", "effusion"},
        {"pneumothorax"},
        {"support", "devices"},
    }};
    return p;
}

inline const std::vector<std::string>& severity_words() {
    static const std::vector<std::string> w = {"small", "moderate", "large"};
    return w;
}
inline const std::vector<std::string>& side_words() {
    static const std::vector<std::string> w = {"left", "right"};
    return w;
}
inline const std::vector<std::string>& zone_words() {
    static const std::vector<std::string> w = {"upper", "mid", "lower"};
    return w;
}

// Closed vocabulary: id 0..3 are PAD/BOS/EOS/UNK, then the corpus words.
struct Vocabulary {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> ids;

    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    std::size_t size() const { return tokens.size(); }

    int id(const std::string& tok) const {
        auto it = ids.find(tok);
        return it == ids.end() ? kUnk : it->second;
    }
    const std::string& token(int id) const { return tokens.at(static_cast<std::size_t>(id)); }
};

inline const Vocabulary& vocabulary() {
    static const Vocabulary vocab = [] {
        Vocabulary v;
        auto push = [&v](const std::string& t) {
            if (!v.ids.count(t)) {
                v.ids[t] = static_cast<int>(v.tokens.size());
                v.tokens.push_back(t);
            }
        };
        push("<pad>");
        push("<bos>");
        push("<eos>");
        push("<unk>");
        static const char* words[] = {
            ".",         "a",        "acute",      "and",      "appearance", "are",
            "atelectasis", "cardiomegaly", "cardiopulmonary", "chest",  "clear",
            "consistent", "consolidation", "current",  "devices",  "edema",
            "effusion",  "evidence", "exam",       "findings", "frontal",   "identified",
            "in",        "is",       "lateral",    "left",     "large",     "lower",
            "lungs",     "mid",      "mild",       "moderate", "no",        "noted",
            "obtained",  "of",       "on",         "pleural",  "pneumothorax",
            "process",   "pulmonary", "right",     "seen",     "severe",    "single",
            "small",     "support",  "the",        "there",    "upper",     "view",
            "views",     "was",      "were",       "with",     "zone",
        };
        for (const char* w : words) push(w);
        return v;
    }();
    return vocab;
}

inline std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (i) out += " ";
        out += toks[i];
    }
    return out;
}

inline std::vector<int> encode(const std::string& text) {
    const auto& v = vocabulary();
    std::vector<int> out;
    for (const auto& t : split_tokens(text)) out.push_back(v.id(t));
    return out;
}

inline std::string decode(const std::vector<int>& ids) {
    const auto& v = vocabulary();
    std::vector<std::string> toks;
    for (int id : ids) {
        if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
        toks.push_back(v.token(id));
    }
    return join_tokens(toks);
}

} // namespace vitas::synth
