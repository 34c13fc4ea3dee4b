#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "text.hpp"

namespace vitas::metrics {

struct EvalScores {
    double bleu4 = 0.0, rouge_l = 0.0, label_f1 = 0.0;
    std::size_t n = 0;
};

// prediction files are JSONL rows {id, impression_pred, impression_ref}
inline EvalScores eval_prediction_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read predictions " + path);
    EvalScores s;
    std::vector<TokenSeq> preds, refs;
    std::string line;
    double bleu_sum = 0.0, rouge_sum = 0.0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        TokenSeq pred = synth::split_tokens(j.at("impression_pred").get<std::string>());
        TokenSeq ref = synth::split_tokens(j.at("impression_ref").get<std::string>());
        bleu_sum += bleu4(pred, {ref});
        rouge_sum += rouge_l_f1(pred, ref);
        preds.push_back(std::move(pred));
        refs.push_back(std::move(ref));
        ++s.n;
    }
    if (s.n == 0) throw std::runtime_error("empty prediction file " + path);
    s.bleu4 = bleu_sum / static_cast<double>(s.n);
    s.rouge_l = rouge_sum / static_cast<double>(s.n);
    s.label_f1 = label_f1(preds, refs);
    return s;
}

struct AblationRow {
    std::string mode;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    EvalScores scores;
};

// per-mode mean +- sd over seeds; rows for missing runs carry the error text
inline std::vector<AblationRow> run_ablation(const std::vector<std::string>& modes,
                                             const std::vector<std::uint64_t>& seeds,
                                             const std::string& pred_path_pattern) {
    // pattern contains {mode} and {seed}
    std::vector<AblationRow> rows;
    for (const auto& mode : modes)
        for (auto seed : seeds) {
            AblationRow row;
            row.mode = mode;
            row.seed = seed;
            std::string path = pred_path_pattern;
            auto sub = [&path](const std::string& key, const std::string& val) {
                auto pos = path.find(key);
                if (pos != std::string::npos) path.replace(pos, key.size(), val);
            };
            sub("{mode}", mode);
            sub("{seed}", std::to_string(seed));
            try {
                row.scores = eval_prediction_file(path);
                row.ok = true;
            } catch (const std::exception& e) {
                row.error = e.what();
            }
            rows.push_back(std::move(row));
        }
    return rows;
}

inline void write_results_csv(const std::vector<AblationRow>& rows, const std::string& path) {
    std::ofstream f(path);
    f << "mode,seed,bleu4,rouge_l,label_f1,n_samples\n";
    f << std::setprecision(9);
    for (const auto& r : rows) {
        if (r.ok)
            f << r.mode << "," << r.seed << "," << r.scores.bleu4 << "," << r.scores.rouge_l
              << "," << r.scores.label_f1 << "," << r.scores.n << "\n";
        else
            f << r.mode << "," << r.seed << ",,,,0\n";
    }
}

struct ModeSummary {
    std::string mode;
    double bleu_mean = 0, bleu_sd = 0;
    double rouge_mean = 0, rouge_sd = 0;
    double f1_mean = 0, f1_sd = 0;
    std::size_t runs = 0, failed = 0;
};

inline std::vector<ModeSummary> summarize_ablation(const std::vector<AblationRow>& rows) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const AblationRow*>> by_mode;
    for (const auto& r : rows) {
        if (!by_mode.count(r.mode)) order.push_back(r.mode);
        by_mode[r.mode].push_back(&r);
    }
    std::vector<ModeSummary> out;
    for (const auto& mode : order) {
        ModeSummary m;
        m.mode = mode;
        std::vector<double> b, ro, f1;
        for (const auto* r : by_mode[mode]) {
            ++m.runs;
            if (!r->ok) {
                ++m.failed;
                continue;
            }
            b.push_back(r->scores.bleu4);
            ro.push_back(r->scores.rouge_l);
            f1.push_back(r->scores.label_f1);
        }
        auto stat = [](const std::vector<double>& v, double& mean, double& sd) {
            if (v.empty()) return;
            mean = 0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            sd = 0;
            for (double x : v) sd += (x - mean) * (x - mean);
            sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
        };
        stat(b, m.bleu_mean, m.bleu_sd);
        stat(ro, m.rouge_mean, m.rouge_sd);
        stat(f1, m.f1_mean, m.f1_sd);
        out.push_back(m);
    }
    return out;
}

inline std::string format_results_table(const std::vector<AblationRow>& rows) {
    auto summaries = summarize_ablation(rows);
    std::ostringstream os;
    os << std::left << std::setw(14) << "mode" << std::right << std::setw(18) << "bleu4"
       << std::setw(18) << "rouge_l" << std::setw(18) << "label_f1" << std::setw(8) << "runs"
       << "\n";
    os << std::string(76, '-') << "\n";
    os << std::fixed << std::setprecision(4);
    for (const auto& m : summaries) {
        auto pm = [&](double mean, double sd) {
            std::ostringstream c;
            c << std::fixed << std::setprecision(4) << mean << " +-" << std::setprecision(4)
              << sd;
            return c.str();
        };
        os << std::left << std::setw(14) << m.mode << std::right << std::setw(18)
           << pm(m.bleu_mean, m.bleu_sd) << std::setw(18) << pm(m.rouge_mean, m.rouge_sd)
           << std::setw(18) << pm(m.f1_mean, m.f1_sd) << std::setw(8) << m.runs;
        if (m.failed > 0) os << "  (" << m.failed << " failed)";
        os << "\n";
    }
    return os.str();
}

} // namespace vitas::metrics
