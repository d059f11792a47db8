#pragma once

// ASR confidence scoring from externally produced token posteriors.
// Posterior file: one utterance per line, `<utterance_id> <logprob> ...`,
// space-separated natural-log probabilities.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/io.hpp"

namespace mosfuse {

struct ConfidenceRecord {
    std::string utterance_id;
    std::vector<double> token_logprobs;  // each <= 0
};

inline double confidence_score(const ConfidenceRecord& r) {
    if (r.token_logprobs.empty())
        throw Error("empty confidence record for " + r.utterance_id);
    double s = 0.0;
    for (double lp : r.token_logprobs) s += lp;
    return s / static_cast<double>(r.token_logprobs.size());
}

inline std::vector<ConfidenceRecord> load_posteriors(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open posterior file: " + path.string());
    std::vector<ConfidenceRecord> out;
    std::set<std::string> ids;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ss(line);
        ConfidenceRecord rec;
        if (!(ss >> rec.utterance_id))
            throw Error(path.string() + " line " + std::to_string(row) + ": malformed line");
        std::string tok;
        while (ss >> tok) {
            const double lp = text_to_double(tok);
            if (lp > 0.0)
                throw Error(path.string() + " line " + std::to_string(row) +
                            ": log-probability must be <= 0, got " + tok);
            rec.token_logprobs.push_back(lp);
        }
        if (rec.token_logprobs.empty())
            throw Error(path.string() + " line " + std::to_string(row) +
                        ": no log-probabilities for " + rec.utterance_id);
        if (!ids.insert(rec.utterance_id).second)
            throw Error(path.string() + " line " + std::to_string(row) +
                        ": duplicate utterance id " + rec.utterance_id);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace mosfuse
