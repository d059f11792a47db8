#pragma once

// Interpolated add-1-smoothed n-gram language model over discrete acoustic
// units, with an explicit end-of-sequence event. A speech naturalness score
// is the average log probability per token (higher = more natural).
// Fine-tuning mixes in a fresh model trained on domain sequences.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/io.hpp"
#include "mosfuse/kmeans.hpp"

#include <json.hpp>

namespace mosfuse {

using Token = std::size_t;  // unit in [0,K), eos = K, bos = K+1 (contexts only)

struct NgramCounts {
    std::size_t order = 3;
    std::size_t vocab = 0;  // K
    // ngram[k-1]: full k-gram -> count; context[k-1]: (k-1)-prefix -> count
    std::vector<std::map<std::vector<Token>, std::uint64_t>> ngram;
    std::vector<std::map<std::vector<Token>, std::uint64_t>> context;

    Token eos() const { return vocab; }
    Token bos() const { return vocab + 1; }
};

struct UnitLM {
    std::size_t order = 3;
    std::size_t vocab_size = 0;  // K
    Vec lambdas;                 // interpolation weights per order, sum 1
    struct Component {
        double weight = 1.0;
        NgramCounts counts;
    };
    std::vector<Component> components;
};

namespace detail {

inline NgramCounts count_ngrams(const std::vector<UnitSequence>& sequences, std::size_t order,
                                std::size_t k_vocab) {
    NgramCounts c;
    c.order = order;
    c.vocab = k_vocab;
    c.ngram.resize(order);
    c.context.resize(order);
    for (const auto& seq : sequences) {
        if (seq.units.empty()) throw Error("empty unit sequence in corpus");
        std::vector<Token> tokens;
        tokens.assign(order - 1, c.bos());
        for (Token u : seq.units) {
            if (u >= k_vocab)
                throw Error("unit " + std::to_string(u) + " out of vocabulary range K=" +
                            std::to_string(k_vocab));
            tokens.push_back(u);
        }
        tokens.push_back(c.eos());
        for (std::size_t t = order - 1; t < tokens.size(); ++t) {
            for (std::size_t k = 1; k <= order; ++k) {
                std::vector<Token> gram(tokens.begin() + static_cast<long>(t - k + 1),
                                        tokens.begin() + static_cast<long>(t + 1));
                c.ngram[k - 1][gram]++;
                gram.pop_back();
                c.context[k - 1][gram]++;
            }
        }
    }
    return c;
}

// p_k(u | last k-1 history tokens) for one component; unseen contexts fall
// back to the add-1 unigram so every order contributes a proper distribution.
inline double order_prob(const NgramCounts& c, std::size_t k, const std::vector<Token>& history,
                         Token token) {
    auto unigram = [&](Token tok) {
        const auto it = c.ngram[0].find({tok});
        const std::uint64_t cnt = it == c.ngram[0].end() ? 0 : it->second;
        const auto ctx = c.context[0].find({});
        const std::uint64_t total = ctx == c.context[0].end() ? 0 : ctx->second;
        return (static_cast<double>(cnt) + 1.0) /
               (static_cast<double>(total) + static_cast<double>(c.vocab + 1));
    };
    if (k == 1) return unigram(token);
    std::vector<Token> ctx(history.end() - static_cast<long>(k - 1), history.end());
    const auto cit = c.context[k - 1].find(ctx);
    if (cit == c.context[k - 1].end() || cit->second == 0) return unigram(token);
    ctx.push_back(token);
    const auto nit = c.ngram[k - 1].find(ctx);
    const std::uint64_t cnt = nit == c.ngram[k - 1].end() ? 0 : nit->second;
    return static_cast<double>(cnt) / static_cast<double>(cit->second);
}

}  // namespace detail

inline UnitLM ulm_train(const std::vector<UnitSequence>& sequences, std::size_t order,
                        std::size_t k_vocab) {
    if (order < 1) throw Error("ulm order must be >= 1");
    if (sequences.empty()) throw Error("empty unit corpus");
    UnitLM lm;
    lm.order = order;
    lm.vocab_size = k_vocab;
    lm.lambdas.assign(order, 1.0 / static_cast<double>(order));
    lm.components.push_back({1.0, detail::count_ngrams(sequences, order, k_vocab)});
    return lm;
}

// p(token | history) where history holds the already-consumed tokens
// (bos-padded to at least order-1). token may be a unit or eos.
inline double ulm_prob(const UnitLM& lm, const std::vector<Token>& history, Token token) {
    double p = 0.0;
    for (const auto& comp : lm.components) {
        double pc = 0.0;
        for (std::size_t k = 1; k <= lm.order; ++k)
            pc += lm.lambdas[k - 1] * detail::order_prob(comp.counts, k, history, token);
        p += comp.weight * pc;
    }
    return p;
}

inline UnitLM ulm_finetune(const UnitLM& base, const std::vector<UnitSequence>& domain,
                           double mix = 0.5) {
    if (mix <= 0.0 || mix > 1.0) throw Error("mix must be in (0, 1]");
    if (domain.empty()) throw Error("empty domain corpus");
    NgramCounts dc = detail::count_ngrams(domain, base.order, base.vocab_size);
    UnitLM out = base;
    for (auto& comp : out.components) comp.weight *= (1.0 - mix);
    out.components.push_back({mix, std::move(dc)});
    return out;
}

// Average log probability per token (eos included): (1/(T+1)) sum log p.
inline double speechlm_score(const UnitLM& lm, const UnitSequence& u) {
    if (u.units.empty()) throw Error("empty unit sequence");
    std::vector<Token> history;
    const Token bos = lm.vocab_size + 1;
    history.assign(lm.order > 0 ? lm.order - 1 : 0, bos);
    double logp = 0.0;
    auto consume = [&](Token tok) {
        logp += std::log(ulm_prob(lm, history, tok));
        history.push_back(tok);
    };
    for (Token unit : u.units) {
        if (unit >= lm.vocab_size)
            throw Error("unit " + std::to_string(unit) + " out of vocabulary range K=" +
                        std::to_string(lm.vocab_size));
        consume(unit);
    }
    consume(lm.vocab_size);  // eos
    return logp / static_cast<double>(u.units.size() + 1);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json ulm_to_json(const UnitLM& lm) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["order"] = lm.order;
    j["K"] = lm.vocab_size;
    j["lambdas"] = nlohmann::json::array();
    for (double l : lm.lambdas) j["lambdas"].push_back(double_to_text(l));
    j["components"] = nlohmann::json::array();
    for (const auto& comp : lm.components) {
        nlohmann::json cj;
        cj["weight"] = double_to_text(comp.weight);
        auto tables = [&](const auto& maps) {
            nlohmann::json out = nlohmann::json::array();
            for (const auto& table : maps) {
                nlohmann::json tj = nlohmann::json::array();
                for (const auto& [key, cnt] : table) {
                    nlohmann::json entry = nlohmann::json::array();
                    for (Token t : key) entry.push_back(t);
                    entry.push_back(cnt);
                    tj.push_back(std::move(entry));
                }
                out.push_back(std::move(tj));
            }
            return out;
        };
        cj["ngram"] = tables(comp.counts.ngram);
        cj["context"] = tables(comp.counts.context);
        j["components"].push_back(std::move(cj));
    }
    return j;
}

inline void save_ulm(const std::filesystem::path& path, const UnitLM& lm) {
    atomic_write(path, ulm_to_json(lm).dump() + "\n");
}

inline UnitLM load_ulm(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    if (j.at("format_version").get<int>() != 1)
        throw Error(path.string() + ": unsupported ULM format version");
    UnitLM lm;
    lm.order = j.at("order").get<std::size_t>();
    lm.vocab_size = j.at("K").get<std::size_t>();
    for (const auto& s : j.at("lambdas")) lm.lambdas.push_back(text_to_double(s.get<std::string>()));
    for (const auto& cj : j.at("components")) {
        UnitLM::Component comp;
        comp.weight = text_to_double(cj.at("weight").get<std::string>());
        comp.counts.order = lm.order;
        comp.counts.vocab = lm.vocab_size;
        auto tables = [&](const nlohmann::json& arr,
                          std::vector<std::map<std::vector<Token>, std::uint64_t>>& maps) {
            for (const auto& tj : arr) {
                std::map<std::vector<Token>, std::uint64_t> table;
                for (const auto& entry : tj) {
                    std::vector<Token> key;
                    for (std::size_t i = 0; i + 1 < entry.size(); ++i)
                        key.push_back(entry[i].get<Token>());
                    table[key] = entry.back().get<std::uint64_t>();
                }
                maps.push_back(std::move(table));
            }
        };
        tables(cj.at("ngram"), comp.counts.ngram);
        tables(cj.at("context"), comp.counts.context);
        lm.components.push_back(std::move(comp));
    }
    return lm;
}

}  // namespace mosfuse
