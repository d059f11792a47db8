#pragma once

// Subsystem fusion: rank candidate predictors by utterance-level SRCC,
// assemble the score matrix over supervised/confidence/speechlm columns,
// and train a bias-free linear fuser with minibatch RMSProp on MSE.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/dataset.hpp"
#include "mosfuse/early_stopping.hpp"
#include "mosfuse/io.hpp"
#include "mosfuse/metrics.hpp"
#include "mosfuse/rng.hpp"

#include <json.hpp>

namespace mosfuse {

enum class SubsystemKind { predictor, confidence, speechlm };

inline std::string kind_name(SubsystemKind k) {
    switch (k) {
        case SubsystemKind::predictor: return "predictor";
        case SubsystemKind::confidence: return "confidence";
        case SubsystemKind::speechlm: return "speechlm";
    }
    throw Error("bad subsystem kind");
}
inline SubsystemKind kind_from_name(const std::string& s) {
    if (s == "predictor") return SubsystemKind::predictor;
    if (s == "confidence") return SubsystemKind::confidence;
    if (s == "speechlm") return SubsystemKind::speechlm;
    throw Error("unknown subsystem kind: " + s);
}

struct SubsystemColumn {
    std::string name;
    SubsystemKind kind = SubsystemKind::predictor;
};

struct SubsystemScores {
    std::vector<std::string> utterance_ids;  // N rows
    std::vector<SubsystemColumn> columns;    // Q+R+S
    Mat matrix;                              // N x (Q+R+S)
};

struct FusionModel {
    Vec weights;  // no bias term
    std::vector<std::string> column_names;
    std::optional<std::pair<Vec, Vec>> standardization;  // per-column mean, std
};

struct FuserConfig {
    double learning_rate = 1e-5;
    std::size_t batch_size = 4;
    std::size_t max_epochs = 1000;
    std::size_t patience = 20;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0 || rmsprop_decay <= 0 || rmsprop_epsilon <= 0)
            throw Error("fuser: rates must be positive");
        if (batch_size == 0 || max_epochs == 0 || patience == 0)
            throw Error("fuser: batch_size, max_epochs, patience must be positive");
    }
};

// Rank candidates by utterance-level SRCC descending; ties broken by LCC
// descending, then name ascending. Returns the top Q names in rank order.
inline std::vector<std::string> select_top_q(
    const std::map<std::string, std::pair<Vec, Vec>>& candidates, std::size_t q) {
    if (q > candidates.size())
        throw Error("select_top_q: Q=" + std::to_string(q) + " exceeds " +
                    std::to_string(candidates.size()) + " candidates");
    struct Entry {
        std::string name;
        double srcc_v, lcc_v;
    };
    std::vector<Entry> entries;
    for (const auto& [name, pl] : candidates) {
        const auto& [pred, labels] = pl;
        if (pred.size() != labels.size())
            throw Error("select_top_q: misaligned predictions/labels for " + name);
        entries.push_back({name, srcc(pred, labels), lcc(pred, labels)});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
        if (a.srcc_v != b.srcc_v) return a.srcc_v > b.srcc_v;
        if (a.lcc_v != b.lcc_v) return a.lcc_v > b.lcc_v;
        return a.name < b.name;
    });
    std::vector<std::string> out;
    for (std::size_t i = 0; i < q; ++i) out.push_back(entries[i].name);
    return out;
}

// Build the N x (Q+R+S) matrix in dataset order plus the aligned MOS labels.
inline std::pair<SubsystemScores, Vec> assemble(
    const std::vector<std::pair<SubsystemColumn, std::map<std::string, double>>>& subsystems,
    const MosDataset& labels) {
    if (subsystems.empty()) throw Error("assemble: no subsystems");
    SubsystemScores s;
    for (const auto& [col, _] : subsystems) {
        for (const auto& existing : s.columns)
            if (existing.name == col.name) throw Error("duplicate column name: " + col.name);
        s.columns.push_back(col);
    }
    s.matrix = Mat(labels.utterances.size(), subsystems.size());
    Vec y;
    std::size_t row = 0;
    for (const auto& u : labels.utterances) {
        s.utterance_ids.push_back(u.utterance_id);
        for (std::size_t c = 0; c < subsystems.size(); ++c) {
            const auto& scores = subsystems[c].second;
            auto it = scores.find(u.utterance_id);
            if (it == scores.end())
                throw Error("subsystem '" + subsystems[c].first.name +
                            "' is missing utterance " + u.utterance_id);
            s.matrix(row, c) = it->second;
        }
        y.push_back(mean_opinion_score(u));
        ++row;
    }
    return {std::move(s), std::move(y)};
}

inline double fuse_forward(const FusionModel& m, const Vec& row) {
    Vec r = row;
    if (m.standardization) {
        const auto& [mean, stdv] = *m.standardization;
        for (std::size_t i = 0; i < r.size(); ++i) r[i] = (r[i] - mean[i]) / stdv[i];
    }
    return dot(m.weights, r);
}

struct FuserTrainResult {
    FusionModel model;
    std::vector<std::pair<std::size_t, double>> log;  // epoch, val MSE
    double best_val_mse = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

// One RMSProp update: v <- rho*v + (1-rho)*g^2 ; w <- w - eta*g/(sqrt(v)+eps)
inline void rmsprop_step(Vec& w, Vec& v, const Vec& g, const FuserConfig& cfg) {
    for (std::size_t i = 0; i < w.size(); ++i) {
        v[i] = cfg.rmsprop_decay * v[i] + (1.0 - cfg.rmsprop_decay) * g[i] * g[i];
        w[i] -= cfg.learning_rate * g[i] / (std::sqrt(v[i]) + cfg.rmsprop_epsilon);
    }
}

inline FuserTrainResult train_fuser(const SubsystemScores& train, const Vec& train_y,
                                    const SubsystemScores& val, const Vec& val_y,
                                    const FuserConfig& cfg, bool standardize = false) {
    cfg.validate();
    if (train.utterance_ids.empty() || val.utterance_ids.empty())
        throw Error("train_fuser: empty inputs");
    if (train.columns.size() != val.columns.size())
        throw Error("train_fuser: column schema mismatch");
    for (std::size_t i = 0; i < train.columns.size(); ++i)
        if (train.columns[i].name != val.columns[i].name)
            throw Error("train_fuser: column schema mismatch at '" + train.columns[i].name + "'");
    const std::size_t n_cols = train.columns.size();
    const std::size_t n = train.utterance_ids.size();
    if (train_y.size() != n || val_y.size() != val.utterance_ids.size())
        throw Error("train_fuser: label length mismatch");

    Vec col_mean(n_cols, 0.0), col_std(n_cols, 1.0);
    if (standardize) {
        for (std::size_t c = 0; c < n_cols; ++c) {
            double m = 0.0;
            for (std::size_t r = 0; r < n; ++r) m += train.matrix(r, c);
            m /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                const double d = train.matrix(r, c) - m;
                var += d * d;
            }
            var /= static_cast<double>(n);
            col_mean[c] = m;
            col_std[c] = var > 0.0 ? std::sqrt(var) : 1.0;
        }
    }
    auto cell = [&](const SubsystemScores& s, std::size_t r, std::size_t c) {
        return standardize ? (s.matrix(r, c) - col_mean[c]) / col_std[c] : s.matrix(r, c);
    };

    Vec w(n_cols, 1.0 / static_cast<double>(n_cols));
    Vec v(n_cols, 0.0);
    Rng rng(cfg.seed);

    auto val_mse = [&](const Vec& weights) {
        double s = 0.0;
        for (std::size_t r = 0; r < val.utterance_ids.size(); ++r) {
            double p = 0.0;
            for (std::size_t c = 0; c < n_cols; ++c) p += weights[c] * cell(val, r, c);
            const double d = p - val_y[r];
            s += d * d;
        }
        return s / static_cast<double>(val.utterance_ids.size());
    };

    FuserTrainResult res;
    Vec best_w = w;
    EarlyStopper stopper(cfg.patience);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            Vec g(n_cols, 0.0);
            const double bn = static_cast<double>(end - start);
            for (std::size_t i = start; i < end; ++i) {
                const std::size_t r = order[i];
                double p = 0.0;
                for (std::size_t c = 0; c < n_cols; ++c) p += w[c] * cell(train, r, c);
                const double err = p - train_y[r];
                for (std::size_t c = 0; c < n_cols; ++c)
                    g[c] += 2.0 * err * cell(train, r, c) / bn;
            }
            rmsprop_step(w, v, g, cfg);
        }
        const double vm = val_mse(w);
        res.log.emplace_back(epoch, vm);
        if (stopper.observe(epoch, vm)) best_w = w;
        res.epochs_run = epoch;
        if (stopper.should_stop()) break;
    }
    res.model.weights = std::move(best_w);
    for (const auto& c : train.columns) res.model.column_names.push_back(c.name);
    if (standardize) res.model.standardization = {col_mean, col_std};
    res.best_val_mse = stopper.best_loss();
    res.best_epoch = stopper.best_epoch();
    return res;
}

// ---------------------------------------------------------------------------
// Score matrix CSV + JSON sidecar, FusionModel JSON

inline void save_scores(const std::filesystem::path& csv_path, const SubsystemScores& s) {
    std::ostringstream out;
    out << "utterance_id";
    for (const auto& c : s.columns) out << ',' << c.name;
    out << '\n';
    for (std::size_t r = 0; r < s.utterance_ids.size(); ++r) {
        out << s.utterance_ids[r];
        for (std::size_t c = 0; c < s.columns.size(); ++c)
            out << ',' << double_to_text(s.matrix(r, c));
        out << '\n';
    }
    atomic_write(csv_path, out.str());
    nlohmann::json j;
    for (const auto& c : s.columns) j["columns"][c.name] = kind_name(c.kind);
    std::filesystem::path sidecar = csv_path;
    sidecar += ".schema.json";
    atomic_write(sidecar, j.dump(2) + "\n");
}

inline SubsystemScores load_scores(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw Error("cannot open score matrix: " + csv_path.string());
    std::filesystem::path sidecar = csv_path;
    sidecar += ".schema.json";
    std::map<std::string, std::string> kinds;
    if (std::filesystem::exists(sidecar)) {
        nlohmann::json j = nlohmann::json::parse(read_file(sidecar));
        for (const auto& [name, kind] : j.at("columns").items())
            kinds[name] = kind.get<std::string>();
    }
    SubsystemScores s;
    std::string line;
    std::size_t row = 0;
    std::vector<Vec> rows;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (row == 1) {
            if (cols.empty() || cols[0] != "utterance_id")
                throw Error(csv_path.string() + ": bad header");
            for (std::size_t i = 1; i < cols.size(); ++i) {
                SubsystemColumn col{cols[i], SubsystemKind::predictor};
                auto it = kinds.find(cols[i]);
                if (it != kinds.end()) col.kind = kind_from_name(it->second);
                s.columns.push_back(col);
            }
            continue;
        }
        if (cols.size() != s.columns.size() + 1)
            throw Error(csv_path.string() + " row " + std::to_string(row) +
                        ": wrong column count");
        s.utterance_ids.push_back(cols[0]);
        Vec r;
        for (std::size_t i = 1; i < cols.size(); ++i) r.push_back(text_to_double(cols[i]));
        rows.push_back(std::move(r));
    }
    s.matrix = Mat(rows.size(), s.columns.size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < s.columns.size(); ++c) s.matrix(r, c) = rows[r][c];
    return s;
}

inline void save_fusion_model(const std::filesystem::path& path, const FusionModel& m,
                              const FuserConfig& cfg) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["weights"] = nlohmann::json::array();
    for (double w : m.weights) j["weights"].push_back(double_to_text(w));
    j["columns"] = m.column_names;
    j["config"] = {{"learning_rate", cfg.learning_rate},
                   {"batch_size", cfg.batch_size},
                   {"max_epochs", cfg.max_epochs},
                   {"patience", cfg.patience},
                   {"rmsprop_decay", cfg.rmsprop_decay},
                   {"rmsprop_epsilon", cfg.rmsprop_epsilon},
                   {"seed", cfg.seed}};
    if (m.standardization) {
        nlohmann::json mean = nlohmann::json::array(), stdv = nlohmann::json::array();
        for (double x : m.standardization->first) mean.push_back(double_to_text(x));
        for (double x : m.standardization->second) stdv.push_back(double_to_text(x));
        j["standardization"] = {{"mean", mean}, {"std", stdv}};
    }
    atomic_write(path, j.dump(2) + "\n");
}

inline FusionModel load_fusion_model(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    if (j.at("format_version").get<int>() != 1)
        throw Error(path.string() + ": unsupported fusion model format version");
    FusionModel m;
    for (const auto& s : j.at("weights")) m.weights.push_back(text_to_double(s.get<std::string>()));
    m.column_names = j.at("columns").get<std::vector<std::string>>();
    if (j.contains("standardization")) {
        Vec mean, stdv;
        for (const auto& s : j["standardization"]["mean"])
            mean.push_back(text_to_double(s.get<std::string>()));
        for (const auto& s : j["standardization"]["std"])
            stdv.push_back(text_to_double(s.get<std::string>()));
        m.standardization = {std::move(mean), std::move(stdv)};
    }
    return m;
}

}  // namespace mosfuse
