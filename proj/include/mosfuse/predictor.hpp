#pragma once

// Supervised MOS predictors: the baseline (linear head over pooled features
// through a trainable adapter) and the listener-enhanced multi-task variant
// that adds a per-listener embedding branch sharing the adapter. Training is
// plain SGD with analytic gradients, L1 losses, and patience-based early
// stopping on validation loss; only the MOS branch is used at inference.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/dataset.hpp"
#include "mosfuse/early_stopping.hpp"
#include "mosfuse/features.hpp"
#include "mosfuse/io.hpp"
#include "mosfuse/rng.hpp"

#include <json.hpp>

namespace mosfuse {

enum class Mode { ssl_mos, le_ssl_mos };

inline std::string mode_name(Mode m) {
    return m == Mode::ssl_mos ? "ssl_mos" : "le_ssl_mos";
}
inline Mode mode_from_name(const std::string& s) {
    if (s == "ssl_mos") return Mode::ssl_mos;
    if (s == "le_ssl_mos") return Mode::le_ssl_mos;
    throw Error("unknown mode: " + s);
}

struct EncoderAdapter {
    Mat weight;  // F x D
};

struct MosHead {
    Vec weight;  // D
    double bias = 0.0;
};

struct ListenerHead {
    Mat embeddings;  // L x E_dim
    Vec weight;      // D + E_dim
    double bias = 0.0;
};

struct PredictorModel {
    EncoderAdapter adapter;
    MosHead mos_head;
    std::optional<ListenerHead> listener_head;
    std::vector<std::string> listener_ids;  // registry snapshot, index order

    std::size_t feature_dim() const { return adapter.weight.rows; }
    std::size_t adapter_dim() const { return adapter.weight.cols; }
};

struct TrainingConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double learning_rate = 1e-4;
    std::size_t batch_size = 4;
    std::size_t max_epochs = 1000;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    std::size_t adapter_dim = 64;     // D
    std::size_t embedding_dim = 128;  // E_dim

    void validate() const {
        if (alpha < 0 || beta < 0) throw Error("alpha/beta must be >= 0");
        if (learning_rate <= 0) throw Error("learning_rate must be positive");
        if (batch_size == 0 || max_epochs == 0 || patience == 0)
            throw Error("batch_size, max_epochs, patience must be positive");
        if (patience > max_epochs) throw Error("patience must be <= max_epochs");
    }
};

// ---------------------------------------------------------------------------
// Forward passes and losses

inline double forward_mos(const PredictorModel& m, const Vec& v) {
    const Vec h = mat_tvec(m.adapter.weight, v);
    return dot(m.mos_head.weight, h) + m.mos_head.bias;
}

inline double forward_listener(const PredictorModel& m, const Vec& v,
                               std::size_t listener_index) {
    if (!m.listener_head) throw Error("model has no listener head");
    const ListenerHead& lh = *m.listener_head;
    if (listener_index >= lh.embeddings.rows)
        throw Error("listener index " + std::to_string(listener_index) + " out of range (L=" +
                    std::to_string(lh.embeddings.rows) + ")");
    const Vec h = mat_tvec(m.adapter.weight, v);
    const std::size_t d = h.size(), e = lh.embeddings.cols;
    if (lh.weight.size() != d + e) throw Error("listener head weight dimension mismatch");
    double y = lh.bias;
    for (std::size_t i = 0; i < d; ++i) y += lh.weight[i] * h[i];
    for (std::size_t i = 0; i < e; ++i) y += lh.weight[d + i] * lh.embeddings(listener_index, i);
    return y;
}

inline double predict(const PredictorModel& m, const Vec& v) { return forward_mos(m, v); }

inline double loss_ssl(const Vec& predictions, const Vec& targets) {
    if (predictions.size() != targets.size()) throw Error("loss_ssl: length mismatch");
    if (predictions.empty()) throw Error("loss_ssl: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        s += std::abs(targets[i] - predictions[i]);
    return s / static_cast<double>(predictions.size());
}

// Mean absolute error over all (utterance, listener) rating pairs present.
inline double loss_le(const std::vector<Vec>& pred_rows, const std::vector<Vec>& target_rows) {
    if (pred_rows.size() != target_rows.size()) throw Error("loss_le: row count mismatch");
    double s = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pred_rows.size(); ++i) {
        if (pred_rows[i].size() != target_rows[i].size())
            throw Error("loss_le: row " + std::to_string(i) + " length mismatch");
        for (std::size_t m = 0; m < pred_rows[i].size(); ++m) {
            s += std::abs(target_rows[i][m] - pred_rows[i][m]);
            ++count;
        }
    }
    if (count == 0) throw Error("loss_le: empty input");
    return s / static_cast<double>(count);
}

inline double loss_total(double l_ssl, double l_le, const TrainingConfig& cfg) {
    return cfg.alpha * l_ssl + cfg.beta * l_le;
}

// ---------------------------------------------------------------------------
// Training data and gradients

struct TrainExample {
    std::string utterance_id;
    Vec features;  // pooled utterance vector, length F
    double mos = 0.0;
    std::vector<std::pair<std::size_t, double>> ratings;  // (listener index, score)
};

struct Gradients {
    Mat adapter;         // F x D
    Vec mos_weight;      // D
    double mos_bias = 0.0;
    Mat embeddings;      // L x E_dim (zero rows for untouched listeners)
    Vec le_weight;       // D + E_dim
    double le_bias = 0.0;
};

struct BatchLoss {
    double ssl = 0.0;
    double le = 0.0;
};

// Forward-only batch loss; used by training and by the finite-difference
// gradient checks.
inline BatchLoss batch_loss(const PredictorModel& m, const std::vector<TrainExample>& batch,
                            Mode mode) {
    if (batch.empty()) throw Error("empty batch");
    BatchLoss out;
    std::size_t rating_count = 0;
    for (const auto& ex : batch) {
        const double yhat = forward_mos(m, ex.features);
        out.ssl += std::abs(ex.mos - yhat);
        if (mode == Mode::le_ssl_mos) {
            for (const auto& [li, score] : ex.ratings) {
                out.le += std::abs(score - forward_listener(m, ex.features, li));
                ++rating_count;
            }
        }
    }
    out.ssl /= static_cast<double>(batch.size());
    if (rating_count > 0) out.le /= static_cast<double>(rating_count);
    return out;
}

// Analytic gradients of alpha*L_ssl + beta*L_le over the batch. The |.|
// subgradient at zero is taken as 0.
inline std::pair<Gradients, BatchLoss> gradients(const PredictorModel& m,
                                                 const std::vector<TrainExample>& batch,
                                                 const TrainingConfig& cfg, Mode mode) {
    if (batch.empty()) throw Error("empty batch");
    const std::size_t f_dim = m.feature_dim(), d = m.adapter_dim();
    const std::size_t e = m.listener_head ? m.listener_head->embeddings.cols : 0;
    const std::size_t l = m.listener_head ? m.listener_head->embeddings.rows : 0;

    Gradients g;
    g.adapter = Mat(f_dim, d);
    g.mos_weight.assign(d, 0.0);
    g.embeddings = Mat(l, e);
    g.le_weight.assign(d + e, 0.0);

    BatchLoss loss;
    const double n = static_cast<double>(batch.size());

    // separate accumulators so alpha/beta scale exactly once at the end
    Mat adapter_ssl(f_dim, d), adapter_le(f_dim, d);

    std::size_t rating_count = 0;
    if (mode == Mode::le_ssl_mos) {
        for (const auto& ex : batch) rating_count += ex.ratings.size();
        if (rating_count == 0) throw Error("le_ssl_mos batch has no ratings");
    }
    const double mt = rating_count > 0 ? static_cast<double>(rating_count) : 1.0;

    for (const auto& ex : batch) {
        const Vec h = mat_tvec(m.adapter.weight, ex.features);
        const double yhat = dot(m.mos_head.weight, h) + m.mos_head.bias;
        const double s = sign0(yhat - ex.mos);
        loss.ssl += std::abs(ex.mos - yhat);

        for (std::size_t c = 0; c < d; ++c) g.mos_weight[c] += s * h[c] / n;
        g.mos_bias += s / n;
        for (std::size_t r = 0; r < f_dim; ++r)
            for (std::size_t c = 0; c < d; ++c)
                adapter_ssl(r, c) += s * ex.features[r] * m.mos_head.weight[c] / n;

        if (mode == Mode::le_ssl_mos) {
            const ListenerHead& lh = *m.listener_head;
            for (const auto& [li, score] : ex.ratings) {
                double yl = lh.bias;
                for (std::size_t i = 0; i < d; ++i) yl += lh.weight[i] * h[i];
                for (std::size_t i = 0; i < e; ++i) yl += lh.weight[d + i] * lh.embeddings(li, i);
                const double sl = sign0(yl - score);
                loss.le += std::abs(score - yl);

                for (std::size_t i = 0; i < d; ++i) g.le_weight[i] += sl * h[i] / mt;
                for (std::size_t i = 0; i < e; ++i)
                    g.le_weight[d + i] += sl * lh.embeddings(li, i) / mt;
                g.le_bias += sl / mt;
                for (std::size_t i = 0; i < e; ++i)
                    g.embeddings(li, i) += sl * lh.weight[d + i] / mt;
                for (std::size_t r = 0; r < f_dim; ++r)
                    for (std::size_t c = 0; c < d; ++c)
                        adapter_le(r, c) += sl * ex.features[r] * lh.weight[c] / mt;
            }
        }
    }
    loss.ssl /= n;
    if (rating_count > 0) loss.le /= mt;

    for (std::size_t i = 0; i < g.adapter.data.size(); ++i)
        g.adapter.data[i] = cfg.alpha * adapter_ssl.data[i] + cfg.beta * adapter_le.data[i];
    for (auto& x : g.mos_weight) x *= cfg.alpha;
    g.mos_bias *= cfg.alpha;
    for (auto& x : g.le_weight) x *= cfg.beta;
    g.le_bias *= cfg.beta;
    for (auto& x : g.embeddings.data) x *= cfg.beta;
    return {std::move(g), loss};
}

inline void sgd_step(PredictorModel& m, const Gradients& g, double learning_rate) {
    for (std::size_t i = 0; i < m.adapter.weight.data.size(); ++i)
        m.adapter.weight.data[i] -= learning_rate * g.adapter.data[i];
    for (std::size_t i = 0; i < m.mos_head.weight.size(); ++i)
        m.mos_head.weight[i] -= learning_rate * g.mos_weight[i];
    m.mos_head.bias -= learning_rate * g.mos_bias;
    if (m.listener_head) {
        ListenerHead& lh = *m.listener_head;
        for (std::size_t i = 0; i < lh.embeddings.data.size(); ++i)
            lh.embeddings.data[i] -= learning_rate * g.embeddings.data[i];
        for (std::size_t i = 0; i < lh.weight.size(); ++i)
            lh.weight[i] -= learning_rate * g.le_weight[i];
        lh.bias -= learning_rate * g.le_bias;
    }
}

// ---------------------------------------------------------------------------
// Initialization and training

inline PredictorModel init_model(std::size_t feature_dim, const std::vector<std::string>& listeners,
                                 const TrainingConfig& cfg, Mode mode) {
    Rng rng(cfg.seed);
    PredictorModel m;
    m.listener_ids = listeners;
    const std::size_t d = cfg.adapter_dim, e = cfg.embedding_dim;

    const double a_bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    m.adapter.weight = Mat(feature_dim, d);
    for (auto& x : m.adapter.weight.data) x = rng.uniform(-a_bound, a_bound);

    const double h_bound = 1.0 / std::sqrt(static_cast<double>(d));
    m.mos_head.weight.resize(d);
    for (auto& x : m.mos_head.weight) x = rng.uniform(-h_bound, h_bound);
    m.mos_head.bias = rng.uniform(-h_bound, h_bound);

    if (mode == Mode::le_ssl_mos) {
        ListenerHead lh;
        lh.embeddings = Mat(listeners.size(), e);
        for (auto& x : lh.embeddings.data) x = rng.uniform(-0.1, 0.1);
        const double l_bound = 1.0 / std::sqrt(static_cast<double>(d + e));
        lh.weight.resize(d + e);
        for (auto& x : lh.weight) x = rng.uniform(-l_bound, l_bound);
        lh.bias = rng.uniform(-l_bound, l_bound);
        m.listener_head = std::move(lh);
    }
    return m;
}

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss_ssl = 0.0;
    double train_loss_le = 0.0;
    double val_loss_ssl = 0.0;
};

struct TrainResult {
    PredictorModel model;
    std::vector<EpochLog> log;
    double best_val_loss = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
};

inline std::vector<TrainExample> build_examples(const MosDataset& d,
                                                const std::map<std::string, Vec>& pooled) {
    std::vector<TrainExample> out;
    out.reserve(d.utterances.size());
    for (const auto& u : d.utterances) {
        auto it = pooled.find(u.utterance_id);
        if (it == pooled.end()) throw Error("feature cache miss for utterance " + u.utterance_id);
        TrainExample ex;
        ex.utterance_id = u.utterance_id;
        ex.features = it->second;
        ex.mos = mean_opinion_score(u);
        for (const auto& r : u.ratings)
            ex.ratings.emplace_back(d.listener_index(r.listener_id), static_cast<double>(r.score));
        out.push_back(std::move(ex));
    }
    return out;
}

// Core training loop over precomputed pooled vectors. Early stopping monitors
// validation L_ssl (the shipped artifact is the MOS branch); improvement is
// strict <, and the best-epoch weights are returned.
inline TrainResult train_on_vectors(const std::vector<TrainExample>& train_ex,
                                    const std::vector<TrainExample>& val_ex,
                                    std::size_t feature_dim,
                                    const std::vector<std::string>& listeners,
                                    const TrainingConfig& cfg, Mode mode) {
    cfg.validate();
    if (train_ex.empty()) throw Error("empty training set");
    if (val_ex.empty()) throw Error("empty validation set");

    PredictorModel model = init_model(feature_dim, listeners, cfg, mode);
    // shuffle stream independent of init so batch order is mode-invariant
    Rng shuffle_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);

    auto val_loss = [&](const PredictorModel& m) {
        double s = 0.0;
        for (const auto& ex : val_ex) s += std::abs(ex.mos - forward_mos(m, ex.features));
        return s / static_cast<double>(val_ex.size());
    };

    TrainResult res;
    PredictorModel best = model;
    EarlyStopper stopper(cfg.patience);

    std::vector<std::size_t> order(train_ex.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double ep_ssl = 0.0, ep_le = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<TrainExample> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(train_ex[order[i]]);
            auto [g, loss] = gradients(model, batch, cfg, mode);
            sgd_step(model, g, cfg.learning_rate);
            ep_ssl += loss.ssl;
            ep_le += loss.le;
            ++n_batches;
        }
        const double vl = val_loss(model);
        res.log.push_back({epoch, ep_ssl / static_cast<double>(n_batches),
                           ep_le / static_cast<double>(n_batches), vl});
        if (stopper.observe(epoch, vl)) best = model;
        res.epochs_run = epoch;
        if (stopper.should_stop()) break;
    }
    res.model = std::move(best);
    res.best_val_loss = stopper.best_loss();
    res.best_epoch = stopper.best_epoch();
    return res;
}

inline TrainResult train(const MosDataset& train_ds, const MosDataset& val_ds,
                         const std::filesystem::path& cache_dir, const TrainingConfig& cfg,
                         Mode mode) {
    std::map<std::string, Vec> pooled;
    std::size_t feature_dim = 0;
    for (const auto* ds : {&train_ds, &val_ds}) {
        for (const auto& u : ds->utterances) {
            if (pooled.count(u.utterance_id)) continue;
            Vec v = load_pooled(cache_dir, u.utterance_id).values;
            if (feature_dim == 0) feature_dim = v.size();
            else if (v.size() != feature_dim)
                throw Error("inconsistent feature dimension for " + u.utterance_id);
            pooled.emplace(u.utterance_id, std::move(v));
        }
    }
    std::vector<std::string> listeners;
    for (const auto& l : train_ds.listeners) listeners.push_back(l.listener_id);
    return train_on_vectors(build_examples(train_ds, pooled), build_examples(val_ds, pooled),
                            feature_dim, listeners, cfg, mode);
}

// ---------------------------------------------------------------------------
// Serialization: versioned JSON, weights as decimal text

namespace detail {

inline nlohmann::json vec_to_json(const Vec& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(double_to_text(x));
    return a;
}
inline Vec vec_from_json(const nlohmann::json& a) {
    Vec v;
    for (const auto& s : a) v.push_back(text_to_double(s.get<std::string>()));
    return v;
}
inline nlohmann::json mat_to_json(const Mat& m) {
    nlohmann::json j;
    j["rows"] = m.rows;
    j["cols"] = m.cols;
    j["data"] = vec_to_json(m.data);
    return j;
}
inline Mat mat_from_json(const nlohmann::json& j) {
    Mat m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    m.data = vec_from_json(j.at("data"));
    if (m.data.size() != m.rows * m.cols) throw Error("matrix size mismatch in model file");
    return m;
}

}  // namespace detail

inline nlohmann::json model_to_json(const PredictorModel& m, Mode mode,
                                    const TrainingConfig& cfg, double best_val_loss) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["mode"] = mode_name(mode);
    j["F"] = m.feature_dim();
    j["D"] = m.adapter_dim();
    j["E_dim"] = m.listener_head ? m.listener_head->embeddings.cols : 0;
    j["listeners"] = m.listener_ids;
    j["adapter"] = detail::mat_to_json(m.adapter.weight);
    j["mos_head"] = {{"weight", detail::vec_to_json(m.mos_head.weight)},
                     {"bias", double_to_text(m.mos_head.bias)}};
    if (m.listener_head) {
        j["listener_head"] = {{"embeddings", detail::mat_to_json(m.listener_head->embeddings)},
                              {"weight", detail::vec_to_json(m.listener_head->weight)},
                              {"bias", double_to_text(m.listener_head->bias)}};
    }
    j["config"] = {{"alpha", cfg.alpha},
                   {"beta", cfg.beta},
                   {"learning_rate", cfg.learning_rate},
                   {"batch_size", cfg.batch_size},
                   {"max_epochs", cfg.max_epochs},
                   {"patience", cfg.patience},
                   {"seed", cfg.seed}};
    j["best_val_loss"] = double_to_text(best_val_loss);
    return j;
}

inline void save_model(const std::filesystem::path& path, const PredictorModel& m, Mode mode,
                       const TrainingConfig& cfg, double best_val_loss) {
    atomic_write(path, model_to_json(m, mode, cfg, best_val_loss).dump(2) + "\n");
}

inline std::pair<PredictorModel, Mode> load_model(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    if (j.at("format_version").get<int>() != 1)
        throw Error(path.string() + ": unsupported model format version");
    PredictorModel m;
    const Mode mode = mode_from_name(j.at("mode").get<std::string>());
    m.listener_ids = j.at("listeners").get<std::vector<std::string>>();
    m.adapter.weight = detail::mat_from_json(j.at("adapter"));
    m.mos_head.weight = detail::vec_from_json(j.at("mos_head").at("weight"));
    m.mos_head.bias = text_to_double(j.at("mos_head").at("bias").get<std::string>());
    if (j.contains("listener_head")) {
        ListenerHead lh;
        lh.embeddings = detail::mat_from_json(j.at("listener_head").at("embeddings"));
        lh.weight = detail::vec_from_json(j.at("listener_head").at("weight"));
        lh.bias = text_to_double(j.at("listener_head").at("bias").get<std::string>());
        m.listener_head = std::move(lh);
    }
    return {std::move(m), mode};
}

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out << "epoch,train_loss_ssl,train_loss_le,val_loss_ssl\n";
    for (const auto& e : log)
        out << e.epoch << ',' << double_to_text(e.train_loss_ssl) << ','
            << double_to_text(e.train_loss_le) << ',' << double_to_text(e.val_loss_ssl) << '\n';
    return out.str();
}

}  // namespace mosfuse
