#pragma once

// Evaluation metrics: MSE, Pearson LCC, Spearman SRCC (fractional ranks),
// Kendall tau-b, computed at utterance level and system level.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/dataset.hpp"

#include <json.hpp>

namespace mosfuse {

inline double mse(const Vec& pred, const Vec& truth) {
    if (pred.size() != truth.size()) throw Error("mse: length mismatch");
    if (pred.empty()) throw Error("mse: empty input");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

inline double lcc(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw Error("lcc: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw Error("lcc: need at least 2 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) { mx += x[i]; my += y[i]; }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw Error("undefined correlation: constant input");
    return sxy / std::sqrt(sxx * syy);
}

// Fractional (average) ranks: tied values get the mean of their rank positions.
inline Vec fractional_ranks(const Vec& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    Vec ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

inline double srcc(const Vec& x, const Vec& y) {
    return lcc(fractional_ranks(x), fractional_ranks(y));
}

// Kendall tau-b via sorted tie counting: (C-D)/sqrt((C+D+Tx)(C+D+Ty)).
inline double ktau(const Vec& x, const Vec& y) {
    if (x.size() != y.size()) throw Error("ktau: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw Error("ktau: need at least 2 points");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    const double total = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;

    // ties in x, ties in y, joint ties
    auto tie_sum = [n](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        double s = 0.0;
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[j + 1] == v[i]) ++j;
            const double t = static_cast<double>(j - i + 1);
            s += t * (t - 1.0) / 2.0;
            i = j + 1;
        }
        return s;
    };
    const double tx = tie_sum(x);
    const double ty = tie_sum(y);
    double txy = 0.0;
    {
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && x[order[j + 1]] == x[order[i]] &&
                   y[order[j + 1]] == y[order[i]])
                ++j;
            const double t = static_cast<double>(j - i + 1);
            txy += t * (t - 1.0) / 2.0;
            i = j + 1;
        }
    }

    // discordant count by merge-sort inversion counting on y in x-order
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = y[order[i]];
    std::vector<double> tmp(n);
    double inversions = 0.0;
    // counts pairs (i<j) with ys[i] > ys[j]; x-equal groups are pre-sorted by
    // y so they contribute no inversions
    std::function<void(std::size_t, std::size_t)> merge_count =
        [&](std::size_t lo, std::size_t hi) {
            if (hi - lo < 2) return;
            const std::size_t mid = (lo + hi) / 2;
            merge_count(lo, mid);
            merge_count(mid, hi);
            std::size_t a = lo, b = mid, k = lo;
            while (a < mid && b < hi) {
                if (ys[a] <= ys[b]) {
                    tmp[k++] = ys[a++];
                } else {
                    inversions += static_cast<double>(mid - a);
                    tmp[k++] = ys[b++];
                }
            }
            while (a < mid) tmp[k++] = ys[a++];
            while (b < hi) tmp[k++] = ys[b++];
            std::copy(tmp.begin() + static_cast<long>(lo), tmp.begin() + static_cast<long>(hi),
                      ys.begin() + static_cast<long>(lo));
        };
    merge_count(0, n);

    const double discordant = inversions;
    const double concordant = total - tx - ty + txy - discordant;
    const double denom_x = total - tx;
    const double denom_y = total - ty;
    if (denom_x == 0.0 || denom_y == 0.0) throw Error("undefined correlation: all pairs tied");
    return (concordant - discordant) / std::sqrt(denom_x * denom_y);
}

// Per-system means of predictions and utterance MOS labels, ordered by system id.
inline std::pair<Vec, Vec> system_level(const std::map<std::string, double>& pred,
                                        const MosDataset& d) {
    std::map<std::string, std::pair<Vec, Vec>> by_sys;
    for (const auto& u : d.utterances) {
        auto it = pred.find(u.utterance_id);
        if (it == pred.end())
            throw Error("missing prediction for utterance " + u.utterance_id);
        by_sys[u.system_id].first.push_back(it->second);
        by_sys[u.system_id].second.push_back(mean_opinion_score(u));
    }
    Vec sys_pred, sys_truth;
    for (const auto& [sys, pv] : by_sys) {
        double mp = 0.0, mt = 0.0;
        for (double v : pv.first) mp += v;
        for (double v : pv.second) mt += v;
        sys_pred.push_back(mp / static_cast<double>(pv.first.size()));
        sys_truth.push_back(mt / static_cast<double>(pv.second.size()));
    }
    return {sys_pred, sys_truth};
}

struct MetricRow {
    double mse = 0.0;
    std::optional<double> lcc, srcc, ktau;  // nullopt = undefined (constant input)
};

struct EvalReport {
    MetricRow utterance;
    MetricRow system;
    std::size_t n_utterances = 0;
    std::size_t n_systems = 0;
};

namespace detail {

inline MetricRow metric_row(const Vec& pred, const Vec& truth) {
    MetricRow row;
    row.mse = mse(pred, truth);
    auto guarded = [&](double (*fn)(const Vec&, const Vec&)) -> std::optional<double> {
        try {
            return fn(pred, truth);
        } catch (const Error&) {
            return std::nullopt;
        }
    };
    row.lcc = guarded(lcc);
    row.srcc = guarded(srcc);
    row.ktau = guarded(ktau);
    return row;
}

}  // namespace detail

inline EvalReport evaluate(const std::map<std::string, double>& pred, const MosDataset& d) {
    Vec up, ut;
    for (const auto& u : d.utterances) {
        auto it = pred.find(u.utterance_id);
        if (it == pred.end())
            throw Error("missing prediction for utterance " + u.utterance_id);
        up.push_back(it->second);
        ut.push_back(mean_opinion_score(u));
    }
    EvalReport r;
    r.n_utterances = d.utterances.size();
    r.n_systems = d.systems.size();
    r.utterance = detail::metric_row(up, ut);
    auto [sp, st] = system_level(pred, d);
    if (sp.size() >= 2) {
        r.system = detail::metric_row(sp, st);
    } else {
        r.system.mse = mse(sp, st);
    }
    return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
    auto row = [](const MetricRow& m) {
        nlohmann::json j;
        j["mse"] = m.mse;
        auto put = [&](const char* k, const std::optional<double>& v) {
            if (v) j[k] = *v; else j[k] = "undefined";
        };
        put("lcc", m.lcc);
        put("srcc", m.srcc);
        put("ktau", m.ktau);
        return j;
    };
    nlohmann::json j;
    j["utterance"] = row(r.utterance);
    j["system"] = row(r.system);
    j["n_utterances"] = r.n_utterances;
    j["n_systems"] = r.n_systems;
    j["ktau_variant"] = "tau-b";
    return j;
}

inline std::string report_to_text(const EvalReport& r) {
    auto cell = [](const std::optional<double>& v) {
        if (!v) return std::string("undef");
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", *v);
        return std::string(buf);
    };
    std::ostringstream out;
    out << "level      MSE     LCC     SRCC    KTAU\n";
    auto line = [&](const char* name, const MetricRow& m) {
        char b[32];
        std::snprintf(b, sizeof(b), "%.4f", m.mse);
        out << name << "  " << b << "  " << cell(m.lcc) << "  " << cell(m.srcc) << "  "
            << cell(m.ktau) << "\n";
    };
    line("utterance", r.utterance);
    line("system   ", r.system);
    out << "n_utterances=" << r.n_utterances << " n_systems=" << r.n_systems << "\n";
    return out.str();
}

}  // namespace mosfuse
