#pragma once

// MOS rating datasets: (utterance, system, listener, score) records,
// manifest ingestion/validation, and train/validation splitting.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/io.hpp"
#include "mosfuse/rng.hpp"

#include <json.hpp>

namespace mosfuse {

struct OpinionScore {
    std::string utterance_id;
    std::string listener_id;
    int score = 0;  // integer rating in {1..5}

    bool operator==(const OpinionScore&) const = default;
};

struct Utterance {
    std::string utterance_id;
    std::string system_id;
    std::string audio_path;
    std::vector<OpinionScore> ratings;  // non-empty

    bool operator==(const Utterance&) const = default;
};

struct Listener {
    std::string listener_id;
    std::size_t index = 0;  // dense, stable embedding index

    bool operator==(const Listener&) const = default;
};

struct MosDataset {
    std::vector<Utterance> utterances;
    std::vector<Listener> listeners;  // sorted by listener_id, index = position
    std::set<std::string> systems;

    std::size_t listener_index(const std::string& listener_id) const {
        auto it = std::lower_bound(listeners.begin(), listeners.end(), listener_id,
                                   [](const Listener& l, const std::string& id) {
                                       return l.listener_id < id;
                                   });
        if (it == listeners.end() || it->listener_id != listener_id)
            throw Error("unknown listener id: " + listener_id);
        return it->index;
    }

    bool operator==(const MosDataset&) const = default;
};

inline double mean_opinion_score(const Utterance& u) {
    if (u.ratings.empty()) throw Error("utterance has no ratings: " + u.utterance_id);
    double s = 0.0;
    for (const auto& r : u.ratings) s += r.score;
    return s / static_cast<double>(u.ratings.size());
}

namespace detail {

// Rebuild listener registry (lexicographic ids -> dense indices) and system set.
inline void finalize_dataset(MosDataset& d) {
    std::set<std::string> listener_ids;
    d.systems.clear();
    for (const auto& u : d.utterances) {
        d.systems.insert(u.system_id);
        for (const auto& r : u.ratings) listener_ids.insert(r.listener_id);
    }
    d.listeners.clear();
    std::size_t idx = 0;
    for (const auto& id : listener_ids) d.listeners.push_back({id, idx++});
}

}  // namespace detail

// Rating manifest: CSV with header utterance_id,system_id,listener_id,score,audio_path
inline MosDataset load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("missing manifest file: " + path.string());

    MosDataset d;
    std::map<std::string, std::size_t> utt_pos;   // id -> index in d.utterances
    std::set<std::pair<std::string, std::string>> seen_pairs;

    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto cols = split_csv_line(line);
        if (row == 1) {
            if (cols != std::vector<std::string>{"utterance_id", "system_id", "listener_id",
                                                 "score", "audio_path"})
                throw Error(path.string() + ": bad header row");
            continue;
        }
        if (cols.size() != 5)
            throw Error(path.string() + " row " + std::to_string(row) +
                        ": expected 5 columns, got " + std::to_string(cols.size()));
        const std::string& uid = cols[0];
        const std::string& sys = cols[1];
        const std::string& lid = cols[2];
        long score;
        try {
            score = text_to_long(cols[3]);
        } catch (const Error&) {
            throw Error(path.string() + " row " + std::to_string(row) +
                        ": non-integer score '" + cols[3] + "'");
        }
        if (score < 1 || score > 5)
            throw Error(path.string() + " row " + std::to_string(row) + ": score " +
                        std::to_string(score) + " outside 1..5");
        if (!seen_pairs.insert({uid, lid}).second)
            throw Error(path.string() + " row " + std::to_string(row) +
                        ": duplicate (utterance, listener) pair (" + uid + ", " + lid + ")");

        auto it = utt_pos.find(uid);
        if (it == utt_pos.end()) {
            utt_pos.emplace(uid, d.utterances.size());
            d.utterances.push_back({uid, sys, cols[4], {}});
            it = utt_pos.find(uid);
        } else {
            Utterance& u = d.utterances[it->second];
            if (u.system_id != sys)
                throw Error(path.string() + " row " + std::to_string(row) + ": utterance " +
                            uid + " listed under two systems");
        }
        d.utterances[it->second].ratings.push_back({uid, lid, static_cast<int>(score)});
    }
    if (d.utterances.empty()) throw Error(path.string() + ": no utterances");
    detail::finalize_dataset(d);
    return d;
}

inline void save_manifest(const MosDataset& d, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "utterance_id,system_id,listener_id,score,audio_path\n";
    for (const auto& u : d.utterances)
        for (const auto& r : u.ratings)
            out << u.utterance_id << ',' << u.system_id << ',' << r.listener_id << ','
                << r.score << ',' << u.audio_path << '\n';
    atomic_write(path, out.str());
}

// Deterministic train/validation split. With system_disjoint, whole systems are
// moved into validation (seeded shuffle) until its utterance count reaches
// val_fraction * N. The listener registry is shared by both halves.
inline std::pair<MosDataset, MosDataset> split(const MosDataset& d, std::uint64_t seed,
                                               double val_fraction, bool system_disjoint) {
    if (val_fraction <= 0.0 || val_fraction >= 1.0)
        throw Error("val_fraction must be in (0,1)");
    const std::size_t n = d.utterances.size();
    MosDataset train, val;
    train.listeners = d.listeners;
    val.listeners = d.listeners;

    Rng rng(seed);
    if (system_disjoint) {
        if (d.systems.size() < 2)
            throw Error("system-disjoint split needs at least 2 systems");
        std::vector<std::string> sys(d.systems.begin(), d.systems.end());
        rng.shuffle(sys);
        std::map<std::string, std::size_t> sys_count;
        for (const auto& u : d.utterances) sys_count[u.system_id]++;

        std::set<std::string> val_sys;
        const double target = val_fraction * static_cast<double>(n);
        std::size_t val_utts = 0;
        for (const auto& s : sys) {
            if (static_cast<double>(val_utts) >= target) break;
            if (val_sys.size() + 1 == d.systems.size()) break;  // keep train non-empty
            val_sys.insert(s);
            val_utts += sys_count[s];
        }
        if (val_sys.empty())
            throw Error("infeasible system-disjoint split");
        for (const auto& u : d.utterances)
            (val_sys.count(u.system_id) ? val : train).utterances.push_back(u);
    } else {
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        const std::size_t n_val = std::max<std::size_t>(
            1, static_cast<std::size_t>(val_fraction * static_cast<double>(n)));
        if (n_val >= n) throw Error("infeasible split: validation would take every utterance");
        std::set<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
        for (std::size_t i = 0; i < n; ++i)
            (val_idx.count(i) ? val : train).utterances.push_back(d.utterances[i]);
    }
    for (auto* part : {&train, &val}) {
        part->systems.clear();
        for (const auto& u : part->utterances) part->systems.insert(u.system_id);
    }
    if (train.utterances.empty() || val.utterances.empty())
        throw Error("infeasible split: one side is empty");
    return {std::move(train), std::move(val)};
}

// Split sidecar recording seed and parameters, next to the two manifests.
inline void save_split_sidecar(const std::filesystem::path& path, std::uint64_t seed,
                               double val_fraction, bool system_disjoint) {
    nlohmann::json j;
    j["seed"] = seed;
    j["val_fraction"] = val_fraction;
    j["system_disjoint"] = system_disjoint;
    atomic_write(path, j.dump(2) + "\n");
}

}  // namespace mosfuse
