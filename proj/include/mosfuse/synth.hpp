#pragma once

// Synthetic dataset generator: per-system feature distributions, true MOS
// linear in the pooled features, additive per-listener bias, per-rating
// noise, integer ratings clipped to 1..5. Writes a manifest, a feature
// cache, and a ground-truth sidecar; byte-identical given a seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mosfuse/core.hpp"
#include "mosfuse/dataset.hpp"
#include "mosfuse/features.hpp"
#include "mosfuse/io.hpp"
#include "mosfuse/rng.hpp"

#include <json.hpp>

namespace mosfuse {

struct SynthSpec {
    std::size_t n_systems = 5;
    std::size_t utterances_per_system = 20;
    std::size_t n_listeners = 8;
    double listener_bias_std = 0.5;
    double noise_std = 0.3;
    std::size_t feature_dim = 80;
    std::size_t raters_per_utterance = 0;  // 0 = full panel
    std::uint64_t seed = 0;

    void validate() const {
        if (n_systems == 0 || utterances_per_system == 0 || n_listeners == 0 ||
            feature_dim == 0)
            throw Error("synth: counts must be >= 1");
        if (listener_bias_std < 0 || noise_std < 0) throw Error("synth: stds must be >= 0");
        if (raters_per_utterance > n_listeners)
            throw Error("synth: raters_per_utterance exceeds listener count");
    }
};

struct SynthResult {
    MosDataset dataset;
    std::map<std::string, double> true_mos;
    std::map<std::string, Vec> pooled;  // the exact per-utterance feature vectors
};

inline SynthResult synth_generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t f = spec.feature_dim;

    // unit-norm label direction; system means spread true MOS around 3
    Vec w(f);
    double norm = 0.0;
    for (auto& x : w) { x = rng.normal(); norm += x * x; }
    norm = std::sqrt(norm);
    for (auto& x : w) x /= norm;

    std::vector<double> listener_bias(spec.n_listeners);
    for (auto& b : listener_bias) b = rng.normal(0.0, spec.listener_bias_std);

    SynthResult out;
    char buf[64];
    for (std::size_t s = 0; s < spec.n_systems; ++s) {
        std::snprintf(buf, sizeof(buf), "sys%02zu", s);
        const std::string sys_id = buf;
        Vec mu(f);
        for (auto& x : mu) x = rng.normal(0.0, 0.5);
        for (std::size_t ui = 0; ui < spec.utterances_per_system; ++ui) {
            std::snprintf(buf, sizeof(buf), "%s_u%03zu", sys_id.c_str(), ui);
            const std::string utt_id = buf;
            Vec v(f);
            for (std::size_t i = 0; i < f; ++i) v[i] = mu[i] + rng.normal(0.0, 1.0);
            double raw = 3.0;
            for (std::size_t i = 0; i < f; ++i) raw += w[i] * v[i];
            const double true_mos = std::min(5.0, std::max(1.0, raw));

            Utterance u;
            u.utterance_id = utt_id;
            u.system_id = sys_id;
            u.audio_path = utt_id + ".wav";
            // with a partial panel, each utterance draws its own rater subset;
            // panel composition then perturbs the mean score per utterance
            std::vector<std::size_t> panel(spec.n_listeners);
            for (std::size_t li = 0; li < spec.n_listeners; ++li) panel[li] = li;
            if (spec.raters_per_utterance > 0) {
                rng.shuffle(panel);
                panel.resize(spec.raters_per_utterance);
                std::sort(panel.begin(), panel.end());
            }
            for (std::size_t li : panel) {
                std::snprintf(buf, sizeof(buf), "L%03zu", li);
                const double noisy =
                    true_mos + listener_bias[li] + rng.normal(0.0, spec.noise_std);
                const int score =
                    static_cast<int>(std::lrint(std::min(5.0, std::max(1.0, noisy))));
                u.ratings.push_back({utt_id, buf, score});
            }
            out.dataset.utterances.push_back(std::move(u));
            out.true_mos[utt_id] = true_mos;
            out.pooled[utt_id] = std::move(v);
        }
    }
    detail::finalize_dataset(out.dataset);
    return out;
}

// Writes manifest.csv, cache/<utt>.fea (constant-frame features whose mean
// pool reproduces the generated vector), and truth.json.
inline SynthResult synth_write(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    SynthResult res = synth_generate(spec);
    fs::create_directories(out_dir / "cache");
    save_manifest(res.dataset, out_dir / "manifest.csv");
    for (const auto& [utt, v] : res.pooled) {
        FrameFeatures ff;
        ff.frames = Mat(4, v.size());
        for (std::size_t t = 0; t < ff.frames.rows; ++t)
            for (std::size_t c = 0; c < v.size(); ++c) ff.frames(t, c) = v[c];
        write_feature_file(out_dir / "cache" / (utt + ".fea"), ff);
    }
    nlohmann::json truth;
    for (const auto& [utt, mos] : res.true_mos) truth[utt] = double_to_text(mos);
    nlohmann::json j;
    j["true_mos"] = std::move(truth);
    j["spec"] = {{"n_systems", spec.n_systems},
                 {"utterances_per_system", spec.utterances_per_system},
                 {"n_listeners", spec.n_listeners},
                 {"listener_bias_std", spec.listener_bias_std},
                 {"noise_std", spec.noise_std},
                 {"feature_dim", spec.feature_dim},
                 {"raters_per_utterance", spec.raters_per_utterance},
                 {"seed", spec.seed}};
    atomic_write(out_dir / "truth.json", j.dump(2) + "\n");
    return res;
}

}  // namespace mosfuse
