// Acceptance gate: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 1-2 are oracle/numerics checks, 3-5 reproduce the
// directional claims on synthetic data, 6 pins the training recipe, and 7
// verifies determinism and serialization round-trips end to end.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mosfuse/mosfuse.hpp"

namespace fs = std::filesystem;
using mosfuse::Mode;
using mosfuse::PredictorModel;
using mosfuse::Rng;
using mosfuse::TrainExample;
using mosfuse::TrainingConfig;
using mosfuse::UnitSequence;
using mosfuse::Vec;

namespace {

int g_failures = 0;

void report(int num, const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s criterion %d (%s): %s\n", ok ? "PASS" : "FAIL", num, name.c_str(),
                detail.c_str());
    if (!ok) ++g_failures;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criterion 1: metric oracle equivalence

double oracle_pearson(const Vec& x, const Vec& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i]; sy += y[i];
        sxx += x[i] * x[i]; syy += y[i] * y[i]; sxy += x[i] * y[i];
    }
    const double cov = sxy / n - (sx / n) * (sy / n);
    const double vx = sxx / n - (sx / n) * (sx / n);
    const double vy = syy / n - (sy / n) * (sy / n);
    return cov / std::sqrt(vx * vy);
}

Vec oracle_ranks(const Vec& v) {
    Vec r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double less = 0, equal = 0;
        for (std::size_t j = 0; j < v.size(); ++j) {
            if (v[j] < v[i]) ++less;
            if (v[j] == v[i]) ++equal;
        }
        r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
}

double oracle_ktau_b(const Vec& x, const Vec& y) {
    double c = 0, d = 0, tx = 0, ty = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            const double dx = x[i] - x[j], dy = y[i] - y[j];
            if (dx == 0 && dy == 0) continue;
            if (dx == 0) { ++tx; continue; }
            if (dy == 0) { ++ty; continue; }
            if (dx * dy > 0) ++c; else ++d;
        }
    }
    return (c - d) / std::sqrt((c + d + tx) * (c + d + ty));
}

void criterion1() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(1);
    std::size_t checked = 0;
    double worst = 0.0;
    while (checked < 1000) {
        const std::size_t n = 2 + rng.below(49);  // lengths 2..50
        Vec x(n), y(n);
        for (auto& v : x)
            v = rng.uniform() < 0.3 ? std::floor(rng.uniform(0.0, 5.0)) : rng.uniform(0.0, 5.0);
        for (auto& v : y)
            v = rng.uniform() < 0.3 ? std::floor(rng.uniform(0.0, 5.0)) : rng.uniform(0.0, 5.0);
        double l, s, k;
        try {
            l = mosfuse::lcc(x, y);
            s = mosfuse::srcc(x, y);
            k = mosfuse::ktau(x, y);
        } catch (const mosfuse::Error&) {
            continue;  // constant draw: correlation undefined, redraw
        }
        double om = 0;
        for (std::size_t i = 0; i < n; ++i) om += (x[i] - y[i]) * (x[i] - y[i]);
        om /= static_cast<double>(n);
        worst = std::max(worst, std::abs(mosfuse::mse(x, y) - om));
        worst = std::max(worst, std::abs(l - oracle_pearson(x, y)));
        worst = std::max(worst, std::abs(s - oracle_pearson(oracle_ranks(x), oracle_ranks(y))));
        worst = std::max(worst, std::abs(k - oracle_ktau_b(x, y)));
        ++checked;
    }
    const double dt = elapsed_s(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "1000 pairs, max |diff| %.3g vs 1e-9, %.1fs vs 10s",
                  worst, dt);
    report(1, "metric oracle equivalence", worst <= 1e-9 && dt < 10.0, buf);
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient correctness

std::vector<double*> parameters(PredictorModel& m) {
    std::vector<double*> p;
    for (auto& x : m.adapter.weight.data) p.push_back(&x);
    for (auto& x : m.mos_head.weight) p.push_back(&x);
    p.push_back(&m.mos_head.bias);
    if (m.listener_head) {
        for (auto& x : m.listener_head->embeddings.data) p.push_back(&x);
        for (auto& x : m.listener_head->weight) p.push_back(&x);
        p.push_back(&m.listener_head->bias);
    }
    return p;
}

std::vector<double> flat_grads(const mosfuse::Gradients& g) {
    std::vector<double> out(g.adapter.data.begin(), g.adapter.data.end());
    out.insert(out.end(), g.mos_weight.begin(), g.mos_weight.end());
    out.push_back(g.mos_bias);
    out.insert(out.end(), g.embeddings.data.begin(), g.embeddings.data.end());
    out.insert(out.end(), g.le_weight.begin(), g.le_weight.end());
    out.push_back(g.le_bias);
    return out;
}

void criterion2() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(2);
    std::size_t bad = 0, total = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t f = 3 + rng.below(4), d = 2 + rng.below(3);
        const std::size_t l = 2 + rng.below(3), e = 2 + rng.below(2);
        TrainingConfig cfg;
        cfg.adapter_dim = d;
        cfg.embedding_dim = e;
        cfg.seed = 500 + static_cast<std::uint64_t>(trial);
        cfg.alpha = 0.5 + rng.uniform();
        cfg.beta = 0.5 + rng.uniform();
        std::vector<std::string> listeners;
        for (std::size_t i = 0; i < l; ++i) listeners.push_back("l" + std::to_string(i));
        auto m = mosfuse::init_model(f, listeners, cfg, Mode::le_ssl_mos);

        std::vector<TrainExample> batch(1 + rng.below(4));
        for (auto& ex : batch) {
            ex.features.resize(f);
            for (auto& x : ex.features) x = rng.normal();
            ex.mos = rng.uniform(1.0, 5.0);
            const std::size_t ratings = 1 + rng.below(3);
            for (std::size_t i = 0; i < ratings; ++i)
                ex.ratings.emplace_back(rng.below(l), std::floor(rng.uniform(1.0, 6.0)));
        }

        auto [g, loss] = mosfuse::gradients(m, batch, cfg, Mode::le_ssl_mos);
        auto analytic = flat_grads(g);
        auto params = parameters(m);
        const double h = 1e-5;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double orig = *params[i];
            *params[i] = orig + h;
            auto lp = mosfuse::batch_loss(m, batch, Mode::le_ssl_mos);
            *params[i] = orig - h;
            auto lm = mosfuse::batch_loss(m, batch, Mode::le_ssl_mos);
            *params[i] = orig;
            const double fd = (mosfuse::loss_total(lp.ssl, lp.le, cfg) -
                               mosfuse::loss_total(lm.ssl, lm.le, cfg)) / (2 * h);
            ++total;
            if (std::abs(analytic[i]) < 1e-8) {
                if (std::abs(fd - analytic[i]) > 1e-8) ++bad;
            } else if (std::abs(fd - analytic[i]) > 1e-4 * std::abs(analytic[i])) {
                ++bad;
            }
        }
    }
    const double dt = elapsed_s(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf), "20 models, %zu/%zu parameters within tolerance, %.1fs vs 30s",
                  total - bad, total, dt);
    report(2, "gradient correctness", bad == 0 && dt < 30.0, buf);
}

// ---------------------------------------------------------------------------
// Criterion 3: LE-vs-baseline trend

mosfuse::SynthSpec trend_spec(std::uint64_t seed) {
    mosfuse::SynthSpec spec;
    spec.n_systems = 5;
    spec.utterances_per_system = 40;
    spec.n_listeners = 10;
    spec.listener_bias_std = 0.5;
    spec.noise_std = 0.3;
    spec.raters_per_utterance = 5;  // partial panels: listener mix varies per utterance
    spec.seed = seed;
    return spec;
}

void criterion3() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> diffs;
    for (std::uint64_t seed = 20; seed < 25; ++seed) {
        auto syn = mosfuse::synth_generate(trend_spec(seed));
        auto [tr, va] = mosfuse::split(syn.dataset, seed, 0.4, true);
        TrainingConfig cfg;
        cfg.learning_rate = 0.005;
        cfg.max_epochs = 2000;
        cfg.patience = 100;
        cfg.seed = seed;
        auto tex = mosfuse::build_examples(tr, syn.pooled);
        auto vex = mosfuse::build_examples(va, syn.pooled);
        std::vector<std::string> listeners;
        for (const auto& l : syn.dataset.listeners) listeners.push_back(l.listener_id);
        double s[2];
        int i = 0;
        for (Mode mode : {Mode::ssl_mos, Mode::le_ssl_mos}) {
            auto res = mosfuse::train_on_vectors(tex, vex, 80, listeners, cfg, mode);
            Vec pred, label;
            for (const auto& u : va.utterances) {
                pred.push_back(mosfuse::predict(res.model, syn.pooled.at(u.utterance_id)));
                label.push_back(mosfuse::mean_opinion_score(u));
            }
            s[i++] = mosfuse::srcc(pred, label);
        }
        diffs.push_back(s[1] - s[0]);
    }
    std::sort(diffs.begin(), diffs.end());
    const double median = diffs[2];
    const double worst = diffs.front();
    const double dt = elapsed_s(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "5 seeds, median SRCC gain %+.4f (need > 0), worst %+.4f (need >= -0.02), %.0fs vs 180s",
                  median, worst, dt);
    report(3, "LE-vs-baseline trend", median > 0.0 && worst >= -0.02 && dt < 180.0, buf);
}

// ---------------------------------------------------------------------------
// Criterion 4: fusion gain

void criterion4() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> gains;
    bool floor_ok = true;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto syn = mosfuse::synth_generate(trend_spec(seed));
        auto [subsys_train, held] = mosfuse::split(syn.dataset, seed, 0.4, true);
        auto [fuse_train, fuse_test] = mosfuse::split(held, seed + 1000, 0.5, false);

        std::vector<std::string> listeners;
        for (const auto& l : syn.dataset.listeners) listeners.push_back(l.listener_id);
        auto tex = mosfuse::build_examples(subsys_train, syn.pooled);
        auto vex = mosfuse::build_examples(held, syn.pooled);
        std::vector<std::string> train_systems(subsys_train.systems.begin(),
                                               subsys_train.systems.end());

        // Q=3 supervised subsystems (leave-one-system-out for diversity),
        // R=1 confidence column, S=1 speechlm column
        std::vector<std::pair<mosfuse::SubsystemColumn, std::map<std::string, double>>> subs;
        TrainingConfig cfg;
        cfg.learning_rate = 0.005;
        cfg.max_epochs = 600;
        cfg.patience = 60;
        for (int k = 0; k < 3; ++k) {
            cfg.seed = seed * 17 + static_cast<std::uint64_t>(k);
            cfg.adapter_dim = k == 1 ? 32 : 64;
            const Mode mode = k == 2 ? Mode::le_ssl_mos : Mode::ssl_mos;
            const std::string& drop = train_systems[static_cast<std::size_t>(k) %
                                                    train_systems.size()];
            std::vector<TrainExample> kex;
            for (const auto& ex : tex) {
                bool keep = true;
                for (const auto& u : subsys_train.utterances)
                    if (u.utterance_id == ex.utterance_id && u.system_id == drop) keep = false;
                if (keep) kex.push_back(ex);
            }
            auto res = mosfuse::train_on_vectors(kex, vex, 80, listeners, cfg, mode);
            std::map<std::string, double> col;
            for (const auto& u : held.utterances)
                col[u.utterance_id] = mosfuse::predict(res.model, syn.pooled.at(u.utterance_id));
            subs.push_back({{"pred" + std::to_string(k), mosfuse::SubsystemKind::predictor},
                            std::move(col)});
        }
        Rng crng(seed ^ 0xC0FFEEull);
        std::map<std::string, double> conf, slm;
        for (const auto& u : held.utterances) {
            const double t = syn.true_mos.at(u.utterance_id);
            conf[u.utterance_id] = -0.5 * (5.0 - t) + crng.normal(0.0, 0.6);
            slm[u.utterance_id] = -3.0 + 0.4 * t + crng.normal(0.0, 0.8);
        }
        subs.push_back({{"confidence", mosfuse::SubsystemKind::confidence}, std::move(conf)});
        subs.push_back({{"speechlm", mosfuse::SubsystemKind::speechlm}, std::move(slm)});

        auto [str, ytr] = mosfuse::assemble(subs, fuse_train);
        auto [ste, yte] = mosfuse::assemble(subs, fuse_test);
        mosfuse::FuserConfig fcfg;
        fcfg.learning_rate = 0.01;
        fcfg.max_epochs = 2000;
        fcfg.patience = 100;
        fcfg.seed = seed;
        auto res = mosfuse::train_fuser(str, ytr, ste, yte, fcfg, true);

        double best_single = -2.0;
        for (std::size_t c = 0; c < subs.size(); ++c) {
            Vec p;
            for (std::size_t r = 0; r < ste.utterance_ids.size(); ++r)
                p.push_back(ste.matrix(r, c));
            best_single = std::max(best_single, mosfuse::srcc(p, yte));
        }
        Vec fused;
        for (std::size_t r = 0; r < ste.utterance_ids.size(); ++r) {
            Vec row;
            for (std::size_t c = 0; c < subs.size(); ++c) row.push_back(ste.matrix(r, c));
            fused.push_back(mosfuse::fuse_forward(res.model, row));
        }
        const double gain = mosfuse::srcc(fused, yte) - best_single;
        gains.push_back(gain);
        if (gain < -0.01) floor_ok = false;
    }
    std::sort(gains.begin(), gains.end());
    const double median = gains[2];
    const double dt = elapsed_s(t0);
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "5 seeds, median SRCC gain %+.4f (need > 0), worst %+.4f (need >= -0.01), %.0fs",
                  median, gains.front(), dt);
    report(4, "fusion gain", median > 0.0 && floor_ok, buf);
}

// ---------------------------------------------------------------------------
// Criterion 5: fine-tuned ULM discrimination

UnitSequence bigram_draw(Rng& rng, std::size_t k, std::size_t len) {
    UnitSequence s;
    std::size_t u = rng.below(k);
    s.units.push_back(u);
    for (std::size_t i = 1; i < len; ++i) {
        u = rng.uniform() < 0.9 ? (u + 1) % k : rng.below(k);
        s.units.push_back(u);
    }
    return s;
}

void criterion5() {
    const std::size_t k = 32;
    Rng rng(123);
    std::vector<UnitSequence> base_corpus;
    for (int i = 0; i < 50; ++i) {
        UnitSequence s;
        for (int j = 0; j < 30; ++j) s.units.push_back(rng.below(k));
        base_corpus.push_back(s);
    }
    auto base = mosfuse::ulm_train(base_corpus, 3, k);
    std::vector<UnitSequence> domain_train, domain_held;
    for (int i = 0; i < 40; ++i) domain_train.push_back(bigram_draw(rng, k, 20 + rng.below(15)));
    for (int i = 0; i < 20; ++i) domain_held.push_back(bigram_draw(rng, k, 20 + rng.below(15)));
    auto ft = mosfuse::ulm_finetune(base, domain_train, 0.7);

    double domain_mean = 0, random_mean = 0;
    for (const auto& s : domain_held) {
        domain_mean += mosfuse::speechlm_score(ft, s);
        UnitSequence r;  // uniform-random sequence of matched length
        for (std::size_t i = 0; i < s.units.size(); ++i) r.units.push_back(rng.below(k));
        random_mean += mosfuse::speechlm_score(ft, r);
    }
    domain_mean /= static_cast<double>(domain_held.size());
    random_mean /= static_cast<double>(domain_held.size());
    const double margin = domain_mean - random_mean;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "domain %.3f vs random %.3f nats/token, margin %.3f (need >= 0.5)",
                  domain_mean, random_mean, margin);
    report(5, "fine-tuned ULM discrimination", margin >= 0.5, buf);
}

// ---------------------------------------------------------------------------
// Criterion 6: training-recipe conformance

std::string run_capture(const std::string& cmd) {
    std::string out;
    FILE* p = popen((cmd + " 2>&1").c_str(), "r");
    if (!p) return out;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof(buf), p)) > 0) out.append(buf, n);
    pclose(p);
    return out;
}

void criterion6() {
    std::string why;

    // early stopping fires exactly at patience on adversarial traces
    {
        mosfuse::EarlyStopper s(10);
        s.observe(1, 1.0);
        for (std::size_t e = 2; e <= 10; ++e) {
            // a drop that never beats the best must not reset patience
            s.observe(e, 1.0 + (e % 2 ? 0.5 : 0.1));
            if (s.should_stop()) why += "predictor stopper fired early; ";
        }
        s.observe(11, 1.1);
        if (!s.should_stop()) why += "predictor stopper missed epoch 11; ";
        if (s.best_epoch() != 1) why += "predictor stopper best epoch wrong; ";
    }
    {
        mosfuse::EarlyStopper s(20);
        for (std::size_t e = 1; e <= 5; ++e) s.observe(e, 10.0 - static_cast<double>(e));
        for (std::size_t e = 6; e <= 24; ++e) {
            s.observe(e, 5.0);  // exact tie with the best is not an improvement
            if (s.should_stop()) why += "fuser stopper fired early; ";
        }
        s.observe(25, 5.0);
        if (!s.should_stop()) why += "fuser stopper missed epoch 25; ";
        if (s.best_epoch() != 5) why += "fuser stopper best epoch wrong; ";
    }

    // one SGD step against hand-stepped values
    {
        PredictorModel m;
        m.adapter.weight = mosfuse::Mat(1, 1);
        m.adapter.weight(0, 0) = 2.0;
        m.mos_head.weight = {-1.0};
        m.mos_head.bias = 0.5;
        mosfuse::Gradients g;
        g.adapter = mosfuse::Mat(1, 1);
        g.adapter(0, 0) = 0.25;
        g.mos_weight = {-0.5};
        g.mos_bias = 1.0;
        mosfuse::sgd_step(m, g, 0.1);
        if (std::abs(m.adapter.weight(0, 0) - (2.0 - 0.1 * 0.25)) > 1e-12 ||
            std::abs(m.mos_head.weight[0] - (-1.0 + 0.1 * 0.5)) > 1e-12 ||
            std::abs(m.mos_head.bias - (0.5 - 0.1)) > 1e-12)
            why += "sgd step mismatch; ";
    }

    // one RMSProp step against hand-stepped values
    {
        mosfuse::FuserConfig cfg;
        cfg.learning_rate = 0.1;
        Vec w{1.0}, v{0.0}, g{0.5};
        mosfuse::rmsprop_step(w, v, g, cfg);
        const double vref = 0.1 * 0.25;
        const double wref = 1.0 - 0.1 * 0.5 / (std::sqrt(vref) + 1e-8);
        if (std::abs(v[0] - vref) > 1e-12 || std::abs(w[0] - wref) > 1e-12)
            why += "rmsprop step mismatch; ";
    }

    // shipped defaults, checked against the --help snapshot
    const std::string cli = MOSCLI_PATH;
    const std::string train_help = run_capture(cli + " train --help");
    const std::string fuse_help = run_capture(cli + " fuse train --help");
    const std::string slm_help = run_capture(cli + " speechlm fit --help");
    auto has = [](const std::string& hay, const std::string& needle) {
        return hay.find(needle) != std::string::npos;
    };
    if (!has(train_help, "--alpha FLOAT [1]")) why += "alpha default; ";
    if (!has(train_help, "--beta FLOAT [1]")) why += "beta default; ";
    if (!has(train_help, "--batch-size UINT [4]")) why += "predictor batch default; ";
    if (!has(train_help, "--lr FLOAT [0.0001]")) why += "predictor lr default; ";
    if (!has(train_help, "--patience UINT [10]")) why += "predictor patience default; ";
    if (!has(train_help, "--embedding-dim UINT [128]")) why += "embedding default; ";
    if (!has(fuse_help, "--lr FLOAT [1e-05]")) why += "fuser lr default; ";
    if (!has(fuse_help, "--batch-size UINT [4]")) why += "fuser batch default; ";
    if (!has(fuse_help, "--patience UINT [20]")) why += "fuser patience default; ";
    if (!has(slm_help, "--clusters UINT [200]")) why += "cluster default; ";

    TrainingConfig dflt;
    mosfuse::FuserConfig fdflt;
    if (dflt.alpha != 1.0 || dflt.beta != 1.0 || dflt.batch_size != 4 ||
        dflt.learning_rate != 1e-4 || dflt.patience != 10 || dflt.embedding_dim != 128)
        why += "TrainingConfig defaults; ";
    if (fdflt.learning_rate != 1e-5 || fdflt.batch_size != 4 || fdflt.patience != 20)
        why += "FuserConfig defaults; ";

    report(6, "training-recipe conformance", why.empty(), why.empty() ? "all checks" : why);
}

// ---------------------------------------------------------------------------
// Criterion 7: determinism and round-trips

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

int run(const std::string& cmd) { return std::system((cmd + " >/dev/null 2>&1").c_str()); }

void criterion7() {
    std::string why;
    const std::string cli = MOSCLI_PATH;
    const fs::path root = fs::temp_directory_path() / "mosfuse_acceptance";
    fs::remove_all(root);

    // identical CLI pipelines into two directories must be byte-identical
    for (const char* runpath : {"r1", "r2"}) {
        const fs::path dir = root / runpath;
        fs::create_directories(dir);
        const std::string d = dir.string();
        std::string cmds[] = {
            cli + " synth --out " + d + "/data --systems 3 --utts-per-system 6"
                  " --listeners 4 --feature-dim 16 --seed 11",
            cli + " prepare --manifest " + d + "/data/manifest.csv --out-train " + d +
                  "/train.csv --out-val " + d + "/val.csv --val-fraction 0.34 --seed 5"
                  " --system-disjoint",
            cli + " train --mode le_ssl_mos --train " + d + "/train.csv --val " + d +
                  "/val.csv --cache " + d + "/data/cache --out " + d + "/model.json --log " +
                  d + "/train_log.csv --lr 0.01 --epochs 20 --patience 20 --seed 9",
            cli + " predict --model " + d + "/model.json --manifest " + d +
                  "/val.csv --cache " + d + "/data/cache --out " + d + "/pred.csv",
            cli + " speechlm fit --manifest " + d + "/train.csv --cache " + d +
                  "/data/cache --quantizer " + d + "/quant.json --lm " + d +
                  "/lm.json --clusters 6 --order 2 --seed 4",
            cli + " speechlm score --quantizer " + d + "/quant.json --lm " + d +
                  "/lm.json --manifest " + d + "/val.csv --cache " + d + "/data/cache --out " +
                  d + "/slm.csv",
            cli + " eval --pred " + d + "/pred.csv --manifest " + d + "/val.csv --out " + d +
                  "/eval.json",
        };
        for (const auto& c : cmds)
            if (run(c) != 0) why += "command failed: " + c.substr(cli.size(), 30) + "; ";
    }
    for (const char* f :
         {"data/manifest.csv", "data/truth.json", "train.csv", "val.csv", "model.json",
          "train_log.csv", "pred.csv", "quant.json", "lm.json", "slm.csv", "eval.json"}) {
        if (slurp(root / "r1" / f) != slurp(root / "r2" / f) || slurp(root / "r1" / f).empty())
            why += std::string("not byte-identical: ") + f + "; ";
    }

    // serialization round-trips: identical predictions on 100 random inputs
    Rng rng(7);
    {
        TrainingConfig cfg;
        cfg.adapter_dim = 8;
        cfg.embedding_dim = 4;
        cfg.seed = 13;
        auto m = mosfuse::init_model(12, {"a", "b", "c"}, cfg, Mode::le_ssl_mos);
        mosfuse::save_model(root / "m.json", m, Mode::le_ssl_mos, cfg, 0.0);
        auto r = mosfuse::load_model(root / "m.json");
        for (int t = 0; t < 100; ++t) {
            Vec v(12);
            for (auto& x : v) x = rng.normal();
            if (mosfuse::predict(m, v) != mosfuse::predict(r.first, v)) {
                why += "predictor round-trip; ";
                break;
            }
        }
    }
    {
        mosfuse::Mat pts(40, 3);
        for (auto& x : pts.data) x = rng.normal();
        auto q = mosfuse::kmeans_fit(pts, 5, 3);
        mosfuse::save_quantizer(root / "q.json", q);
        auto qr = mosfuse::load_quantizer(root / "q.json");
        std::vector<UnitSequence> corpus;
        for (int i = 0; i < 6; ++i) {
            UnitSequence s;
            for (int j = 0; j < 12; ++j) s.units.push_back(rng.below(5));
            corpus.push_back(s);
        }
        auto lm = mosfuse::ulm_finetune(mosfuse::ulm_train(corpus, 2, 5),
                                        {corpus[0], corpus[1]}, 0.4);
        mosfuse::save_ulm(root / "lm.json", lm);
        auto lr = mosfuse::load_ulm(root / "lm.json");
        for (int t = 0; t < 100; ++t) {
            mosfuse::FrameFeatures ff;
            ff.frames = mosfuse::Mat(6, 3);
            for (auto& x : ff.frames.data) x = rng.normal();
            auto ua = mosfuse::quantize(q, ff);
            auto ub = mosfuse::quantize(qr, ff);
            if (ua.units != ub.units) { why += "quantizer round-trip; "; break; }
            if (mosfuse::speechlm_score(lm, ua) != mosfuse::speechlm_score(lr, ua)) {
                why += "ulm round-trip; ";
                break;
            }
        }
    }
    {
        mosfuse::FusionModel fm;
        for (int i = 0; i < 5; ++i) fm.weights.push_back(rng.normal());
        fm.column_names = {"a", "b", "c", "d", "e"};
        fm.standardization = {{Vec{1, 2, 3, 4, 5}, Vec{1, 0.5, 2, 0.25, 3}}};
        mosfuse::save_fusion_model(root / "f.json", fm, mosfuse::FuserConfig{});
        auto fr = mosfuse::load_fusion_model(root / "f.json");
        for (int t = 0; t < 100; ++t) {
            Vec row(5);
            for (auto& x : row) x = rng.normal(0.0, 4.0);
            if (mosfuse::fuse_forward(fm, row) != mosfuse::fuse_forward(fr, row)) {
                why += "fusion round-trip; ";
                break;
            }
        }
    }
    fs::remove_all(root);
    report(7, "determinism and round-trip", why.empty(),
           why.empty() ? "CLI reruns byte-identical; 100-input round-trips exact" : why);
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    if (g_failures) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all 7 criteria passed\n");
    return 0;
}
