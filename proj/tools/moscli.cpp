// moscli: command-line front end for the MOS prediction toolkit.
//
// Subcommands: synth, prepare, features, train, predict,
// speechlm fit|finetune|score, confidence, select, fuse train|apply, eval.
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mosfuse/mosfuse.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Prediction CSV: utterance_id,score
std::map<std::string, double> load_pred_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw mosfuse::Error("cannot open prediction file: " + path.string());
    std::map<std::string, double> out;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        auto cols = mosfuse::split_csv_line(line);
        if (row == 1) {
            if (cols != std::vector<std::string>{"utterance_id", "score"})
                throw mosfuse::Error(path.string() + ": bad prediction header");
            continue;
        }
        if (cols.size() != 2)
            throw mosfuse::Error(path.string() + " row " + std::to_string(row) +
                                 ": expected 2 columns");
        if (!out.emplace(cols[0], mosfuse::text_to_double(cols[1])).second)
            throw mosfuse::Error(path.string() + " row " + std::to_string(row) +
                                 ": duplicate utterance id " + cols[0]);
    }
    if (out.empty()) throw mosfuse::Error(path.string() + ": no predictions");
    return out;
}

void save_pred_csv(const fs::path& path, const std::map<std::string, double>& pred) {
    std::ostringstream out;
    out << "utterance_id,score\n";
    for (const auto& [id, score] : pred)
        out << id << ',' << mosfuse::double_to_text(score) << '\n';
    mosfuse::atomic_write(path, out.str());
}

// Echo the resolved options of the executed subcommand, for reproducibility.
void echo_config(const CLI::App* cmd) {
    json j;
    for (const auto* opt : cmd->get_options()) {
        const std::string name = opt->get_single_name();
        if (name == "help") continue;
        if (!opt->results().empty()) {
            j[name] = opt->results().size() == 1 ? json(opt->results()[0]) : json(opt->results());
        } else if (!opt->get_default_str().empty()) {
            j[name] = opt->get_default_str();
        } else if (opt->get_expected_min() == 0) {
            j[name] = false;  // unset flag
        }
    }
    std::cerr << "resolved-config " << cmd->get_name() << ": " << j.dump() << "\n";
}

// Collect frame matrices of every utterance in the manifest from the cache
// and stack them into a single (total_frames x F) matrix.
mosfuse::Mat stack_frames(const mosfuse::MosDataset& d, const fs::path& cache) {
    std::vector<mosfuse::FrameFeatures> all;
    std::size_t total = 0, f_dim = 0;
    for (const auto& u : d.utterances) {
        auto ff = mosfuse::read_feature_file(cache / (u.utterance_id + ".fea"));
        if (f_dim == 0) f_dim = ff.frames.cols;
        else if (ff.frames.cols != f_dim)
            throw mosfuse::Error("inconsistent feature dimension for " + u.utterance_id);
        total += ff.frames.rows;
        all.push_back(std::move(ff));
    }
    mosfuse::Mat m(total, f_dim);
    std::size_t row = 0;
    for (const auto& ff : all) {
        std::copy(ff.frames.data.begin(), ff.frames.data.end(),
                  m.data.begin() + static_cast<long>(row * f_dim));
        row += ff.frames.rows;
    }
    return m;
}

std::vector<mosfuse::UnitSequence> quantize_dataset(const mosfuse::MosDataset& d,
                                                    const fs::path& cache,
                                                    const mosfuse::KMeansQuantizer& q,
                                                    bool dedup) {
    std::vector<mosfuse::UnitSequence> out;
    for (const auto& u : d.utterances)
        out.push_back(
            mosfuse::quantize(q, mosfuse::read_feature_file(cache / (u.utterance_id + ".fea")),
                              dedup));
    return out;
}

// If --config run.json was given, splice its key/value pairs in as options of
// the named subcommand path so explicit flags still win. Unknown keys are
// rejected by the normal option parser.
std::vector<std::string> apply_run_config(std::vector<std::string> args) {
    fs::path config_path;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") {
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            break;
        }
    }
    if (config_path.empty()) return args;
    json j = json::parse(mosfuse::read_file(config_path));
    std::vector<std::string> extra;
    for (const auto& [key, value] : j.items()) {
        if (value.is_boolean()) {
            if (value.get<bool>()) extra.push_back("--" + key);
        } else if (value.is_array()) {
            extra.push_back("--" + key);
            for (const auto& v : value)
                extra.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        } else {
            extra.push_back("--" + key);
            extra.push_back(value.is_string() ? value.get<std::string>() : value.dump());
        }
    }
    // insert after the subcommand tokens (leading non-dash args)
    std::size_t pos = 0;
    while (pos < args.size() && !args[pos].starts_with("-")) ++pos;
    args.insert(args.begin() + static_cast<long>(pos), extra.begin(), extra.end());
    return args;
}

int run(std::vector<std::string> args) {
    CLI::App app{"MOS prediction toolkit: supervised predictors, unsupervised "
                 "metrics, subsystem fusion, and evaluation"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all");
    std::string config_note;
    app.add_option("--config", config_note,
                   "JSON run file supplying defaults for the subcommand's flags");

    // ---- synth ----------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Generate a synthetic rated dataset");
    struct {
        std::string out;
        mosfuse::SynthSpec spec;
    } sy;
    synth->add_option("--out", sy.out, "Output directory")->required();
    synth->add_option("--systems", sy.spec.n_systems, "Number of systems")
        ->capture_default_str();
    synth->add_option("--utts-per-system", sy.spec.utterances_per_system,
                      "Utterances per system")->capture_default_str();
    synth->add_option("--listeners", sy.spec.n_listeners, "Number of listeners")
        ->capture_default_str();
    synth->add_option("--bias-std", sy.spec.listener_bias_std,
                      "Listener bias standard deviation")->capture_default_str();
    synth->add_option("--noise-std", sy.spec.noise_std, "Per-rating noise standard deviation")
        ->capture_default_str();
    synth->add_option("--feature-dim", sy.spec.feature_dim, "Feature dimension")
        ->capture_default_str();
    synth->add_option("--raters-per-utterance", sy.spec.raters_per_utterance,
                      "Listeners rating each utterance (0 = all)")->capture_default_str();
    synth->add_option("--seed", sy.spec.seed, "Random seed")->capture_default_str();
    synth->callback([&] {
        echo_config(synth);
        mosfuse::synth_write(sy.spec, sy.out);
        std::cout << "wrote " << sy.out << "/manifest.csv, cache/, truth.json\n";
    });

    // ---- prepare --------------------------------------------------------
    auto* prepare = app.add_subcommand("prepare", "Split a manifest into train/validation");
    struct {
        std::string manifest, out_train, out_val, sidecar;
        double val_fraction = 0.3;
        std::uint64_t seed = 0;
        bool system_disjoint = false;
    } pr;
    prepare->add_option("--manifest", pr.manifest, "Input rating manifest")->required();
    prepare->add_option("--out-train", pr.out_train, "Output train manifest")->required();
    prepare->add_option("--out-val", pr.out_val, "Output validation manifest")->required();
    prepare->add_option("--sidecar", pr.sidecar, "Split parameter sidecar JSON");
    prepare->add_option("--val-fraction", pr.val_fraction, "Validation fraction")
        ->capture_default_str();
    prepare->add_option("--seed", pr.seed, "Random seed")->capture_default_str();
    prepare->add_flag("--system-disjoint", pr.system_disjoint,
                      "Move whole systems into validation");
    prepare->callback([&] {
        echo_config(prepare);
        auto d = mosfuse::load_manifest(pr.manifest);
        auto [train, val] = mosfuse::split(d, pr.seed, pr.val_fraction, pr.system_disjoint);
        mosfuse::save_manifest(train, pr.out_train);
        mosfuse::save_manifest(val, pr.out_val);
        const fs::path sidecar =
            pr.sidecar.empty() ? fs::path(pr.out_train).replace_extension(".split.json")
                               : fs::path(pr.sidecar);
        mosfuse::save_split_sidecar(sidecar, pr.seed, pr.val_fraction, pr.system_disjoint);
        std::cout << "train: " << train.utterances.size()
                  << " utterances, val: " << val.utterances.size() << "\n";
    });

    // ---- features -------------------------------------------------------
    auto* features = app.add_subcommand("features", "Extract and cache log-mel features");
    struct {
        std::string manifest, cache;
        double target_rms_db = -26.0;
    } fe;
    features->add_option("--manifest", fe.manifest, "Rating manifest")->required();
    features->add_option("--cache", fe.cache, "Feature cache directory")->required();
    features->add_option("--target-rms-db", fe.target_rms_db, "Level normalization target (dB)")
        ->capture_default_str();
    features->callback([&] {
        echo_config(features);
        auto d = mosfuse::load_manifest(fe.manifest);
        const std::size_t n = mosfuse::cache_features(d, fe.cache, fe.target_rms_db);
        std::cout << "cached " << n << " feature files\n";
    });

    // ---- train ----------------------------------------------------------
    auto* train = app.add_subcommand("train", "Train a MOS predictor");
    struct {
        std::string mode = "ssl_mos";
        std::string train_manifest, val_manifest, cache, out, log;
        mosfuse::TrainingConfig cfg;
    } tr;
    train->add_option("--mode", tr.mode, "Architecture: ssl_mos or le_ssl_mos")
        ->check(CLI::IsMember({"ssl_mos", "le_ssl_mos"}))->capture_default_str();
    train->add_option("--train", tr.train_manifest, "Training manifest")->required();
    train->add_option("--val", tr.val_manifest, "Validation manifest")->required();
    train->add_option("--cache", tr.cache, "Feature cache directory")->required();
    train->add_option("--out", tr.out, "Output model JSON")->required();
    train->add_option("--log", tr.log, "Training log CSV");
    train->add_option("--alpha", tr.cfg.alpha, "MOS loss weight")->capture_default_str();
    train->add_option("--beta", tr.cfg.beta, "Listener loss weight")->capture_default_str();
    train->add_option("--lr", tr.cfg.learning_rate, "SGD learning rate")->capture_default_str();
    train->add_option("--batch-size", tr.cfg.batch_size, "Minibatch size")->capture_default_str();
    train->add_option("--epochs", tr.cfg.max_epochs, "Maximum epochs")->capture_default_str();
    train->add_option("--patience", tr.cfg.patience, "Early stopping patience (epochs)")
        ->capture_default_str();
    train->add_option("--adapter-dim", tr.cfg.adapter_dim, "Adapter output dimension")
        ->capture_default_str();
    train->add_option("--embedding-dim", tr.cfg.embedding_dim, "Listener embedding dimension")
        ->capture_default_str();
    train->add_option("--seed", tr.cfg.seed, "Random seed")->capture_default_str();
    train->callback([&] {
        echo_config(train);
        const auto mode = mosfuse::mode_from_name(tr.mode);
        auto train_ds = mosfuse::load_manifest(tr.train_manifest);
        auto val_ds = mosfuse::load_manifest(tr.val_manifest);
        auto res = mosfuse::train(train_ds, val_ds, tr.cache, tr.cfg, mode);
        mosfuse::save_model(tr.out, res.model, mode, tr.cfg, res.best_val_loss);
        if (!tr.log.empty())
            mosfuse::atomic_write(tr.log, mosfuse::training_log_csv(res.log));
        std::cout << "best val L1 " << res.best_val_loss << " at epoch " << res.best_epoch
                  << " (" << res.epochs_run << " epochs run)\n";
    });

    // ---- predict --------------------------------------------------------
    auto* predict = app.add_subcommand("predict", "Predict MOS with a trained model");
    struct {
        std::string model, manifest, cache, out;
    } pd;
    predict->add_option("--model", pd.model, "Model JSON")->required();
    predict->add_option("--manifest", pd.manifest, "Manifest")->required();
    predict->add_option("--cache", pd.cache, "Feature cache directory")->required();
    predict->add_option("--out", pd.out, "Output prediction CSV")->required();
    predict->callback([&] {
        echo_config(predict);
        auto [model, mode] = mosfuse::load_model(pd.model);
        (void)mode;
        auto d = mosfuse::load_manifest(pd.manifest);
        std::map<std::string, double> pred;
        for (const auto& u : d.utterances)
            pred[u.utterance_id] =
                mosfuse::predict(model, mosfuse::load_pooled(pd.cache, u.utterance_id).values);
        save_pred_csv(pd.out, pred);
        std::cout << "wrote " << pred.size() << " predictions\n";
    });

    // ---- speechlm -------------------------------------------------------
    auto* speechlm = app.add_subcommand("speechlm", "Unit language model scoring");
    speechlm->require_subcommand(1);

    auto* slm_fit = speechlm->add_subcommand("fit", "Fit quantizer and base unit LM");
    struct {
        std::string manifest, cache, quantizer_out, lm_out;
        std::size_t clusters = 200, order = 3;
        std::uint64_t seed = 0;
        bool no_dedup = false;
    } sf;
    slm_fit->add_option("--manifest", sf.manifest, "Manifest of fitting data")->required();
    slm_fit->add_option("--cache", sf.cache, "Feature cache directory")->required();
    slm_fit->add_option("--quantizer", sf.quantizer_out, "Output quantizer JSON")->required();
    slm_fit->add_option("--lm", sf.lm_out, "Output unit LM JSON")->required();
    slm_fit->add_option("--clusters", sf.clusters, "K-means cluster count")
        ->capture_default_str();
    slm_fit->add_option("--order", sf.order, "N-gram order")->capture_default_str();
    slm_fit->add_option("--seed", sf.seed, "Random seed")->capture_default_str();
    slm_fit->add_flag("--no-dedup", sf.no_dedup, "Keep consecutive duplicate units");
    slm_fit->callback([&] {
        echo_config(slm_fit);
        auto d = mosfuse::load_manifest(sf.manifest);
        auto frames = stack_frames(d, sf.cache);
        auto q = mosfuse::kmeans_fit(frames, sf.clusters, sf.seed);
        auto seqs = quantize_dataset(d, sf.cache, q, !sf.no_dedup);
        auto lm = mosfuse::ulm_train(seqs, sf.order, sf.clusters);
        mosfuse::save_quantizer(sf.quantizer_out, q);
        mosfuse::save_ulm(sf.lm_out, lm);
        std::cout << "fit quantizer (K=" << sf.clusters << ") and order-" << sf.order
                  << " unit LM on " << seqs.size() << " sequences\n";
    });

    auto* slm_ft = speechlm->add_subcommand("finetune", "Fine-tune a unit LM on domain data");
    struct {
        std::string lm_in, quantizer, manifest, cache, out;
        double mix = 0.5;
        double min_mos = 4.0;
        bool no_dedup = false;
    } sft;
    slm_ft->add_option("--lm", sft.lm_in, "Base unit LM JSON")->required();
    slm_ft->add_option("--quantizer", sft.quantizer, "Quantizer JSON")->required();
    slm_ft->add_option("--manifest", sft.manifest, "Domain manifest")->required();
    slm_ft->add_option("--cache", sft.cache, "Feature cache directory")->required();
    slm_ft->add_option("--out", sft.out, "Output fine-tuned LM JSON")->required();
    slm_ft->add_option("--mix", sft.mix, "Domain mixture weight in (0,1]")
        ->capture_default_str();
    slm_ft->add_option("--min-mos", sft.min_mos,
                       "Keep only utterances with mean opinion score above this value")
        ->capture_default_str();
    slm_ft->add_flag("--no-dedup", sft.no_dedup, "Keep consecutive duplicate units");
    slm_ft->callback([&] {
        echo_config(slm_ft);
        auto lm = mosfuse::load_ulm(sft.lm_in);
        auto q = mosfuse::load_quantizer(sft.quantizer);
        auto d = mosfuse::load_manifest(sft.manifest);
        mosfuse::MosDataset domain;
        domain.listeners = d.listeners;
        for (const auto& u : d.utterances)
            if (mosfuse::mean_opinion_score(u) > sft.min_mos) domain.utterances.push_back(u);
        if (domain.utterances.empty())
            throw mosfuse::Error("no utterances with MOS > " + std::to_string(sft.min_mos));
        auto seqs = quantize_dataset(domain, sft.cache, q, !sft.no_dedup);
        auto tuned = mosfuse::ulm_finetune(lm, seqs, sft.mix);
        mosfuse::save_ulm(sft.out, tuned);
        std::cout << "fine-tuned on " << seqs.size() << " domain sequences (mix=" << sft.mix
                  << ")\n";
    });

    auto* slm_score = speechlm->add_subcommand("score", "Score utterances with a unit LM");
    struct {
        std::string lm, quantizer, manifest, cache, out;
        bool no_dedup = false;
    } ss;
    slm_score->add_option("--lm", ss.lm, "Unit LM JSON")->required();
    slm_score->add_option("--quantizer", ss.quantizer, "Quantizer JSON")->required();
    slm_score->add_option("--manifest", ss.manifest, "Manifest")->required();
    slm_score->add_option("--cache", ss.cache, "Feature cache directory")->required();
    slm_score->add_option("--out", ss.out, "Output score CSV")->required();
    slm_score->add_flag("--no-dedup", ss.no_dedup, "Keep consecutive duplicate units");
    slm_score->callback([&] {
        echo_config(slm_score);
        auto lm = mosfuse::load_ulm(ss.lm);
        auto q = mosfuse::load_quantizer(ss.quantizer);
        auto d = mosfuse::load_manifest(ss.manifest);
        std::map<std::string, double> scores;
        for (const auto& u : d.utterances) {
            auto seq = mosfuse::quantize(
                q, mosfuse::read_feature_file(fs::path(ss.cache) / (u.utterance_id + ".fea")),
                !ss.no_dedup);
            scores[u.utterance_id] = mosfuse::speechlm_score(lm, seq);
        }
        save_pred_csv(ss.out, scores);
        std::cout << "scored " << scores.size() << " utterances\n";
    });

    // ---- confidence -----------------------------------------------------
    auto* confidence = app.add_subcommand("confidence", "ASR confidence from token posteriors");
    struct {
        std::string posteriors, out;
    } cf;
    confidence->add_option("--posteriors", cf.posteriors, "Token posterior file")->required();
    confidence->add_option("--out", cf.out, "Output score CSV")->required();
    confidence->callback([&] {
        echo_config(confidence);
        std::map<std::string, double> scores;
        for (const auto& rec : mosfuse::load_posteriors(cf.posteriors))
            scores[rec.utterance_id] = mosfuse::confidence_score(rec);
        save_pred_csv(cf.out, scores);
        std::cout << "scored " << scores.size() << " utterances\n";
    });

    // ---- select ---------------------------------------------------------
    auto* select = app.add_subcommand("select", "Select top-Q predictors by utterance SRCC");
    struct {
        std::string manifest, out;
        std::vector<std::string> preds;  // name=file.csv
        std::size_t q = 0;
    } se;
    select->add_option("--manifest", se.manifest, "Labeled manifest")->required();
    select->add_option("--pred", se.preds, "Candidate predictions as name=file.csv")
        ->required()->expected(-1);
    select->add_option("--q", se.q, "Number of predictors to keep")->required();
    select->add_option("--out", se.out, "Output JSON with the ranked selection");
    select->callback([&] {
        echo_config(select);
        auto d = mosfuse::load_manifest(se.manifest);
        mosfuse::Vec labels;
        std::vector<std::string> ids;
        for (const auto& u : d.utterances) {
            ids.push_back(u.utterance_id);
            labels.push_back(mosfuse::mean_opinion_score(u));
        }
        std::map<std::string, std::pair<mosfuse::Vec, mosfuse::Vec>> candidates;
        for (const auto& spec : se.preds) {
            const auto eq = spec.find('=');
            if (eq == std::string::npos)
                throw CLI::ValidationError("--pred", "expected name=file.csv, got " + spec);
            const std::string name = spec.substr(0, eq);
            auto pred = load_pred_csv(spec.substr(eq + 1));
            mosfuse::Vec pv;
            for (const auto& id : ids) {
                auto it = pred.find(id);
                if (it == pred.end())
                    throw mosfuse::Error("candidate '" + name + "' missing utterance " + id);
                pv.push_back(it->second);
            }
            candidates[name] = {std::move(pv), labels};
        }
        auto selected = mosfuse::select_top_q(candidates, se.q);
        json j = json::array();
        for (const auto& name : selected) j.push_back(name);
        if (!se.out.empty()) mosfuse::atomic_write(se.out, j.dump(2) + "\n");
        std::cout << j.dump() << "\n";
    });

    // ---- fuse -----------------------------------------------------------
    auto* fuse = app.add_subcommand("fuse", "Linear subsystem fusion");
    fuse->require_subcommand(1);

    auto* fuse_train_cmd = fuse->add_subcommand("train", "Train the bias-free linear fuser");
    struct {
        std::string train_scores, train_manifest, val_scores, val_manifest, out, log;
        mosfuse::FuserConfig cfg;
        bool standardize = false;
        std::size_t oof = 0;
        std::string cache;
        std::vector<std::string> oof_models;  // column=model.json
    } ft;
    fuse_train_cmd->add_option("--train-scores", ft.train_scores, "Training score matrix CSV")
        ->required();
    fuse_train_cmd->add_option("--train-manifest", ft.train_manifest, "Training labels manifest")
        ->required();
    fuse_train_cmd->add_option("--val-scores", ft.val_scores, "Validation score matrix CSV")
        ->required();
    fuse_train_cmd->add_option("--val-manifest", ft.val_manifest, "Validation labels manifest")
        ->required();
    fuse_train_cmd->add_option("--out", ft.out, "Output fusion model JSON")->required();
    fuse_train_cmd->add_option("--log", ft.log, "Training log CSV");
    fuse_train_cmd->add_option("--lr", ft.cfg.learning_rate, "RMSProp learning rate")
        ->capture_default_str();
    fuse_train_cmd->add_option("--batch-size", ft.cfg.batch_size, "Minibatch size")
        ->capture_default_str();
    fuse_train_cmd->add_option("--epochs", ft.cfg.max_epochs, "Maximum epochs")
        ->capture_default_str();
    fuse_train_cmd->add_option("--patience", ft.cfg.patience, "Early stopping patience (epochs)")
        ->capture_default_str();
    fuse_train_cmd->add_option("--rmsprop-decay", ft.cfg.rmsprop_decay, "RMSProp decay rho")
        ->capture_default_str();
    fuse_train_cmd->add_option("--rmsprop-epsilon", ft.cfg.rmsprop_epsilon, "RMSProp epsilon")
        ->capture_default_str();
    fuse_train_cmd->add_option("--seed", ft.cfg.seed, "Random seed")->capture_default_str();
    fuse_train_cmd->add_flag("--standardize", ft.standardize,
                             "Standardize columns (stats stored in the model)");
    fuse_train_cmd->add_option("--oof", ft.oof,
                               "K-fold out-of-fold predictions for supervised columns (0 = off)")
        ->capture_default_str();
    fuse_train_cmd->add_option("--cache", ft.cache, "Feature cache (required with --oof)");
    fuse_train_cmd->add_option("--oof-model", ft.oof_models,
                               "Predictor model per supervised column: column=model.json")
        ->expected(-1);
    fuse_train_cmd->callback([&] {
        echo_config(fuse_train_cmd);
        auto train_s = mosfuse::load_scores(ft.train_scores);
        auto val_s = mosfuse::load_scores(ft.val_scores);
        auto train_ds = mosfuse::load_manifest(ft.train_manifest);
        auto val_ds = mosfuse::load_manifest(ft.val_manifest);
        auto labels_for = [](const mosfuse::SubsystemScores& s, const mosfuse::MosDataset& d) {
            std::map<std::string, double> mos;
            for (const auto& u : d.utterances)
                mos[u.utterance_id] = mosfuse::mean_opinion_score(u);
            mosfuse::Vec y;
            for (const auto& id : s.utterance_ids) {
                auto it = mos.find(id);
                if (it == mos.end())
                    throw mosfuse::Error("score matrix utterance " + id + " not in manifest");
                y.push_back(it->second);
            }
            return y;
        };

        if (ft.oof > 0) {
            if (ft.cache.empty())
                throw CLI::ValidationError("--oof", "--cache is required with --oof");
            std::map<std::string, std::string> col_models;
            for (const auto& spec : ft.oof_models) {
                const auto eq = spec.find('=');
                if (eq == std::string::npos)
                    throw CLI::ValidationError("--oof-model",
                                               "expected column=model.json, got " + spec);
                col_models[spec.substr(0, eq)] = spec.substr(eq + 1);
            }
            // replace each supervised column's training rows with out-of-fold
            // predictions from a predictor retrained on the other folds
            std::map<std::string, std::size_t> row_of;
            for (std::size_t r = 0; r < train_s.utterance_ids.size(); ++r)
                row_of[train_s.utterance_ids[r]] = r;
            std::vector<std::size_t> fold_of(train_ds.utterances.size());
            {
                std::vector<std::size_t> order(train_ds.utterances.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
                mosfuse::Rng rng(ft.cfg.seed ^ 0xA5A5A5A5ull);
                rng.shuffle(order);
                for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = i % ft.oof;
            }
            for (std::size_t c = 0; c < train_s.columns.size(); ++c) {
                if (train_s.columns[c].kind != mosfuse::SubsystemKind::predictor) continue;
                auto it = col_models.find(train_s.columns[c].name);
                if (it == col_models.end())
                    throw CLI::ValidationError(
                        "--oof-model",
                        "no model given for supervised column " + train_s.columns[c].name);
                auto [ref_model, mode] = mosfuse::load_model(it->second);
                json mj = json::parse(mosfuse::read_file(it->second));
                mosfuse::TrainingConfig pcfg;
                const auto& cj = mj.at("config");
                pcfg.alpha = cj.at("alpha").get<double>();
                pcfg.beta = cj.at("beta").get<double>();
                pcfg.learning_rate = cj.at("learning_rate").get<double>();
                pcfg.batch_size = cj.at("batch_size").get<std::size_t>();
                pcfg.max_epochs = cj.at("max_epochs").get<std::size_t>();
                pcfg.patience = cj.at("patience").get<std::size_t>();
                pcfg.seed = cj.at("seed").get<std::uint64_t>();
                pcfg.adapter_dim = ref_model.adapter_dim();
                if (ref_model.listener_head)
                    pcfg.embedding_dim = ref_model.listener_head->embeddings.cols;
                for (std::size_t fold = 0; fold < ft.oof; ++fold) {
                    mosfuse::MosDataset fit_ds, hold_ds;
                    fit_ds.listeners = train_ds.listeners;
                    hold_ds.listeners = train_ds.listeners;
                    for (std::size_t i = 0; i < train_ds.utterances.size(); ++i)
                        (fold_of[i] == fold ? hold_ds : fit_ds)
                            .utterances.push_back(train_ds.utterances[i]);
                    for (auto* part : {&fit_ds, &hold_ds})
                        for (const auto& u : part->utterances) part->systems.insert(u.system_id);
                    auto res = mosfuse::train(fit_ds, val_ds, ft.cache, pcfg, mode);
                    for (const auto& u : hold_ds.utterances) {
                        const double p = mosfuse::predict(
                            res.model, mosfuse::load_pooled(ft.cache, u.utterance_id).values);
                        train_s.matrix(row_of.at(u.utterance_id), c) = p;
                    }
                }
            }
        }

        auto train_y = labels_for(train_s, train_ds);
        auto val_y = labels_for(val_s, val_ds);
        auto res = mosfuse::train_fuser(train_s, train_y, val_s, val_y, ft.cfg, ft.standardize);
        mosfuse::save_fusion_model(ft.out, res.model, ft.cfg);
        if (!ft.log.empty()) {
            std::ostringstream log;
            log << "epoch,val_mse\n";
            for (const auto& [epoch, vm] : res.log)
                log << epoch << ',' << mosfuse::double_to_text(vm) << '\n';
            mosfuse::atomic_write(ft.log, log.str());
        }
        std::cout << "best val MSE " << res.best_val_mse << " at epoch " << res.best_epoch
                  << " (" << res.epochs_run << " epochs run)\n";
    });

    auto* fuse_apply = fuse->add_subcommand("apply", "Apply a trained fuser to a score matrix");
    struct {
        std::string model, scores, out;
    } fa;
    fuse_apply->add_option("--model", fa.model, "Fusion model JSON")->required();
    fuse_apply->add_option("--scores", fa.scores, "Score matrix CSV")->required();
    fuse_apply->add_option("--out", fa.out, "Output prediction CSV")->required();
    fuse_apply->callback([&] {
        echo_config(fuse_apply);
        auto model = mosfuse::load_fusion_model(fa.model);
        auto s = mosfuse::load_scores(fa.scores);
        if (s.columns.size() != model.column_names.size())
            throw mosfuse::Error("score matrix columns do not match fusion model");
        for (std::size_t c = 0; c < s.columns.size(); ++c)
            if (s.columns[c].name != model.column_names[c])
                throw mosfuse::Error("score matrix column '" + s.columns[c].name +
                                     "' does not match model column '" + model.column_names[c] +
                                     "'");
        std::map<std::string, double> pred;
        for (std::size_t r = 0; r < s.utterance_ids.size(); ++r) {
            mosfuse::Vec row(s.columns.size());
            for (std::size_t c = 0; c < s.columns.size(); ++c) row[c] = s.matrix(r, c);
            pred[s.utterance_ids[r]] = mosfuse::fuse_forward(model, row);
        }
        save_pred_csv(fa.out, pred);
        std::cout << "wrote " << pred.size() << " fused predictions\n";
    });

    // ---- eval -----------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "Evaluate predictions against a labeled manifest");
    struct {
        std::string pred, manifest, out;
        bool text = false;
    } ev;
    eval->add_option("--pred", ev.pred, "Prediction CSV")->required();
    eval->add_option("--manifest", ev.manifest, "Labeled manifest")->required();
    eval->add_option("--out", ev.out, "Output report JSON");
    eval->add_flag("--text", ev.text, "Print the plain-text table only");
    eval->callback([&] {
        echo_config(eval);
        auto d = mosfuse::load_manifest(ev.manifest);
        auto pred = load_pred_csv(ev.pred);
        auto report = mosfuse::evaluate(pred, d);
        if (!ev.out.empty())
            mosfuse::atomic_write(ev.out, mosfuse::report_to_json(report).dump(2) + "\n");
        if (ev.text)
            std::cout << mosfuse::report_to_text(report);
        else
            std::cout << mosfuse::report_to_json(report).dump(2) << "\n";
    });

    try {
        args = apply_run_config(std::move(args));
        std::reverse(args.begin(), args.end());  // CLI11 parses back to front
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return run(std::move(args));
    } catch (const mosfuse::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
