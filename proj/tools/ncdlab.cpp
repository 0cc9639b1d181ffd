// Command-line entrypoint: dataset synthesis, training, evaluation, gradient
// checks, support-overlap experiments, and report aggregation.
//
// Exit codes: 0 success, 1 numeric/acceptance failure, 2 usage or config
// error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ncdlab/checks.hpp"
#include "ncdlab/config.hpp"
#include "ncdlab/datagen.hpp"
#include "ncdlab/io.hpp"
#include "ncdlab/metrics.hpp"
#include "ncdlab/separability.hpp"
#include "ncdlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace ncdlab;

namespace {

struct GlobalArgs {
    std::string out;
    std::string config_path;
    std::uint64_t seed = 1;
    bool seed_set = false;
    bool json = false;
};

fs::path ensure_out(const GlobalArgs& g, const char* fallback) {
    fs::path dir = g.out.empty() ? fs::path(fallback) : fs::path(g.out);
    fs::create_directories(dir);
    return dir;
}

RunConfig load_run_config(const GlobalArgs& g) {
    RunConfig cfg;
    if (!g.config_path.empty()) cfg = parse_config(read_text_file(g.config_path));
    if (g.seed_set) {
        cfg.train.base_seed = g.seed;
        cfg.data.seed = g.seed;
    }
    return cfg;
}

int cmd_gen_data(const GlobalArgs& g, const SyntheticSpec& spec) {
    spec.validate();
    const fs::path dir = ensure_out(g, "dataset");
    const DatasetSplit split = build_split(spec);
    save_dataset(dir, split, spec);
    if (g.json) {
        std::cout << nlohmann::json{{"out", dir.string()},
                                    {"n_labeled", split.labeled_images.size()},
                                    {"n_unlabeled", split.unlabeled_images.size()}}
                  << "\n";
    } else {
        std::cout << "dataset written to " << dir.string() << " (" << split.labeled_images.size()
                  << " labeled, " << split.unlabeled_images.size() << " unlabeled)\n";
    }
    return 0;
}

int cmd_train(const GlobalArgs& g, RunConfig cfg, bool save_models) {
    cfg.validate();
    const fs::path dir = ensure_out(g, "run");
    write_text_file(dir / "config.txt", serialize_config(cfg));

    std::vector<SeedResult> seeds;
    for (int s = 0; s < cfg.train.num_seeds; ++s) {
        ModelBundle<float> model;
        SeedResult r = run_single_seed(cfg.train, cfg.data, s, save_models ? &model : nullptr,
                                       /*keep_trace=*/true);
        write_text_file(dir / ("traces_seed" + std::to_string(s) + ".csv"), trace_to_csv(r.trace));
        if (save_models) save_checkpoint(dir / ("model_seed" + std::to_string(s)), model);
        r.trace.clear();
        seeds.push_back(std::move(r));
    }
    const ExperimentReport report = aggregate_seed_results(std::move(seeds));
    const nlohmann::json j = report_to_json(report, cfg.train, cfg.data);
    write_text_file(dir / "report.json", j.dump(2) + "\n");
    if (g.json)
        std::cout << j["mean"].dump() << "\n";
    else
        std::printf("novel ACC %.4f (std %.4f), NMI %.4f, ARI %.4f -> %s\n", report.mean_acc,
                    report.std_acc, report.mean_nmi, report.mean_ari,
                    (dir / "report.json").string().c_str());
    return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& pred_path, const std::string& truth_path) {
    const TensorF pred = load_cdt1(pred_path);
    const TensorF truth = load_cdt1(truth_path);
    LabelPair pair;
    for (float v : truth.data) pair.y_true.push_back(static_cast<int>(v));
    for (float v : pred.data) pair.y_pred.push_back(static_cast<int>(v));
    const ClusterScores s = score_clustering(pair);
    const nlohmann::json j{{"acc", s.acc},       {"nmi", s.nmi},       {"ari", s.ari},
                           {"n", s.n},           {"k_true", s.k_true}, {"k_pred", s.k_pred}};
    if (!g.out.empty()) {
        const fs::path dir = ensure_out(g, "scores");
        write_text_file(dir / "scores.json", j.dump(2) + "\n");
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(const GlobalArgs& g, int repeats) {
    bool ok = true;
    auto print = [&](const CheckReport& r) {
        ok = ok && r.passed();
        if (!g.json)
            std::printf("  %-20s max rel err %.3e  %s\n", r.name.c_str(), r.max_err,
                        r.passed() ? "ok" : "FAIL");
    };
    nlohmann::json j = nlohmann::json::array();
    if (!g.json) std::printf("primitives:\n");
    for (const auto& r : gradcheck_primitives(g.seed, repeats)) {
        print(r);
        j.push_back({{"name", r.name}, {"max_err", r.max_err}, {"passed", r.passed()}});
    }
    if (!g.json) std::printf("objectives:\n");
    for (const auto& r : gradcheck_losses(g.seed, repeats)) {
        print(r);
        j.push_back({{"name", r.name}, {"max_err", r.max_err}, {"passed", r.passed()}});
    }
    if (g.json) std::cout << j.dump(2) << "\n";
    if (!g.out.empty())
        write_text_file(ensure_out(g, "gradcheck") / "gradcheck.json", j.dump(2) + "\n");
    if (!ok && !g.json) std::printf("gradient check FAILED\n");
    return ok ? 0 : 1;
}

int cmd_separability(const GlobalArgs& g, int n, int k, int num_seeds) {
    nlohmann::json runs = nlohmann::json::array();
    bool direction_ok = true;
    for (int s = 0; s < num_seeds; ++s) {
        const std::uint64_t seed = mix_seed(g.seed, static_cast<std::uint64_t>(s));
        const CounterexampleResult res = counterexample_projection(n, seed, k);
        direction_ok = direction_ok && res.tau_x > res.tau_xz;
        runs.push_back({{"seed", seed},
                        {"tau_xz", res.tau_xz},
                        {"tau_x", res.tau_x},
                        {"class1_fraction", res.class1_fraction}});
        if (!g.json)
            std::printf("seed %d: tau_xz = %.4f, tau_x = %.4f (class-1 mass %.4f)\n", s,
                        res.tau_xz, res.tau_x, res.class1_fraction);
    }
    const nlohmann::json j{{"n", n}, {"k", k}, {"runs", runs}};
    if (g.json) std::cout << j.dump(2) << "\n";
    if (!g.out.empty())
        write_text_file(ensure_out(g, "separability") / "separability.json", j.dump(2) + "\n");
    return direction_ok ? 0 : 1;
}

int cmd_motivation(const GlobalArgs& g, RunConfig cfg, int max_severity) {
    cfg.validate();
    const fs::path dir = ensure_out(g, "motivation");
    const auto rows = degradation_sweep(cfg.train, cfg.data, max_severity);
    const std::string csv = sweep_to_csv(rows);
    write_text_file(dir / "motivation.csv", csv);
    if (g.json) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& r : rows)
            j.push_back({{"severity", r.severity},
                         {"setting", to_string(r.shift)},
                         {"module_on", r.module_on},
                         {"mean_acc", r.mean_acc},
                         {"std", r.std_acc}});
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << csv;
    }
    return 0;
}

int cmd_report(const GlobalArgs& g, const std::vector<std::string>& inputs) {
    nlohmann::json merged = nlohmann::json::array();
    for (const auto& path : inputs) {
        const auto j = nlohmann::json::parse(read_text_file(path));
        merged.push_back(j);
        if (!g.json) {
            const auto& mean = j.at("mean");
            const auto& std = j.at("std");
            const auto& data = j.at("dataset");
            std::printf("%-40s %s sev %d  ACC %.4f (%.4f)  NMI %.4f  ARI %.4f\n", path.c_str(),
                        data.at("shift_mode").get<std::string>().c_str(),
                        data.at("severity").get<int>(), mean.at("acc").get<double>(),
                        std.at("acc").get<double>(), mean.at("nmi").get<double>(),
                        mean.at("ari").get<double>());
        }
    }
    if (g.json) std::cout << merged.dump(2) << "\n";
    if (!g.out.empty())
        write_text_file(ensure_out(g, "reports") / "merged.json", merged.dump(2) + "\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-domain novel class discovery laboratory"};
    app.require_subcommand(1);
    app.fallthrough();  // global --out/--seed/--json may follow the subcommand

    GlobalArgs g;
    app.add_option("--out", g.out, "output directory (created if absent)");
    app.add_option("--config", g.config_path, "key=value config file");
    app.add_flag("--json", g.json, "machine-readable output on stdout");
    auto* seed_opt = app.add_option("--seed", g.seed, "base random seed");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "synthesize a cross-domain dataset");
    SyntheticSpec spec;
    std::string corruption = "gaussian_blur", shift = "cmix";
    gen->add_option("--classes", spec.num_classes, "total classes (half seen, half novel)");
    gen->add_option("--samples-per-class", spec.samples_per_class, "samples per class");
    gen->add_option("--size", spec.image_size, "image side length");
    gen->add_option("--corruption", corruption, "gaussian_blur | jpeg_like | impulse_noise | none");
    gen->add_option("--severity", spec.severity, "corruption severity 1..5");
    gen->add_option("--shift", shift, "cmix | call | none");

    // train
    auto* train = app.add_subcommand("train", "run the multi-seed training protocol");
    int train_epochs = -1, train_seeds = -1, train_samples = -1, train_severity = -1;
    float train_w = -1.f;
    std::string train_style, train_shift, train_corruption;
    bool save_models = false;
    train->add_option("--epochs", train_epochs, "override epoch count");
    train->add_option("--seeds", train_seeds, "override number of seeds");
    train->add_option("--samples-per-class", train_samples, "override dataset size");
    train->add_option("--severity", train_severity, "override corruption severity");
    train->add_option("--shift", train_shift, "override shift mode");
    train->add_option("--corruption", train_corruption, "override corruption kind");
    train->add_option("--w", train_w, "style removal weight (0 disables the module)");
    train->add_option("--style", train_style, "style objective: orth | cossimi | corr");
    train->add_flag("--save-models", save_models, "write per-seed checkpoints");

    // eval
    auto* eval = app.add_subcommand("eval", "score predicted cluster ids against labels");
    std::string pred_path, truth_path;
    eval->add_option("--pred", pred_path, "CDT1 tensor of predicted ids")->required();
    eval->add_option("--truth", truth_path, "CDT1 tensor of ground-truth ids")->required();

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference checks of all gradients");
    int gc_repeats = 20;
    gc->add_option("--repeats", gc_repeats, "random batches per check");

    // separability
    auto* sep = app.add_subcommand("separability", "overlap estimates for the projection counterexample");
    int sep_n = 10000, sep_k = 5, sep_seeds = 5;
    sep->add_option("--n", sep_n, "sample count");
    sep->add_option("--k", sep_k, "k for the k-NN overlap estimator");
    sep->add_option("--runs", sep_seeds, "independent seeds");

    // motivation
    auto* mot = app.add_subcommand("motivation",
                                   "severity sweep: cmix/call with and without the style module");
    int mot_sev = 5, mot_epochs = -1, mot_seeds = -1, mot_samples = -1, mot_jobs = -1;
    mot->add_option("--severities", mot_sev, "max severity (1..5)");
    mot->add_option("--epochs", mot_epochs, "override epoch count");
    mot->add_option("--seeds", mot_seeds, "override number of seeds");
    mot->add_option("--samples-per-class", mot_samples, "override dataset size");
    mot->add_option("--jobs", mot_jobs, "parallel seed workers");

    // report
    auto* rep = app.add_subcommand("report", "print or merge experiment reports");
    std::vector<std::string> report_inputs;
    rep->add_option("--in", report_inputs, "report.json files")->required()->expected(-1);

    try {
        app.parse(argc, argv);
        g.seed_set = seed_opt->count() > 0;

        if (gen->parsed()) {
            spec.corruption = corruption_from_string(corruption);
            spec.shift_mode = shift_from_string(shift);
            if (g.seed_set) spec.seed = g.seed;
            return cmd_gen_data(g, spec);
        }
        if (train->parsed() || mot->parsed()) {
            RunConfig cfg = load_run_config(g);
            auto apply_overrides = [&](int epochs, int seeds, int samples) {
                if (epochs > 0) cfg.train.epochs = epochs;
                if (seeds > 0) cfg.train.num_seeds = seeds;
                if (samples > 0) cfg.data.samples_per_class = samples;
            };
            if (train->parsed()) {
                apply_overrides(train_epochs, train_seeds, train_samples);
                if (train_severity > 0) cfg.data.severity = train_severity;
                if (!train_shift.empty()) cfg.data.shift_mode = shift_from_string(train_shift);
                if (!train_corruption.empty())
                    cfg.data.corruption = corruption_from_string(train_corruption);
                if (train_w >= 0.f) cfg.train.loss.w = train_w;
                if (!train_style.empty()) {
                    cfg.train.loss.lambda_a = train_style == "orth" ? 1.f : 0.f;
                    cfg.train.loss.lambda_b = train_style == "cossimi" ? 1.f : 0.f;
                    cfg.train.loss.lambda_c = train_style == "corr" ? 1.f : 0.f;
                    if (cfg.train.loss.lambda_a + cfg.train.loss.lambda_b +
                            cfg.train.loss.lambda_c !=
                        1.f)
                        throw config_error("unknown style objective: " + train_style);
                }
                return cmd_train(g, cfg, save_models);
            }
            apply_overrides(mot_epochs, mot_seeds, mot_samples);
            if (mot_jobs > 0) cfg.train.jobs = mot_jobs;
            if (mot_sev < 1 || mot_sev > 5) throw config_error("--severities must be in 1..5");
            return cmd_motivation(g, cfg, mot_sev);
        }
        if (eval->parsed()) return cmd_eval(g, pred_path, truth_path);
        if (gc->parsed()) return cmd_gradcheck(g, gc_repeats);
        if (sep->parsed()) return cmd_separability(g, sep_n, sep_k, sep_seeds);
        if (rep->parsed()) return cmd_report(g, report_inputs);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // usage problems are exit 2; --help is 0
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const io_error& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const argument_error& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
