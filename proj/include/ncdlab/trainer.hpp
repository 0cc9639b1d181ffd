#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <future>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ncdlab/datagen.hpp"
#include "ncdlab/errors.hpp"
#include "ncdlab/io.hpp"
#include "ncdlab/losses.hpp"
#include "ncdlab/metrics.hpp"
#include "ncdlab/models.hpp"

namespace ncdlab {

struct TrainConfig {
    int epochs = 200;
    int batch_size = 64;
    float lr0 = 0.01f;
    float lr_min = 1e-5f;
    float momentum = 0.9f;
    float weight_decay = 5e-5f;
    int num_seeds = 5;
    std::uint64_t base_seed = 1;
    int jobs = 1;  // seed-level parallelism
    LossConfig loss;
    ModelDims dims;

    void validate() const {
        if (epochs < 1) throw config_error("epochs must be >= 1");
        if (batch_size < 2) throw config_error("batch_size must be >= 2");
        if (!(lr_min < lr0)) throw config_error("lr_min must be below lr0");
        if (momentum < 0.f || momentum >= 1.f) throw config_error("momentum must be in [0,1)");
        if (weight_decay < 0.f) throw config_error("weight_decay must be nonnegative");
        if (num_seeds < 1) throw config_error("num_seeds must be >= 1");
        loss.validate();
    }

    /// Small preset sized so a full five-seed experiment runs in minutes on a
    /// CPU: 50 epochs over 100 samples per class of 16x16 images.
    static TrainConfig desk_preset() {
        TrainConfig cfg;
        cfg.epochs = 50;
        return cfg;
    }
};

/// Per-epoch cosine annealing with exact endpoints: lr(0) = lr0 and
/// lr(epochs-1) = lr_min.
inline float cosine_lr(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs) throw argument_error("cosine_lr: epoch out of range");
    if (epoch == 0) return cfg.lr0;
    if (epoch == cfg.epochs - 1) return cfg.lr_min;
    const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
    return static_cast<float>(cfg.lr_min +
                              0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t)));
}

/// Momentum buffers aligned with a fixed parameter list.
struct SgdState {
    std::vector<std::vector<float>> buffers;

    static SgdState like(const std::vector<TensorF*>& params) {
        SgdState s;
        for (const auto* p : params) s.buffers.emplace_back(p->data.size(), 0.f);
        return s;
    }
};

/// buf <- momentum * buf + grad + weight_decay * param;
/// param <- param - lr * buf. Gradients are zeroed afterwards.
inline void sgd_step(const std::vector<TensorF*>& params, SgdState& state, float lr,
                     const TrainConfig& cfg) {
    if (state.buffers.size() != params.size())
        throw shape_error("sgd_step: state does not match parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
        TensorF& p = *params[i];
        if (!p.requires_grad || p.grad.size() != p.data.size())
            throw shape_error("sgd_step: parameter has no gradient buffer");
        auto& buf = state.buffers[i];
        if (buf.size() != p.data.size()) throw shape_error("sgd_step: buffer shape mismatch");
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            buf[j] = cfg.momentum * buf[j] + p.grad[j] + cfg.weight_decay * p.data[j];
            p.data[j] -= lr * buf[j];
        }
        p.zero_grad();
    }
}

struct TraceRow {
    int step = 0;
    LossBreakdown<float> terms;
};

struct EpochStats {
    float lr = 0;
    int steps = 0;
    LossBreakdown<float> mean_terms;
};

namespace detail {

struct BatchPlan {
    int labeled_per_batch = 0;
    int unlabeled_per_batch = 0;
    int steps = 0;
};

inline BatchPlan plan_batches(std::size_t n_l, std::size_t n_u, int batch_size) {
    if (n_l == 0 || n_u == 0)
        throw config_error("training needs both labeled and unlabeled samples");
    const double frac = static_cast<double>(n_l) / static_cast<double>(n_l + n_u);
    BatchPlan plan;
    plan.labeled_per_batch =
        std::clamp(static_cast<int>(std::lround(frac * batch_size)), 1, batch_size - 1);
    plan.unlabeled_per_batch = batch_size - plan.labeled_per_batch;
    plan.steps = static_cast<int>(std::min(n_l / plan.labeled_per_batch,
                                           n_u / plan.unlabeled_per_batch));
    if (plan.steps < 1) throw config_error("batch_size larger than the dataset allows");
    return plan;
}

// Flattens augmented views of the selected samples into [B, h*w] tensors.
struct BatchTensors {
    TensorF x1, x2;
    std::vector<int> labels;
};

inline BatchTensors assemble_batch(const DatasetSplit& split, const std::vector<int>& lab_idx,
                                   const std::vector<int>& unl_idx, Rng& rng) {
    const int size = split.image_size;
    const int batch = static_cast<int>(lab_idx.size() + unl_idx.size());
    BatchTensors out{TensorF({batch, size * size}), TensorF({batch, size * size}), {}};
    int row = 0;
    auto add = [&](const TensorF& img, int label) {
        auto [v1, v2] = augment(img, rng.next_u64());
        std::copy(v1.data.begin(), v1.data.end(),
                  out.x1.data.begin() + static_cast<std::ptrdiff_t>(row) * size * size);
        std::copy(v2.data.begin(), v2.data.end(),
                  out.x2.data.begin() + static_cast<std::ptrdiff_t>(row) * size * size);
        out.labels.push_back(label);
        ++row;
    };
    for (int i : lab_idx) add(split.labeled_images[static_cast<std::size_t>(i)],
                              split.labeled_labels[static_cast<std::size_t>(i)]);
    for (int i : unl_idx) add(split.unlabeled_images[static_cast<std::size_t>(i)], -1);
    return out;
}

}  // namespace detail

/// One pass over the split: shuffles both halves, draws mixed batches with
/// labeled/unlabeled rows proportional to the split sizes, builds two
/// augmented views, and applies one optimizer step per batch. The style
/// encoder is part of the trainable set only when the style loss is active.
inline EpochStats train_epoch(ModelBundle<float>& model, const DatasetSplit& split,
                              const TrainConfig& cfg, float lr, Rng& rng,
                              std::vector<TensorF*>& trainable, SgdState& state,
                              std::vector<TraceRow>* trace = nullptr, int step_offset = 0) {
    const auto plan =
        detail::plan_batches(split.labeled_images.size(), split.unlabeled_images.size(),
                             cfg.batch_size);

    std::vector<int> lab_order(split.labeled_images.size());
    std::vector<int> unl_order(split.unlabeled_images.size());
    for (std::size_t i = 0; i < lab_order.size(); ++i) lab_order[i] = static_cast<int>(i);
    for (std::size_t i = 0; i < unl_order.size(); ++i) unl_order[i] = static_cast<int>(i);
    rng.shuffle(lab_order.begin(), lab_order.end());
    rng.shuffle(unl_order.begin(), unl_order.end());

    const bool with_style = cfg.loss.w > 0.f || cfg.loss.force_style_graph;
    EpochStats stats;
    stats.lr = lr;

    for (int s = 0; s < plan.steps; ++s) {
        std::vector<int> lab_idx(lab_order.begin() + s * plan.labeled_per_batch,
                                 lab_order.begin() + (s + 1) * plan.labeled_per_batch);
        std::vector<int> unl_idx(unl_order.begin() + s * plan.unlabeled_per_batch,
                                 unl_order.begin() + (s + 1) * plan.unlabeled_per_batch);
        const auto batch = detail::assemble_batch(split, lab_idx, unl_idx, rng);

        TapeF tp;
        Value x1 = tp.constant(batch.x1);
        Value x2 = tp.constant(batch.x2);
        auto c1 = forward_content(tp, model, x1);
        auto c2 = forward_content(tp, model, x2);
        BatchViews<float> views;
        views.z = c1.z;
        views.z_prime = c2.z;
        views.h = c1.h;
        views.h_prime = c2.h;
        if (with_style) {
            views.v = forward_style(tp, model, x1);
            views.v_prime = forward_style(tp, model, x2);
        }
        views.labels = batch.labels;

        auto out = total_loss(tp, views, tp.leaf(model.prototypes), cfg.loss);
        tp.backward(out.value);
        sgd_step(trainable, state, lr, cfg);

        stats.mean_terms.rep_u += out.terms.rep_u;
        stats.mean_terms.rep_s += out.terms.rep_s;
        stats.mean_terms.cls_u += out.terms.cls_u;
        stats.mean_terms.cls_s += out.terms.cls_s;
        stats.mean_terms.style += out.terms.style;
        stats.mean_terms.total += out.terms.total;
        stats.mean_terms.mean_abs_cos += out.terms.mean_abs_cos;
        if (trace) trace->push_back({step_offset + s, out.terms});
    }
    stats.steps = plan.steps;
    const float inv = 1.f / static_cast<float>(plan.steps);
    stats.mean_terms.rep_u *= inv;
    stats.mean_terms.rep_s *= inv;
    stats.mean_terms.cls_u *= inv;
    stats.mean_terms.cls_s *= inv;
    stats.mean_terms.style *= inv;
    stats.mean_terms.total *= inv;
    stats.mean_terms.mean_abs_cos *= inv;
    return stats;
}

struct EvalResult {
    ClusterScores scores;
    LabelPair assignments;       // truth vs predicted novel ids
    float mean_abs_cos = 0;      // batch mean |cos(z, v)| on the eval set
};

/// Assigns each unlabeled sample to the nearest novel prototype (seen-class
/// logits masked out) and scores the clustering against the hidden labels.
inline EvalResult evaluate_novel(ModelBundle<float>& model, const DatasetSplit& split,
                                 const TrainConfig& cfg) {
    const int size = split.image_size;
    const int k_seen = model.dims.num_seen;
    const int n = static_cast<int>(split.unlabeled_images.size());
    if (n == 0) throw argument_error("evaluate_novel: empty unlabeled split");

    EvalResult res;
    double cos_acc = 0;
    const int chunk = 256;
    for (int start = 0; start < n; start += chunk) {
        const int m = std::min(chunk, n - start);
        TensorF x({m, size * size});
        for (int i = 0; i < m; ++i)
            std::copy(split.unlabeled_images[static_cast<std::size_t>(start + i)].data.begin(),
                      split.unlabeled_images[static_cast<std::size_t>(start + i)].data.end(),
                      x.data.begin() + static_cast<std::ptrdiff_t>(i) * size * size);
        TapeF tp;
        Value xv = tp.constant(x);
        auto fwd = forward_content(tp, model, xv);
        Value p = soft_labels(tp, fwd.h, tp.leaf(model.prototypes), cfg.loss.tau_s);
        Value v = forward_style(tp, model, xv);
        cos_acc += double(mean_abs_cosine(tp, fwd.z, v)) * m;

        const auto& probs = tp.value(p);
        for (int i = 0; i < m; ++i) {
            int best = k_seen;
            for (int k = k_seen; k < model.dims.total_classes(); ++k)
                if (probs.at(i, k) > probs.at(i, best)) best = k;
            res.assignments.y_pred.push_back(best - k_seen);
            res.assignments.y_true.push_back(
                split.unlabeled_labels[static_cast<std::size_t>(start + i)] - k_seen);
        }
    }
    res.mean_abs_cos = static_cast<float>(cos_acc / n);
    res.scores = score_clustering(res.assignments);
    return res;
}

struct SeedResult {
    int seed_index = 0;
    ClusterScores scores;
    float cos_initial = 0;
    float cos_final = 0;
    std::vector<EpochStats> epochs;
    std::vector<TraceRow> trace;
};

struct ExperimentReport {
    std::vector<SeedResult> seeds;
    double mean_acc = 0, std_acc = 0;
    double mean_nmi = 0, std_nmi = 0;
    double mean_ari = 0, std_ari = 0;
};

/// Trains one full run for the given seed index and returns its scores.
inline SeedResult run_single_seed(const TrainConfig& cfg, const SyntheticSpec& base_spec,
                                  int seed_index, ModelBundle<float>* final_model = nullptr,
                                  bool keep_trace = true) {
    cfg.validate();
    const std::uint64_t run_seed = mix_seed(cfg.base_seed, static_cast<std::uint64_t>(seed_index));

    SyntheticSpec spec = base_spec;
    spec.seed = mix_seed(run_seed, 0xda7aull);
    const DatasetSplit split = build_split(spec);

    ModelDims dims = cfg.dims;
    dims.image_size = spec.image_size;
    dims.num_seen = spec.num_seen();
    dims.num_novel = spec.num_novel();
    TrainConfig run_cfg = cfg;
    run_cfg.dims = dims;

    ModelBundle<float> model = ModelBundle<float>::init(dims, InitSpec{mix_seed(run_seed, 0x10de1ull)});
    model.set_requires_grad(true);

    std::vector<TensorF*> trainable = model.content_params();
    if (cfg.loss.w > 0.f)
        for (auto* p : model.style_params()) trainable.push_back(p);
    SgdState state = SgdState::like(trainable);

    SeedResult result;
    result.seed_index = seed_index;
    result.cos_initial = evaluate_novel(model, split, run_cfg).mean_abs_cos;

    Rng rng(mix_seed(run_seed, 0xba7c4ull));
    int step_offset = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const float lr = cosine_lr(epoch, cfg);
        auto stats = train_epoch(model, split, run_cfg, lr, rng, trainable, state,
                                 keep_trace ? &result.trace : nullptr, step_offset);
        step_offset += stats.steps;
        result.epochs.push_back(stats);
    }

    const EvalResult eval = evaluate_novel(model, split, run_cfg);
    result.scores = eval.scores;
    result.cos_final = eval.mean_abs_cos;
    if (final_model) *final_model = std::move(model);
    return result;
}

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= n;
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace detail

inline ExperimentReport aggregate_seed_results(std::vector<SeedResult> seeds) {
    ExperimentReport report;
    report.seeds = std::move(seeds);
    std::vector<double> accs, nmis, aris;
    for (const auto& r : report.seeds) {
        accs.push_back(r.scores.acc);
        nmis.push_back(r.scores.nmi);
        aris.push_back(r.scores.ari);
    }
    std::tie(report.mean_acc, report.std_acc) = detail::mean_std(accs);
    std::tie(report.mean_nmi, report.std_nmi) = detail::mean_std(nmis);
    std::tie(report.mean_ari, report.std_ari) = detail::mean_std(aris);
    return report;
}

/// The multi-seed protocol: each seed builds its own data, initializes its
/// own models, trains, and is scored on the novel classes; the report
/// aggregates mean and sample std (denominator n-1).
inline ExperimentReport run_experiment(const TrainConfig& cfg, const SyntheticSpec& spec,
                                       bool keep_trace = false) {
    cfg.validate();
    spec.validate();
    std::vector<SeedResult> seeds(static_cast<std::size_t>(cfg.num_seeds));

    const int jobs = std::max(1, std::min(cfg.jobs, cfg.num_seeds));
    if (jobs == 1) {
        for (int s = 0; s < cfg.num_seeds; ++s)
            seeds[static_cast<std::size_t>(s)] = run_single_seed(cfg, spec, s, nullptr, keep_trace);
    } else {
        std::vector<std::future<SeedResult>> futures;
        for (int s = 0; s < cfg.num_seeds; ++s)
            futures.push_back(std::async(std::launch::async, [&, s] {
                return run_single_seed(cfg, spec, s, nullptr, keep_trace);
            }));
        for (int s = 0; s < cfg.num_seeds; ++s)
            seeds[static_cast<std::size_t>(s)] = futures[static_cast<std::size_t>(s)].get();
    }
    return aggregate_seed_results(std::move(seeds));
}

// ---- degradation / gap sweep --------------------------------------------

/// One sweep cell: a full multi-seed experiment at a fixed corruption
/// severity, shift setting, and style-module state.
struct SweepRow {
    ShiftMode shift = ShiftMode::cmix;
    int severity = 1;
    bool module_on = false;
    double mean_acc = 0, std_acc = 0;
    double mean_cos_initial = 0, mean_cos_final = 0;
};

/// Runs the cmix and call settings across severities 1..max_severity, with
/// and without the style module (w as configured vs w = 0), under Gaussian
/// blur. The base config's w is used for the module-on runs.
inline std::vector<SweepRow> degradation_sweep(const TrainConfig& base, SyntheticSpec data,
                                               int max_severity = 5) {
    data.corruption = Corruption::gaussian_blur;
    std::vector<SweepRow> rows;
    for (ShiftMode shift : {ShiftMode::cmix, ShiftMode::call})
        for (int sev = 1; sev <= max_severity; ++sev)
            for (bool module_on : {false, true}) {
                TrainConfig cfg = base;
                cfg.loss.w = module_on ? base.loss.w : 0.f;
                SyntheticSpec spec = data;
                spec.shift_mode = shift;
                spec.severity = sev;
                const ExperimentReport rep = run_experiment(cfg, spec);
                SweepRow row;
                row.shift = shift;
                row.severity = sev;
                row.module_on = module_on;
                row.mean_acc = rep.mean_acc;
                row.std_acc = rep.std_acc;
                for (const auto& s : rep.seeds) {
                    row.mean_cos_initial += s.cos_initial;
                    row.mean_cos_final += s.cos_final;
                }
                row.mean_cos_initial /= static_cast<double>(rep.seeds.size());
                row.mean_cos_final /= static_cast<double>(rep.seeds.size());
                rows.push_back(row);
            }
    return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << "severity,setting,module_on,mean_acc,std\n";
    for (const auto& r : rows)
        os << r.severity << ',' << to_string(r.shift) << ',' << (r.module_on ? 1 : 0) << ','
           << r.mean_acc << ',' << r.std_acc << '\n';
    return os.str();
}

// ---- report serialization ---------------------------------------------

inline nlohmann::json report_to_json(const ExperimentReport& report, const TrainConfig& cfg,
                                     const SyntheticSpec& spec) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& r : report.seeds)
        seeds.push_back({{"seed_index", r.seed_index},
                         {"acc", r.scores.acc},
                         {"nmi", r.scores.nmi},
                         {"ari", r.scores.ari},
                         {"n", r.scores.n},
                         {"k_true", r.scores.k_true},
                         {"k_pred", r.scores.k_pred},
                         {"cos_initial", r.cos_initial},
                         {"cos_final", r.cos_final}});
    return nlohmann::json{
        {"mean", {{"acc", report.mean_acc}, {"nmi", report.mean_nmi}, {"ari", report.mean_ari}}},
        {"std", {{"acc", report.std_acc}, {"nmi", report.std_nmi}, {"ari", report.std_ari}}},
        {"seeds", seeds},
        {"config",
         {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr0", cfg.lr0},
          {"lr_min", cfg.lr_min},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"num_seeds", cfg.num_seeds},
          {"base_seed", cfg.base_seed},
          {"tau_u", cfg.loss.tau_u},
          {"tau_c", cfg.loss.tau_c},
          {"tau_s", cfg.loss.tau_s},
          {"tau_t", cfg.loss.tau_t},
          {"lambda", cfg.loss.lambda},
          {"eps_reg", cfg.loss.eps_reg},
          {"w", cfg.loss.w},
          {"lambda_a", cfg.loss.lambda_a},
          {"lambda_b", cfg.loss.lambda_b},
          {"lambda_c", cfg.loss.lambda_c}}},
        {"dataset",
         {{"image_size", spec.image_size},
          {"num_classes", spec.num_classes},
          {"samples_per_class", spec.samples_per_class},
          {"corruption", to_string(spec.corruption)},
          {"severity", spec.severity},
          {"shift_mode", to_string(spec.shift_mode)},
          {"seed", spec.seed}}}};
}

inline std::string trace_to_csv(const std::vector<TraceRow>& trace) {
    std::ostringstream os;
    os << "step,L_rep_u,L_rep_s,L_cls_u,L_cls_s,L_style,total,mean_abs_cos\n";
    for (const auto& row : trace)
        os << row.step << ',' << row.terms.rep_u << ',' << row.terms.rep_s << ','
           << row.terms.cls_u << ',' << row.terms.cls_s << ',' << row.terms.style << ','
           << row.terms.total << ',' << row.terms.mean_abs_cos << '\n';
    return os.str();
}

}  // namespace ncdlab
