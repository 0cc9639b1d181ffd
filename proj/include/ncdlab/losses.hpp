#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ncdlab/autograd.hpp"
#include "ncdlab/errors.hpp"
#include "ncdlab/models.hpp"

namespace ncdlab {

/// All scalar hyperparameters of the objective. Defaults follow the
/// reference configuration (temperatures 0.07 / 1.0 / 0.1 / 0.07, balance
/// 0.35, entropy weight 1, style weight 0.01 with the inner-product form).
struct LossConfig {
    float tau_u = 0.07f;
    float tau_c = 1.0f;
    float tau_s = 0.1f;
    float tau_t = 0.07f;
    float lambda = 0.35f;
    float eps_reg = 1.0f;
    float w = 0.01f;
    float lambda_a = 1.0f;
    float lambda_b = 0.0f;
    float lambda_c = 0.0f;
    // Test hook: keep the style term in the graph even at w == 0 so the
    // bitwise plug-in neutrality of a zero-weighted branch can be verified.
    bool force_style_graph = false;

    void validate() const {
        if (tau_u <= 0 || tau_c <= 0 || tau_s <= 0 || tau_t <= 0)
            throw config_error("temperatures must be positive");
        if (lambda < 0.f || lambda > 1.f) throw config_error("lambda must be in [0,1]");
        if (eps_reg < 0.f) throw config_error("eps_reg must be nonnegative");
        if (w < 0.f) throw config_error("style weight w must be nonnegative");
        auto is01 = [](float v) { return v == 0.f || v == 1.f; };
        if (!is01(lambda_a) || !is01(lambda_b) || !is01(lambda_c) ||
            lambda_a + lambda_b + lambda_c != 1.f)
            throw config_error("style selector weights must be 0/1 with lambda_a+lambda_b+lambda_c=1");
    }
};

/// One mixed batch, as tape values. `labels[i] < 0` marks unlabeled rows.
template <typename T = float>
struct BatchViews {
    Value z, z_prime;  // projections of the two views [B, d_r]
    Value v, v_prime;  // style features [B, d_r]; invalid handles when unused
    Value h, h_prime;  // latents [B, d_h]
    // Optional precomputed teacher soft labels (must be detached). When unset
    // the teacher is derived from h/h_prime with tau_t.
    Value teacher, teacher_prime;
    std::vector<int> labels;

    std::vector<int> labeled_rows() const {
        std::vector<int> out;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] >= 0) out.push_back(static_cast<int>(i));
        return out;
    }
};

namespace detail {

// exp(cosine-similarity matrix / tau) between the rows of two views, plus
// the scaled similarity matrix itself.
template <typename T>
struct SimPair {
    Value scaled;  // [B,B], entry (i,n) = z_i . z'_n / tau
    Value masked_exp_sum;  // [B], sum over n != i of exp(scaled)
};

template <typename T>
SimPair<T> similarity_terms(Tape<T>& tp, Value z, Value z_prime, T tau) {
    const int batch = tp.value(z).rows();
    Value zn = tp.l2_normalize_rows(z);
    Value zpn = tp.l2_normalize_rows(z_prime);
    Value scaled = tp.scale(tp.matmul(zn, tp.transpose(zpn)), T(1) / tau);
    Tensor<T> offdiag({batch, batch}, T(1));
    for (int i = 0; i < batch; ++i) offdiag.at(i, i) = T(0);
    Value masked = tp.mul(tp.exp(scaled), tp.constant(std::move(offdiag)));
    return {scaled, tp.row_sum(masked)};
}

template <typename T>
void require_same_batch(Tape<T>& tp, Value a, Value b, const char* who) {
    if (tp.value(a).rank() != 2 || !tp.value(a).same_shape(tp.value(b)))
        throw shape_error(std::string(who) + ": operands must share shape, got " +
                          tp.value(a).shape_str() + " vs " + tp.value(b).shape_str());
}

// Host-side distribution check for soft-label inputs.
template <typename T>
void require_rows_sum_to_one(Tape<T>& tp, Value p, const char* who) {
    const Tensor<T>& t = tp.value(p);
    if (t.rank() != 2) throw shape_error(std::string(who) + ": expected [B,K] distributions");
    for (int i = 0; i < t.rows(); ++i) {
        T s = T(0);
        for (int j = 0; j < t.cols(); ++j) s += t.at(i, j);
        if (std::fabs(static_cast<double>(s) - 1.0) > 1e-6)
            throw numeric_error(std::string(who) + ": row is not a distribution");
    }
}

}  // namespace detail

/// Unsupervised two-view contrastive loss: mean over the batch of
/// -log[ exp(z_i.z'_i/tau) / sum_{n != i} exp(z_i.z'_n/tau) ], rows
/// L2-normalized first. The positive pair is excluded from the denominator,
/// so the value may be negative.
template <typename T>
Value unsup_contrastive(Tape<T>& tp, Value z, Value z_prime, T tau_u) {
    detail::require_same_batch(tp, z, z_prime, "unsup_contrastive");
    if (tp.value(z).rows() < 2)
        throw argument_error("unsup_contrastive: degenerate batch, need B >= 2");
    auto sim = detail::similarity_terms(tp, z, z_prime, tau_u);
    return tp.mean(tp.sub(tp.log(sim.masked_exp_sum), tp.diag(sim.scaled)));
}

/// Supervised contrastive loss over the labeled rows. For each labeled i the
/// positives N(i) are the other labeled rows with the same label; rows with
/// empty N(i) contribute 0 and are excluded from the outer average. An
/// entirely peerless labeled batch yields 0; a batch with no labeled rows at
/// all is an error. Denominators run over all rows of the opposite view.
template <typename T>
Value sup_contrastive(Tape<T>& tp, Value z, Value z_prime, const std::vector<int>& labels,
                      T tau_c) {
    detail::require_same_batch(tp, z, z_prime, "sup_contrastive");
    const int batch = tp.value(z).rows();
    if (static_cast<int>(labels.size()) != batch)
        throw argument_error("sup_contrastive: labels length must equal batch size");

    std::vector<int> labeled;
    for (int i = 0; i < batch; ++i)
        if (labels[i] >= 0) labeled.push_back(i);
    if (labeled.empty()) throw argument_error("sup_contrastive: no labeled rows in batch");

    Tensor<T> pos_weight({batch, batch});
    Tensor<T> contrib({batch});
    int n_contrib = 0;
    for (int i : labeled) {
        std::vector<int> peers;
        for (int q : labeled)
            if (q != i && labels[q] == labels[i]) peers.push_back(q);
        if (peers.empty()) continue;
        for (int q : peers) pos_weight.at(i, q) = T(1) / static_cast<T>(peers.size());
        contrib.at(i) = T(1);
        ++n_contrib;
    }
    if (n_contrib == 0) return tp.constant_scalar(T(0));  // every labeled row is a singleton

    auto sim = detail::similarity_terms(tp, z, z_prime, tau_c);
    Value mean_pos = tp.row_sum(tp.mul(sim.scaled, tp.constant(std::move(pos_weight))));
    Value per_row = tp.sub(tp.log(sim.masked_exp_sum), mean_pos);
    Value only_contrib = tp.mul(per_row, tp.constant(std::move(contrib)));
    return tp.scale(tp.sum(only_contrib), T(1) / static_cast<T>(n_contrib));
}

/// Self-distillation clustering objective with mean-entropy regularization:
/// symmetrized cross-entropy of the student soft labels against the detached
/// teacher labels of the opposite view, minus eps times the entropy of the
/// batch-average prediction.
template <typename T>
Value cluster_loss(Tape<T>& tp, Value p, Value p_prime, Value q, Value q_prime, T eps_reg) {
    detail::require_same_batch(tp, p, p_prime, "cluster_loss");
    detail::require_rows_sum_to_one(tp, p, "cluster_loss");
    detail::require_rows_sum_to_one(tp, p_prime, "cluster_loss");
    if (tp.carries_grad(q) || tp.carries_grad(q_prime))
        throw argument_error("cluster_loss: teacher labels must be gradient-detached");
    const int batch = tp.value(p).rows();

    auto ce_rows = [&](Value teacher, Value student) {
        return tp.neg(tp.row_sum(tp.mul(teacher, tp.log(tp.clamp_min(student, T(1e-12))))));
    };
    Value ce = tp.scale(
        tp.add(tp.mean(ce_rows(q_prime, p)), tp.mean(ce_rows(q, p_prime))), T(0.5));

    Value p_bar = tp.scale(tp.add(tp.col_sum(p), tp.col_sum(p_prime)),
                           T(1) / (T(2) * static_cast<T>(batch)));
    Value entropy = tp.neg(tp.sum(tp.mul(p_bar, tp.log(tp.clamp_min(p_bar, T(1e-12))))));
    return tp.sub(ce, tp.scale(entropy, eps_reg));
}

/// Plain cross-entropy of the labeled soft labels against one-hot targets,
/// log arguments clamped at 1e-12.
template <typename T>
Value ce_supervised(Tape<T>& tp, Value p_labeled, const std::vector<int>& labels) {
    const Tensor<T>& tpv = tp.value(p_labeled);
    if (tpv.rank() != 2) throw shape_error("ce_supervised expects [B,K] distributions");
    if (static_cast<int>(labels.size()) != tpv.rows())
        throw argument_error("ce_supervised: labels length must equal batch size");
    detail::require_rows_sum_to_one(tp, p_labeled, "ce_supervised");
    Tensor<T> onehot(tpv.dims);
    for (int i = 0; i < tpv.rows(); ++i) {
        if (labels[i] < 0 || labels[i] >= tpv.cols())
            throw argument_error("ce_supervised: label " + std::to_string(labels[i]) +
                                 " out of range for K=" + std::to_string(tpv.cols()));
        onehot.at(i, labels[i]) = T(1);
    }
    Value ce = tp.neg(tp.row_sum(
        tp.mul(tp.constant(std::move(onehot)), tp.log(tp.clamp_min(p_labeled, T(1e-12))))));
    return tp.mean(ce);
}

/// Inner-product style penalty: batch mean of |z_i . v_i|.
template <typename T>
Value style_orth(Tape<T>& tp, Value z, Value v) {
    detail::require_same_batch(tp, z, v, "style_orth");
    return tp.mean(tp.abs(tp.rows_dot(z, v)));
}

/// Cosine style penalty: batch mean of |cos(z_i, v_i)|.
template <typename T>
Value style_cossimi(Tape<T>& tp, Value z, Value v) {
    detail::require_same_batch(tp, z, v, "style_cossimi");
    return tp.mean(tp.abs(tp.rows_dot(tp.l2_normalize_rows(z), tp.l2_normalize_rows(v))));
}

/// Pearson style penalty: batch mean of |corr(z_i, v_i)| across coordinates.
/// Rows whose coordinate standard deviation falls below 1e-8 contribute 0;
/// `degenerate_rows` (optional) reports how many were skipped. A batch with
/// no valid rows is a numeric-domain error.
template <typename T>
Value style_corr(Tape<T>& tp, Value z, Value v, int* degenerate_rows = nullptr) {
    detail::require_same_batch(tp, z, v, "style_corr");
    const Tensor<T>& tz = tp.value(z);
    const Tensor<T>& tv = tp.value(v);
    const int batch = tz.rows(), d = tz.cols();

    auto row_std = [&](const Tensor<T>& t, int i) {
        double mean = 0;
        for (int j = 0; j < d; ++j) mean += t.at(i, j);
        mean /= d;
        double ss = 0;
        for (int j = 0; j < d; ++j) ss += (t.at(i, j) - mean) * (t.at(i, j) - mean);
        return std::sqrt(ss / d);
    };
    std::vector<int> valid;
    for (int i = 0; i < batch; ++i)
        if (row_std(tz, i) >= 1e-8 && row_std(tv, i) >= 1e-8) valid.push_back(i);
    if (degenerate_rows) *degenerate_rows = batch - static_cast<int>(valid.size());
    if (valid.empty()) throw numeric_error("style_corr: all rows degenerate");

    Value cz = tp.gather_rows(tp.center_rows(z), valid);
    Value cv = tp.gather_rows(tp.center_rows(v), valid);
    Value num = tp.rows_dot(cz, cv);
    Value den = tp.mul(tp.sqrt(tp.rows_dot(cz, cz)), tp.sqrt(tp.rows_dot(cv, cv)));
    Value corr = tp.abs(tp.div(num, den));
    // degenerate rows contribute 0 but stay in the batch-mean denominator
    return tp.scale(tp.sum(corr), T(1) / static_cast<T>(batch));
}

/// Unified style removal objective: the selector weights pick exactly one of
/// the three penalties.
template <typename T>
Value style_removal(Tape<T>& tp, Value z, Value v, const LossConfig& cfg) {
    cfg.validate();
    if (cfg.lambda_a == 1.f) return style_orth(tp, z, v);
    if (cfg.lambda_b == 1.f) return style_cossimi(tp, z, v);
    return style_corr(tp, z, v);
}

/// Per-term values of one total-loss evaluation (raw, unweighted) plus the
/// weighted total and the batch mean |cos(z, v)| diagnostic.
template <typename T = float>
struct LossBreakdown {
    T rep_u = 0, rep_s = 0, cls_u = 0, cls_s = 0, style = 0, total = 0;
    T mean_abs_cos = 0;
};

template <typename T = float>
struct TotalLoss {
    Value value;  // scalar root
    LossBreakdown<T> terms;
};

/// Batch mean |cos(z_i, v_i)| from forward values (no gradient).
template <typename T>
T mean_abs_cosine(Tape<T>& tp, Value z, Value v) {
    const Tensor<T>& tz = tp.value(z);
    const Tensor<T>& tv = tp.value(v);
    double acc = 0;
    for (int i = 0; i < tz.rows(); ++i) {
        double dot = 0, nz = 0, nv = 0;
        for (int j = 0; j < tz.cols(); ++j) {
            dot += double(tz.at(i, j)) * double(tv.at(i, j));
            nz += double(tz.at(i, j)) * double(tz.at(i, j));
            nv += double(tv.at(i, j)) * double(tv.at(i, j));
        }
        const double den = std::sqrt(nz) * std::sqrt(nv);
        if (den > 1e-12) acc += std::fabs(dot) / den;
    }
    return static_cast<T>(acc / std::max(1, tz.rows()));
}

/// The full objective
///   (1-lambda) L_rep_u + lambda L_rep_s
/// + (1-lambda) L_cls_u + lambda L_cls_s
/// + w * L_style.
/// With w == 0 the style branch is left out of the graph entirely (unless
/// force_style_graph asks for the zero-weighted branch, for neutrality
/// tests), so the style encoder receives no gradient.
template <typename T>
TotalLoss<T> total_loss(Tape<T>& tp, const BatchViews<T>& batch, Value prototypes,
                        const LossConfig& cfg) {
    cfg.validate();
    const T lam = static_cast<T>(cfg.lambda);

    Value rep_u = unsup_contrastive(tp, batch.z, batch.z_prime, static_cast<T>(cfg.tau_u));
    Value rep_s = sup_contrastive(tp, batch.z, batch.z_prime, batch.labels,
                                  static_cast<T>(cfg.tau_c));

    Value p = soft_labels(tp, batch.h, prototypes, static_cast<T>(cfg.tau_s));
    Value p_prime = soft_labels(tp, batch.h_prime, prototypes, static_cast<T>(cfg.tau_s));
    Value q = batch.teacher.valid()
                  ? batch.teacher
                  : teacher_labels(tp, batch.h, prototypes, static_cast<T>(cfg.tau_t));
    Value q_prime = batch.teacher_prime.valid()
                        ? batch.teacher_prime
                        : teacher_labels(tp, batch.h_prime, prototypes, static_cast<T>(cfg.tau_t));
    Value cls_u = cluster_loss(tp, p, p_prime, q, q_prime, static_cast<T>(cfg.eps_reg));

    const std::vector<int> rows = batch.labeled_rows();
    if (rows.empty()) throw argument_error("total_loss: batch has no labeled rows");
    std::vector<int> row_labels;
    for (int i : rows) row_labels.push_back(batch.labels[static_cast<std::size_t>(i)]);
    Value cls_s = ce_supervised(tp, tp.gather_rows(p, rows), row_labels);

    Value rep = tp.add(tp.scale(rep_u, T(1) - lam), tp.scale(rep_s, lam));
    Value cls = tp.add(tp.scale(cls_u, T(1) - lam), tp.scale(cls_s, lam));
    Value total = tp.add(rep, cls);

    TotalLoss<T> out;
    const bool build_style = batch.v.valid() && (cfg.w > 0.f || cfg.force_style_graph);
    if (build_style) {
        Value s1 = style_removal(tp, batch.z, batch.v, cfg);
        Value s2 = style_removal(tp, batch.z_prime, batch.v_prime, cfg);
        Value style = tp.scale(tp.add(s1, s2), T(0.5));
        total = tp.add(total, tp.scale(style, static_cast<T>(cfg.w)));
        out.terms.style = tp.value(style).data[0];
    }
    out.value = total;
    out.terms.rep_u = tp.value(rep_u).data[0];
    out.terms.rep_s = tp.value(rep_s).data[0];
    out.terms.cls_u = tp.value(cls_u).data[0];
    out.terms.cls_s = tp.value(cls_s).data[0];
    out.terms.total = tp.value(total).data[0];
    if (batch.v.valid()) out.terms.mean_abs_cos = mean_abs_cosine(tp, batch.z, batch.v);
    return out;
}

}  // namespace ncdlab
