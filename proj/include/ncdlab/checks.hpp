#pragma once

#include <string>
#include <vector>

#include "ncdlab/gradcheck.hpp"
#include "ncdlab/losses.hpp"
#include "ncdlab/models.hpp"
#include "ncdlab/rng.hpp"

namespace ncdlab {

namespace detail {

// Random values kept away from the kinks of relu/abs/clamp and the domains
// of log/sqrt/div, so finite differences at eps=1e-3 stay valid.
inline Tensor<double> rand_smooth(std::vector<int> dims, Rng& rng, bool signed_vals = true) {
    Tensor<double> t(std::move(dims));
    for (auto& v : t.data) {
        v = rng.uniform(0.2, 1.5);
        if (signed_vals && rng.bernoulli(0.5)) v = -v;
    }
    return t;
}

inline Tensor<double> rand_positive(std::vector<int> dims, Rng& rng) {
    return rand_smooth(std::move(dims), rng, false);
}

// Contracts an arbitrary-shaped output to a scalar with fixed random weights
// so every output coordinate influences the root differently.
inline Value contract(Tape<double>& tp, Value v, Rng& rng) {
    Tensor<double> w(tp.value(v).dims);
    for (auto& x : w.data) x = rng.uniform(-1.0, 1.0);
    return tp.sum(tp.mul(v, tp.constant(std::move(w))));
}

}  // namespace detail

/// Grad-checks every registered tape primitive on `repeats` random inputs.
/// Returns one report per primitive with the max relative error observed.
inline std::vector<CheckReport> gradcheck_primitives(std::uint64_t seed, int repeats = 20,
                                                     double eps = 1e-3) {
    using detail::contract;
    using detail::rand_positive;
    using detail::rand_smooth;

    std::vector<CheckReport> reports;
    Rng rng(seed);

    auto run = [&](const std::string& name, auto&& make_inputs, auto&& build) {
        CheckReport rep{name, 0.0};
        for (int r = 0; r < repeats; ++r) {
            auto inputs = make_inputs(rng);
            std::vector<Tensor<double>*> ptrs;
            for (auto& t : inputs) ptrs.push_back(&t);
            Rng wrng(mix_seed(seed, static_cast<std::uint64_t>(r) + 1));
            ScalarFn fn = [&](Tape<double>& tp, const std::vector<Value>& vs) {
                Rng local = wrng;  // same contraction weights across FD evals
                return build(tp, vs, local);
            };
            rep.max_err = std::max(rep.max_err, grad_check(fn, ptrs, eps));
        }
        reports.push_back(rep);
    };

    using In = std::vector<Tensor<double>>;

    auto two_same = [](Rng& r) {
        return In{rand_smooth({3, 4}, r), rand_smooth({3, 4}, r)};
    };
    auto one = [](Rng& r) { return In{rand_smooth({3, 4}, r)}; };

    run("add", two_same, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.add(v[0], v[1]), r);
    });
    run("add_scalar_tensor", [](Rng& r) { return In{rand_smooth({3, 4}, r), rand_smooth({1}, r)}; },
        [](auto& tp, auto& v, Rng& r) { return detail::contract(tp, tp.add(v[0], v[1]), r); });
    run("sub", two_same, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.sub(v[0], v[1]), r);
    });
    run("mul", two_same, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.mul(v[0], v[1]), r);
    });
    run("mul_scalar_tensor", [](Rng& r) { return In{rand_smooth({1}, r), rand_smooth({3, 4}, r)}; },
        [](auto& tp, auto& v, Rng& r) { return detail::contract(tp, tp.mul(v[0], v[1]), r); });
    run("div", [](Rng& r) { return In{rand_smooth({3, 4}, r), rand_positive({3, 4}, r)}; },
        [](auto& tp, auto& v, Rng& r) { return detail::contract(tp, tp.div(v[0], v[1]), r); });
    run("scale", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.scale(v[0], 1.7), r);
    });
    run("neg", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.neg(v[0]), r);
    });
    run("exp", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.exp(v[0]), r);
    });
    run("log", [](Rng& r) { return In{rand_positive({3, 4}, r)}; },
        [](auto& tp, auto& v, Rng& r) { return detail::contract(tp, tp.log(v[0]), r); });
    run("relu", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.relu(v[0]), r);
    });
    run("abs", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.abs(v[0]), r);
    });
    run("sqrt", [](Rng& r) { return In{rand_positive({3, 4}, r)}; },
        [](auto& tp, auto& v, Rng& r) { return detail::contract(tp, tp.sqrt(v[0]), r); });
    run("clamp_min", one, [](auto& tp, auto& v, Rng& r) {
        // inputs lie in +-[0.2,1.5]; threshold 0 is eps-far from all of them
        return detail::contract(tp, tp.clamp_min(v[0], 0.0), r);
    });
    run("matmul", [](Rng& r) { return In{rand_smooth({3, 4}, r), rand_smooth({4, 2}, r)}; },
        [](auto& tp, auto& v, Rng& r) { return detail::contract(tp, tp.matmul(v[0], v[1]), r); });
    run("transpose", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.transpose(v[0]), r);
    });
    run("add_rows", [](Rng& r) { return In{rand_smooth({3, 4}, r), rand_smooth({4}, r)}; },
        [](auto& tp, auto& v, Rng& r) { return detail::contract(tp, tp.add_rows(v[0], v[1]), r); });
    run("row_softmax", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.row_softmax(v[0], 0.7), r);
    });
    run("l2_normalize_rows", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.l2_normalize_rows(v[0]), r);
    });
    run("rows_dot", two_same, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.rows_dot(v[0], v[1]), r);
    });
    run("row_sum", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.row_sum(v[0]), r);
    });
    run("col_sum", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.col_sum(v[0]), r);
    });
    run("center_rows", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.center_rows(v[0]), r);
    });
    run("diag", [](Rng& r) { return In{rand_smooth({4, 4}, r)}; },
        [](auto& tp, auto& v, Rng& r) { return detail::contract(tp, tp.diag(v[0]), r); });
    run("gather_rows", [](Rng& r) { return In{rand_smooth({5, 3}, r)}; },
        [](auto& tp, auto& v, Rng& r) {
            return detail::contract(tp, tp.gather_rows(v[0], {0, 2, 2, 4}), r);
        });
    run("sum", one, [](auto& tp, auto& v, Rng&) { return tp.sum(v[0]); });
    run("mean", one, [](auto& tp, auto& v, Rng&) { return tp.mean(v[0]); });
    run("reshape", one, [](auto& tp, auto& v, Rng& r) {
        return detail::contract(tp, tp.reshape(v[0], {2, 6}), r);
    });
    run("conv2d",
        [](Rng& r) {
            return In{rand_smooth({2, 2, 5, 5}, r), rand_smooth({3, 2, 3, 3}, r),
                      rand_smooth({3}, r)};
        },
        [](auto& tp, auto& v, Rng& r) {
            return detail::contract(tp, tp.conv2d(v[0], v[1], v[2], 2, 1), r);
        });

    return reports;
}

/// Grad-checks every training objective (the four baseline terms, the three
/// style penalties, the unified selector, and the total loss through the full
/// model) against central finite differences on `repeats` random batches.
/// eps defaults below the primitive-check value because the convolutional
/// paths contain relu kinks that a wider probe interval can straddle.
inline std::vector<CheckReport> gradcheck_losses(std::uint64_t seed, int repeats = 20,
                                                 double eps = 1e-4) {
    std::vector<CheckReport> reports;
    constexpr int B = 5, D = 7, K = 4;
    const std::vector<int> mixed_labels{0, 0, 1, -1, -1};

    auto gauss = [](std::vector<int> dims, Rng& r) {
        Tensor<double> t(std::move(dims));
        for (auto& v : t.data) v = r.normal();
        return t;
    };

    auto run = [&](const std::string& name, auto&& make_inputs, auto&& build) {
        CheckReport rep{name, 0.0};
        for (int r = 0; r < repeats; ++r) {
            Rng rng(mix_seed(seed, std::hash<std::string>{}(name), static_cast<std::uint64_t>(r)));
            auto inputs = make_inputs(rng);
            std::vector<Tensor<double>*> ptrs;
            for (auto& t : inputs) ptrs.push_back(&t);
            // constants (teacher labels) regenerate identically on every eval
            Rng crng(mix_seed(seed, static_cast<std::uint64_t>(r), 0xc0575ull));
            ScalarFn fn = [&](Tape<double>& tp, const std::vector<Value>& vs) {
                Rng local = crng;
                return build(tp, vs, local);
            };
            rep.max_err = std::max(rep.max_err, grad_check(fn, ptrs, eps));
        }
        reports.push_back(rep);
    };

    using In = std::vector<Tensor<double>>;
    auto two_embeddings = [&](Rng& r) { return In{gauss({B, D}, r), gauss({B, D}, r)}; };

    run("unsup_contrastive", two_embeddings,
        [&](Tape<double>& tp, const std::vector<Value>& v, Rng&) {
            return unsup_contrastive(tp, v[0], v[1], 0.2);
        });
    run("sup_contrastive", two_embeddings,
        [&](Tape<double>& tp, const std::vector<Value>& v, Rng&) {
            return sup_contrastive(tp, v[0], v[1], mixed_labels, 1.0);
        });
    // The teacher is constant under the gradient (stop-gradient semantics),
    // so the finite-difference oracle must hold it fixed too: teacher labels
    // come from per-repeat constants, not from the checked inputs.
    run("cluster",
        [&](Rng& r) { return In{gauss({B, K}, r), gauss({B, K}, r)}; },
        [&](Tape<double>& tp, const std::vector<Value>& v, Rng& c) {
            Value p = tp.row_softmax(v[0], 1.0);
            Value p_prime = tp.row_softmax(v[1], 1.0);
            Value q = tp.row_softmax(tp.constant(gauss({B, K}, c)), 0.5);
            Value q_prime = tp.row_softmax(tp.constant(gauss({B, K}, c)), 0.5);
            return cluster_loss(tp, p, p_prime, q, q_prime, 1.0);
        });
    run("ce_supervised",
        [&](Rng& r) { return In{gauss({3, K}, r)}; },
        [&](Tape<double>& tp, const std::vector<Value>& v, Rng&) {
            return ce_supervised(tp, tp.row_softmax(v[0], 1.0), {0, 2, 1});
        });
    run("style_orth", two_embeddings, [&](Tape<double>& tp, const std::vector<Value>& v, Rng&) {
        return style_orth(tp, v[0], v[1]);
    });
    run("style_cossimi", two_embeddings,
        [&](Tape<double>& tp, const std::vector<Value>& v, Rng&) {
            return style_cossimi(tp, v[0], v[1]);
        });
    run("style_corr", two_embeddings, [&](Tape<double>& tp, const std::vector<Value>& v, Rng&) {
        return style_corr(tp, v[0], v[1]);
    });
    run("style_removal", two_embeddings,
        [&](Tape<double>& tp, const std::vector<Value>& v, Rng&) {
            LossConfig cfg;
            cfg.lambda_a = 0.f;
            cfg.lambda_b = 1.f;
            cfg.lambda_c = 0.f;
            return style_removal(tp, v[0], v[1], cfg);
        });

    // total loss through a small model: inputs are all trainable parameters
    {
        ModelDims dims;
        dims.image_size = 8;
        dims.conv1_channels = 2;
        dims.conv2_channels = 4;
        dims.mlp_hidden = 12;
        dims.d_h = 10;
        dims.d_r = 5;
        dims.num_seen = 2;
        dims.num_novel = 2;
        LossConfig cfg;
        cfg.tau_u = 0.2f;  // keep exp() in range for generic Gaussian embeddings
        cfg.w = 0.05f;

        CheckReport rep{"total_loss", 0.0};
        int accepted = 0;
        for (std::uint64_t attempt = 0; accepted < repeats; ++attempt) {
            const std::uint64_t rs = mix_seed(seed, 0x70717273ull, attempt);
            auto model = ModelBundle<double>::init(dims, InitSpec{rs});
            Rng rng(mix_seed(rs, 1));
            const int batch = 4;
            Tensor<double> x1({batch, 64}), x2({batch, 64});
            for (auto& v : x1.data) v = rng.uniform(0.0, 1.0);
            for (auto& v : x2.data) v = rng.uniform(0.0, 1.0);
            const std::vector<int> labels{0, 1, -1, -1};

            // The optimizer's gradient treats the teacher as constant, so the
            // finite-difference oracle freezes the teacher labels at the
            // unperturbed parameters.
            Tensor<double> q0, q0p;
            {
                Tape<double> tp;
                auto c1 = forward_content(tp, model, tp.constant(x1));
                auto c2 = forward_content(tp, model, tp.constant(x2));
                Value protos = tp.leaf(model.prototypes);
                q0 = tp.value(teacher_labels(tp, c1.h, protos, double(cfg.tau_t)));
                q0p = tp.value(teacher_labels(tp, c2.h, protos, double(cfg.tau_t)));
            }

            std::vector<Tensor<double>*> params = model.all_params();
            ScalarFn fn = [&](Tape<double>& tp, const std::vector<Value>&) {
                Value vx1 = tp.constant(x1);
                Value vx2 = tp.constant(x2);
                auto c1 = forward_content(tp, model, vx1);
                auto c2 = forward_content(tp, model, vx2);
                BatchViews<double> views;
                views.z = c1.z;
                views.z_prime = c2.z;
                views.h = c1.h;
                views.h_prime = c2.h;
                views.v = forward_style(tp, model, vx1);
                views.v_prime = forward_style(tp, model, vx2);
                views.teacher = tp.constant(q0);
                views.teacher_prime = tp.constant(q0p);
                views.labels = labels;
                return total_loss(tp, views, tp.leaf(model.prototypes), cfg).value;
            };

            // Gradients are only defined away from relu/abs kinks; resample
            // model instances whose preactivations sit inside the probe step.
            {
                Tape<double> probe;
                fn(probe, {});
                if (probe.min_kink_margin() < 100 * eps) continue;
            }
            ++accepted;
            rep.max_err = std::max(rep.max_err, grad_check(fn, params, eps));
        }
        reports.push_back(rep);
    }

    return reports;
}

}  // namespace ncdlab
