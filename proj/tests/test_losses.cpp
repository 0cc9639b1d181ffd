#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ncdlab/checks.hpp"
#include "ncdlab/losses.hpp"

using namespace ncdlab;
using Catch::Approx;

namespace {

// ---- scalar reference implementations (test-only oracles) ---------------

std::vector<std::vector<double>> normalized_rows(const TensorD& t) {
    std::vector<std::vector<double>> rows(t.rows(), std::vector<double>(t.cols()));
    for (int i = 0; i < t.rows(); ++i) {
        double ss = 0;
        for (int j = 0; j < t.cols(); ++j) ss += t.at(i, j) * t.at(i, j);
        const double norm = std::sqrt(ss);
        for (int j = 0; j < t.cols(); ++j) rows[i][j] = t.at(i, j) / norm;
    }
    return rows;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double ref_unsup(const TensorD& z, const TensorD& zp, double tau) {
    const auto a = normalized_rows(z);
    const auto b = normalized_rows(zp);
    double loss = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = 0;
        for (std::size_t n = 0; n < b.size(); ++n)
            if (n != i) denom += std::exp(dot(a[i], b[n]) / tau);
        loss += -std::log(std::exp(dot(a[i], b[i]) / tau) / denom);
    }
    return loss / static_cast<double>(a.size());
}

double ref_sup(const TensorD& z, const TensorD& zp, const std::vector<int>& labels, double tau) {
    const auto a = normalized_rows(z);
    const auto b = normalized_rows(zp);
    double loss = 0;
    int contributing = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (labels[i] < 0) continue;
        std::vector<std::size_t> peers;
        for (std::size_t q = 0; q < a.size(); ++q)
            if (q != i && labels[q] == labels[i]) peers.push_back(q);
        if (peers.empty()) continue;
        double denom = 0;
        for (std::size_t n = 0; n < b.size(); ++n)
            if (n != i) denom += std::exp(dot(a[i], b[n]) / tau);
        double inner = 0;
        for (std::size_t q : peers) inner += -std::log(std::exp(dot(a[i], b[q]) / tau) / denom);
        loss += inner / static_cast<double>(peers.size());
        ++contributing;
    }
    return contributing ? loss / contributing : 0.0;
}

TensorD random_embeddings(Rng& rng, int rows, int cols) {
    TensorD t({rows, cols});
    for (auto& v : t.data) v = rng.normal();
    return t;
}

// Random rotation as a product of Givens rotations; preserves inner products.
TensorD random_rotation(Rng& rng, int d) {
    TensorD r = TensorD::identity(d);
    for (int k = 0; k < 3 * d; ++k) {
        const int i = static_cast<int>(rng.below(d));
        int j = static_cast<int>(rng.below(d));
        if (i == j) j = (j + 1) % d;
        const double theta = rng.uniform(0.0, 2.0 * 3.14159265358979);
        const double c = std::cos(theta), s = std::sin(theta);
        for (int col = 0; col < d; ++col) {
            const double a = r.at(i, col), b = r.at(j, col);
            r.at(i, col) = c * a - s * b;
            r.at(j, col) = s * a + c * b;
        }
    }
    return r;
}

TensorD rotate_rows(const TensorD& x, const TensorD& r) {
    TensorD out(x.dims);
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) {
            double acc = 0;
            for (int k = 0; k < x.cols(); ++k) acc += x.at(i, k) * r.at(j, k);
            out.at(i, j) = acc;
        }
    return out;
}

double eval_unsup(const TensorD& z, const TensorD& zp, double tau) {
    TapeD tp;
    return tp.value(unsup_contrastive(tp, tp.constant(z), tp.constant(zp), tau)).data[0];
}

double eval_sup(const TensorD& z, const TensorD& zp, const std::vector<int>& labels, double tau) {
    TapeD tp;
    return tp.value(sup_contrastive(tp, tp.constant(z), tp.constant(zp), labels, tau)).data[0];
}

}  // namespace

TEST_CASE("unsup contrastive") {
    SECTION("identical unit embeddings give exactly zero") {
        TensorD z({2, 3}, {1, 0, 0, 1, 0, 0});
        CHECK(eval_unsup(z, z, 0.5) == Approx(0.0).margin(1e-12));
    }

    SECTION("orthogonal negative at tau=1 gives -1") {
        TensorD z({2, 2}, {1, 0, 0, 1});
        // z_i . z'_i = 1, z_i . z'_n = 0: per row -log(e / 1) = -1
        CHECK(eval_unsup(z, z, 1.0) == Approx(-1.0).margin(1e-9));
    }

    SECTION("invariant under simultaneous row permutation") {
        Rng rng(17);
        TensorD z = random_embeddings(rng, 6, 5);
        TensorD zp = random_embeddings(rng, 6, 5);
        const int perm[6] = {3, 0, 5, 1, 4, 2};
        TensorD z2(z.dims), zp2(z.dims);
        for (int i = 0; i < 6; ++i)
            for (int j = 0; j < 5; ++j) {
                z2.at(i, j) = z.at(perm[i], j);
                zp2.at(i, j) = zp.at(perm[i], j);
            }
        CHECK(eval_unsup(z, zp, 0.3) == Approx(eval_unsup(z2, zp2, 0.3)).margin(1e-9));
    }

    SECTION("matches the scalar reference on random batches") {
        Rng rng(23);
        for (int rep = 0; rep < 20; ++rep) {
            TensorD z = random_embeddings(rng, 5, 7);
            TensorD zp = random_embeddings(rng, 5, 7);
            const double tau = rng.uniform(0.1, 1.5);
            CHECK(eval_unsup(z, zp, tau) == Approx(ref_unsup(z, zp, tau)).margin(1e-9));
        }
    }

    SECTION("invariant under a common rotation of all embeddings") {
        Rng rng(29);
        TensorD z = random_embeddings(rng, 5, 6);
        TensorD zp = random_embeddings(rng, 5, 6);
        TensorD r = random_rotation(rng, 6);
        CHECK(eval_unsup(rotate_rows(z, r), rotate_rows(zp, r), 0.2) ==
              Approx(eval_unsup(z, zp, 0.2)).margin(1e-5));
    }

    SECTION("single-row batch rejected") {
        TensorD z({1, 3}, {1, 0, 0});
        TapeD tp;
        CHECK_THROWS_AS(unsup_contrastive(tp, tp.constant(z), tp.constant(z), 0.5),
                        argument_error);
    }
}

TEST_CASE("sup contrastive") {
    SECTION("two same-label rows with identical embeddings give zero") {
        TensorD z({2, 3}, {0, 1, 0, 0, 1, 0});
        CHECK(eval_sup(z, z, {4, 4}, 0.7) == Approx(0.0).margin(1e-12));
    }

    SECTION("all-distinct labels give zero by convention") {
        Rng rng(31);
        TensorD z = random_embeddings(rng, 4, 5);
        TensorD zp = random_embeddings(rng, 4, 5);
        CHECK(eval_sup(z, zp, {0, 1, 2, 3}, 1.0) == 0.0);
    }

    SECTION("matches the scalar reference on random mixed batches") {
        Rng rng(37);
        const std::vector<int> labels{0, 0, 1, 1, 0, -1, -1};
        for (int rep = 0; rep < 20; ++rep) {
            TensorD z = random_embeddings(rng, 7, 6);
            TensorD zp = random_embeddings(rng, 7, 6);
            const double tau = rng.uniform(0.2, 2.0);
            CHECK(eval_sup(z, zp, labels, tau) ==
                  Approx(ref_sup(z, zp, labels, tau)).margin(1e-9));
        }
    }

    SECTION("loss moves monotonically with temperature on a fixed batch") {
        // positives aligned, negatives orthogonal: raising tau shrinks the
        // logit gap, so the loss must increase monotonically
        TensorD z({3, 3}, {1, 0, 0, 1, 0, 0, 0, 1, 0});
        const std::vector<int> labels{0, 0, 1};
        double prev = -1e9;
        for (double tau : {0.5, 1.0, 2.0}) {
            const double cur = eval_sup(z, z, labels, tau);
            CHECK(cur == Approx(ref_sup(z, z, labels, tau)).margin(1e-9));
            CHECK(cur > prev);
            prev = cur;
        }
    }

    SECTION("rotation invariance") {
        Rng rng(41);
        TensorD z = random_embeddings(rng, 5, 6);
        TensorD zp = random_embeddings(rng, 5, 6);
        TensorD r = random_rotation(rng, 6);
        const std::vector<int> labels{0, 0, 1, 1, -1};
        CHECK(eval_sup(rotate_rows(z, r), rotate_rows(zp, r), labels, 0.8) ==
              Approx(eval_sup(z, zp, labels, 0.8)).margin(1e-5));
    }

    SECTION("batch without labeled rows rejected") {
        TensorD z({2, 3}, {1, 0, 0, 0, 1, 0});
        TapeD tp;
        CHECK_THROWS_AS(sup_contrastive(tp, tp.constant(z), tp.constant(z), {-1, -1}, 1.0),
                        argument_error);
    }
}

TEST_CASE("cluster loss") {
    auto constant_dist = [](TapeD& tp, std::vector<std::vector<double>> rows) {
        TensorD t({static_cast<int>(rows.size()), static_cast<int>(rows[0].size())});
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < rows[0].size(); ++j)
                t.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
        return tp.constant(t);
    };

    SECTION("one-hot teacher vs uniform student costs log K") {
        TapeD tp;
        const int k = 4;
        Value p = constant_dist(tp, {{0.25, 0.25, 0.25, 0.25}});
        Value q = constant_dist(tp, {{0, 1, 0, 0}});
        // eps 0, both directions identical
        Value loss = cluster_loss(tp, p, p, q, q, 0.0);
        CHECK(tp.value(loss).data[0] == Approx(std::log(double(k))).margin(1e-9));
    }

    SECTION("uniform average prediction maximizes the entropy bonus") {
        TapeD tp;
        Value p = constant_dist(tp, {{0.5, 0.5}, {0.5, 0.5}});
        Value q = constant_dist(tp, {{1.0, 0.0}, {0.0, 1.0}});
        const double eps = 0.7;
        Value loss = cluster_loss(tp, p, p, q, q, eps);
        const double ce = std::log(2.0);
        CHECK(tp.value(loss).data[0] == Approx(ce - eps * std::log(2.0)).margin(1e-9));
    }

    SECTION("hand value for K=2") {
        TapeD tp;
        Value p = constant_dist(tp, {{0.8, 0.2}});
        Value q = constant_dist(tp, {{1.0, 0.0}});
        Value loss = cluster_loss(tp, p, p, q, q, 0.0);
        CHECK(tp.value(loss).data[0] == Approx(-std::log(0.8)).margin(1e-6));
    }

    SECTION("with eps 0 and teacher = student the loss is the mean entropy") {
        Rng rng(53);
        TapeD tp;
        Value logits = tp.constant(random_embeddings(rng, 6, 5));
        Value p = tp.row_softmax(logits, 1.0);
        Value q = tp.detach(p);
        Value loss = cluster_loss(tp, p, p, q, q, 0.0);
        const auto& pv = tp.value(p);
        double want = 0;
        for (int i = 0; i < pv.rows(); ++i)
            for (int j = 0; j < pv.cols(); ++j) want -= pv.at(i, j) * std::log(pv.at(i, j));
        want /= pv.rows();
        CHECK(tp.value(loss).data[0] == Approx(want).margin(1e-6));
    }

    SECTION("teacher with a live gradient path is rejected") {
        TensorD logits({2, 3}, {1, 0, 0, 0, 1, 0});
        logits.set_requires_grad(true);
        TapeD tp;
        Value p = tp.row_softmax(tp.leaf(logits), 1.0);
        CHECK_THROWS_AS(cluster_loss(tp, p, p, p, p, 1.0), argument_error);
    }

    SECTION("non-distribution rows are a numeric error") {
        TapeD tp;
        Value bad = constant_dist(tp, {{0.9, 0.4}});
        Value q = constant_dist(tp, {{1.0, 0.0}});
        CHECK_THROWS_AS(cluster_loss(tp, bad, bad, q, q, 1.0), numeric_error);
    }
}

TEST_CASE("supervised cross entropy") {
    TapeD tp;
    SECTION("exact one-hot prediction costs zero (clamped log)") {
        TensorD p({2, 3}, {1, 0, 0, 0, 0, 1});
        Value loss = ce_supervised(tp, tp.constant(p), {0, 2});
        CHECK(tp.value(loss).data[0] == Approx(0.0).margin(1e-9));
    }

    SECTION("uniform prediction costs log K") {
        TensorD p({1, 5}, {0.2, 0.2, 0.2, 0.2, 0.2});
        Value loss = ce_supervised(tp, tp.constant(p), {3});
        CHECK(tp.value(loss).data[0] == Approx(std::log(5.0)).margin(1e-9));
    }

    SECTION("hand value") {
        TensorD p({1, 3}, {0.7, 0.2, 0.1});
        Value loss = ce_supervised(tp, tp.constant(p), {0});
        CHECK(tp.value(loss).data[0] == Approx(0.356675).margin(1e-4));
    }

    SECTION("label out of range is rejected") {
        TensorD p({1, 3}, {0.7, 0.2, 0.1});
        CHECK_THROWS_AS(ce_supervised(tp, tp.constant(p), {3}), argument_error);
    }
}

TEST_CASE("style penalties") {
    SECTION("orth: frozen examples") {
        TapeD tp;
        // orthogonal rows
        TensorD z({2, 2}, {1, 0, 0, 1});
        TensorD v({2, 2}, {0, 1, 1, 0});
        CHECK(tp.value(style_orth(tp, tp.constant(z), tp.constant(v))).data[0] == 0.0);
        // identical unit rows
        CHECK(tp.value(style_orth(tp, tp.constant(z), tp.constant(z))).data[0] == 1.0);
        // |3 - 2| = 1
        TensorD a({1, 2}, {1, 2});
        TensorD b({1, 2}, {3, -1});
        CHECK(tp.value(style_orth(tp, tp.constant(a), tp.constant(b))).data[0] == 1.0);
    }

    SECTION("orth is homogeneous of degree 1 in each argument") {
        Rng rng(61);
        TapeD tp;
        TensorD z = random_embeddings(rng, 4, 6);
        TensorD v = random_embeddings(rng, 4, 6);
        TensorD z3 = z;
        for (auto& x : z3.data) x *= 3.0;
        const double base = tp.value(style_orth(tp, tp.constant(z), tp.constant(v))).data[0];
        const double scaled = tp.value(style_orth(tp, tp.constant(z3), tp.constant(v))).data[0];
        CHECK(scaled == Approx(3.0 * base).margin(1e-9));
    }

    SECTION("cossimi: frozen examples and scale invariance") {
        TapeD tp;
        TensorD z({1, 2}, {1, 0});
        TensorD v({1, 2}, {1, 1});
        CHECK(tp.value(style_cossimi(tp, tp.constant(z), tp.constant(v))).data[0] ==
              Approx(1.0 / std::sqrt(2.0)).margin(1e-9));
        TensorD v2({1, 2}, {2, 0});
        CHECK(tp.value(style_cossimi(tp, tp.constant(z), tp.constant(v2))).data[0] ==
              Approx(1.0).margin(1e-9));
        TensorD orth({1, 2}, {0, 5});
        CHECK(tp.value(style_cossimi(tp, tp.constant(z), tp.constant(orth))).data[0] ==
              Approx(0.0).margin(1e-9));

        Rng rng(67);
        TensorD a = random_embeddings(rng, 3, 5);
        TensorD b = random_embeddings(rng, 3, 5);
        TensorD b9 = b;
        for (auto& x : b9.data) x *= 9.0;
        CHECK(tp.value(style_cossimi(tp, tp.constant(a), tp.constant(b))).data[0] ==
              Approx(tp.value(style_cossimi(tp, tp.constant(a), tp.constant(b9))).data[0])
                  .margin(1e-6));
        TensorD zero({1, 2}, {0, 0});
        CHECK_THROWS_AS(style_cossimi(tp, tp.constant(z), tp.constant(zero)), numeric_error);
    }

    SECTION("corr: affine invariance and frozen example") {
        TapeD tp;
        TensorD z({1, 3}, {1, 2, 3});
        // positive affine image a*z + b
        TensorD va({1, 3}, {2 * 1 + 5, 2 * 2 + 5, 2 * 3 + 5});
        CHECK(tp.value(style_corr(tp, tp.constant(z), tp.constant(va))).data[0] ==
              Approx(1.0).margin(1e-9));
        // negated affine image still gives |corr| = 1
        TensorD vn({1, 3}, {-1 + 4, -2 + 4, -3 + 4});
        CHECK(tp.value(style_corr(tp, tp.constant(z), tp.constant(vn))).data[0] ==
              Approx(1.0).margin(1e-9));
        // |corr([1,2,3],[1,3,2])| = 0.5
        TensorD vb({1, 3}, {1, 3, 2});
        CHECK(tp.value(style_corr(tp, tp.constant(z), tp.constant(vb))).data[0] ==
              Approx(0.5).margin(1e-9));
    }

    SECTION("corr: degenerate rows contribute zero and are flagged") {
        TapeD tp;
        TensorD z({2, 3}, {1, 2, 3, 4, 4, 4});  // second row constant
        TensorD v({2, 3}, {1, 3, 2, 1, 2, 3});
        int degenerate = 0;
        Value loss = style_corr(tp, tp.constant(z), tp.constant(v), &degenerate);
        CHECK(degenerate == 1);
        CHECK(tp.value(loss).data[0] == Approx(0.25).margin(1e-9));  // (0.5 + 0)/2

        TensorD flat({1, 3}, {2, 2, 2});
        TensorD v1({1, 3}, {1, 3, 2});
        CHECK_THROWS_AS(style_corr(tp, tp.constant(flat), tp.constant(v1)), numeric_error);
    }

    SECTION("unified selector reproduces each penalty exactly") {
        Rng rng(71);
        TapeD tp;
        Value z = tp.constant(random_embeddings(rng, 4, 6));
        Value v = tp.constant(random_embeddings(rng, 4, 6));
        LossConfig cfg;
        cfg.lambda_a = 1.f, cfg.lambda_b = 0.f, cfg.lambda_c = 0.f;
        CHECK(tp.value(style_removal(tp, z, v, cfg)).data[0] ==
              tp.value(style_orth(tp, z, v)).data[0]);
        cfg.lambda_a = 0.f, cfg.lambda_b = 1.f;
        CHECK(tp.value(style_removal(tp, z, v, cfg)).data[0] ==
              tp.value(style_cossimi(tp, z, v)).data[0]);
        cfg.lambda_b = 0.f, cfg.lambda_c = 1.f;
        CHECK(tp.value(style_removal(tp, z, v, cfg)).data[0] ==
              tp.value(style_corr(tp, z, v)).data[0]);
        cfg.lambda_c = 0.f;
        CHECK_THROWS_AS(style_removal(tp, z, v, cfg), config_error);
    }
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    LossConfig bad = cfg;
    bad.tau_s = 0.f;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.lambda = 1.5f;
    CHECK_THROWS_AS(bad.validate(), config_error);
    bad = cfg;
    bad.lambda_b = 1.f;  // sum now 2
    CHECK_THROWS_AS(bad.validate(), config_error);
}

namespace {

struct TinySetup {
    ModelBundle<float> model;
    TensorF x1, x2;
    std::vector<int> labels;
};

TinySetup tiny_setup(std::uint64_t seed) {
    ModelDims dims;
    dims.image_size = 8;
    dims.conv1_channels = 2;
    dims.conv2_channels = 4;
    dims.mlp_hidden = 16;
    dims.d_h = 12;
    dims.d_r = 6;
    dims.num_seen = 2;
    dims.num_novel = 2;
    TinySetup s{ModelBundle<float>::init(dims, InitSpec{seed}), TensorF({4, 64}),
                TensorF({4, 64}), {0, 1, -1, -1}};
    Rng rng(mix_seed(seed, 2));
    for (auto& v : s.x1.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (auto& v : s.x2.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    return s;
}

template <typename T>
BatchViews<T> make_views(Tape<T>& tp, ModelBundle<T>& m, Value x1, Value x2,
                         const std::vector<int>& labels, bool with_style) {
    auto c1 = forward_content(tp, m, x1);
    auto c2 = forward_content(tp, m, x2);
    BatchViews<T> views;
    views.z = c1.z;
    views.z_prime = c2.z;
    views.h = c1.h;
    views.h_prime = c2.h;
    if (with_style) {
        views.v = forward_style(tp, m, x1);
        views.v_prime = forward_style(tp, m, x2);
    }
    views.labels = labels;
    return views;
}

}  // namespace

TEST_CASE("total loss") {
    SECTION("w = 0 equals the baseline total bitwise and leaves g untouched") {
        auto s = tiny_setup(3);
        s.model.set_requires_grad(true);

        LossConfig with_style;
        with_style.w = 0.f;
        with_style.force_style_graph = true;
        LossConfig without_style;
        without_style.w = 0.f;

        float t1, t2;
        {
            TapeF tp;
            auto views = make_views(tp, s.model, tp.constant(s.x1), tp.constant(s.x2), s.labels,
                                    true);
            auto out = total_loss(tp, views, tp.leaf(s.model.prototypes), with_style);
            tp.backward(out.value);
            t1 = out.terms.total;
            for (auto* p : s.model.style_params())
                for (float g : p->grad) CHECK(g == 0.f);
        }
        s.model.zero_grads();
        {
            TapeF tp;
            auto views = make_views(tp, s.model, tp.constant(s.x1), tp.constant(s.x2), s.labels,
                                    false);
            auto out = total_loss(tp, views, tp.leaf(s.model.prototypes), without_style);
            tp.backward(out.value);
            t2 = out.terms.total;
        }
        CHECK(t1 == t2);
    }

    SECTION("lambda = 1 drops the unsupervised terms") {
        auto s = tiny_setup(5);
        LossConfig cfg;
        cfg.lambda = 1.f;
        cfg.w = 0.f;
        TapeF tp;
        auto views =
            make_views(tp, s.model, tp.constant(s.x1), tp.constant(s.x2), s.labels, false);
        auto out = total_loss(tp, views, tp.leaf(s.model.prototypes), cfg);
        CHECK(out.terms.total == out.terms.rep_s + out.terms.cls_s);
    }

    SECTION("breakdown composes to the weighted total") {
        auto s = tiny_setup(7);
        LossConfig cfg;
        cfg.w = 0.01f;
        TapeF tp;
        auto views =
            make_views(tp, s.model, tp.constant(s.x1), tp.constant(s.x2), s.labels, true);
        auto out = total_loss(tp, views, tp.leaf(s.model.prototypes), cfg);
        const float want = (1.f - cfg.lambda) * out.terms.rep_u + cfg.lambda * out.terms.rep_s +
                           (1.f - cfg.lambda) * out.terms.cls_u + cfg.lambda * out.terms.cls_s +
                           cfg.w * out.terms.style;
        CHECK(out.terms.total == Approx(want).margin(1e-5));
        CHECK(out.terms.mean_abs_cos > 0.f);
    }
}

TEST_CASE("every objective passes gradient checks on 20 random batches") {
    for (const auto& rep : gradcheck_losses(/*seed=*/424242, /*repeats=*/20)) {
        INFO(rep.name << " max rel err " << rep.max_err);
        CHECK(rep.max_err < 1e-4);
    }
}
