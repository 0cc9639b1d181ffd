#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ncdlab/config.hpp"
#include "ncdlab/trainer.hpp"

using namespace ncdlab;
using Catch::Approx;

namespace {

// small enough for unit tests, large enough to exercise mixed batching
TrainConfig quick_config() {
    TrainConfig cfg = TrainConfig::desk_preset();
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.num_seeds = 1;
    return cfg;
}

SyntheticSpec quick_data() {
    SyntheticSpec spec;
    spec.samples_per_class = 12;
    return spec;
}

}  // namespace

TEST_CASE("cosine schedule") {
    TrainConfig cfg;
    cfg.epochs = 200;

    SECTION("endpoints are exact") {
        CHECK(cosine_lr(0, cfg) == 0.01f);
        CHECK(cosine_lr(cfg.epochs - 1, cfg) == 1e-5f);
    }

    SECTION("midpoint is the arithmetic mean for odd epoch counts") {
        cfg.epochs = 201;
        CHECK(cosine_lr(100, cfg) == Approx((0.01 + 1e-5) / 2).margin(1e-9));
    }

    SECTION("monotone decreasing") {
        float prev = 1.f;
        for (int e = 0; e < cfg.epochs; ++e) {
            const float lr = cosine_lr(e, cfg);
            CHECK(lr < prev);
            prev = lr;
        }
    }

    SECTION("out-of-range epoch rejected") {
        CHECK_THROWS_AS(cosine_lr(-1, cfg), argument_error);
        CHECK_THROWS_AS(cosine_lr(cfg.epochs, cfg), argument_error);
    }
}

TEST_CASE("sgd step") {
    TrainConfig cfg;
    cfg.momentum = 0.9f;
    cfg.weight_decay = 0.f;

    TensorF p({3}, {1.f, 2.f, 3.f});
    p.set_requires_grad(true);
    std::vector<TensorF*> params{&p};
    SgdState state = SgdState::like(params);

    SECTION("zero gradient and zero decay leave parameters unchanged") {
        sgd_step(params, state, 0.1f, cfg);
        CHECK(p.data == std::vector<float>{1.f, 2.f, 3.f});
    }

    SECTION("single step without momentum is plain gradient descent") {
        TrainConfig plain = cfg;
        plain.momentum = 0.f;
        p.grad = {1.f, 1.f, 1.f};
        sgd_step(params, state, 0.1f, plain);
        CHECK(p.data[0] == Approx(0.9f).margin(1e-7));
        CHECK(p.grad[0] == 0.f);  // zeroed by the step
    }

    SECTION("two steps with momentum match the hand-unrolled recurrence") {
        // buf1 = g, p1 = p0 - lr g; buf2 = 0.9 g + g, p2 = p0 - lr g (1 + 1.9)
        const float g = 0.5f, lr = 0.1f;
        p.grad = {g, g, g};
        sgd_step(params, state, lr, cfg);
        p.grad = {g, g, g};
        sgd_step(params, state, lr, cfg);
        CHECK(p.data[0] == Approx(1.f - lr * g * (1.f + 1.9f)).margin(1e-7));
    }

    SECTION("weight decay shrinks parameters even with zero gradient") {
        TrainConfig wd = cfg;
        wd.weight_decay = 0.1f;
        sgd_step(params, state, 0.1f, wd);
        for (int i = 0; i < 3; ++i) CHECK(std::fabs(p.data[i]) < std::fabs(float(i + 1)));
    }

    SECTION("mismatched state rejected") {
        SgdState bad;
        CHECK_THROWS_AS(sgd_step(params, bad, 0.1f, cfg), shape_error);
    }
}

TEST_CASE("training runs are deterministic") {
    const TrainConfig cfg = quick_config();
    const SyntheticSpec spec = quick_data();
    const SeedResult a = run_single_seed(cfg, spec, 0);
    const SeedResult b = run_single_seed(cfg, spec, 0);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i)
        CHECK(a.trace[i].terms.total == b.trace[i].terms.total);
    CHECK(a.scores.acc == b.scores.acc);
    CHECK(a.cos_final == b.cos_final);

    const SeedResult c = run_single_seed(cfg, spec, 1);
    CHECK(a.trace[0].terms.total != c.trace[0].terms.total);
}

TEST_CASE("style encoder is untouched when the module is off") {
    TrainConfig cfg = quick_config();
    cfg.loss.w = 0.f;
    const SyntheticSpec spec = quick_data();

    const std::uint64_t run_seed = mix_seed(cfg.base_seed, 0ull);
    SyntheticSpec s2 = spec;
    s2.seed = mix_seed(run_seed, 0xda7aull);
    const DatasetSplit split = build_split(s2);
    ModelDims dims = cfg.dims;
    dims.num_seen = s2.num_seen();
    dims.num_novel = s2.num_novel();
    TrainConfig rc = cfg;
    rc.dims = dims;
    auto model = ModelBundle<float>::init(dims, InitSpec{7});
    const auto init_s_fc = model.s_fc_w.data;
    const auto init_s_conv = model.s_conv1_w.data;
    model.set_requires_grad(true);

    auto trainable = model.content_params();  // style excluded at w = 0
    SgdState state = SgdState::like(trainable);
    Rng rng(3);
    for (int e = 0; e < cfg.epochs; ++e)
        train_epoch(model, split, rc, cosine_lr(e, cfg), rng, trainable, state);

    CHECK(model.s_fc_w.data == init_s_fc);
    CHECK(model.s_conv1_w.data == init_s_conv);
}

TEST_CASE("experiment report") {
    TrainConfig cfg = quick_config();
    const SyntheticSpec spec = quick_data();

    SECTION("single seed reports zero std") {
        cfg.num_seeds = 1;
        const ExperimentReport rep = run_experiment(cfg, spec);
        CHECK(rep.std_acc == 0.0);
        CHECK(rep.seeds.size() == 1);
    }

    SECTION("identical configs give identical reports") {
        cfg.num_seeds = 2;
        const ExperimentReport a = run_experiment(cfg, spec);
        const ExperimentReport b = run_experiment(cfg, spec);
        CHECK(a.mean_acc == b.mean_acc);
        CHECK(a.std_acc == b.std_acc);
        CHECK(a.seeds[1].scores.nmi == b.seeds[1].scores.nmi);
    }

    SECTION("parallel seed execution matches sequential") {
        cfg.num_seeds = 2;
        TrainConfig par = cfg;
        par.jobs = 2;
        const ExperimentReport a = run_experiment(cfg, spec);
        const ExperimentReport b = run_experiment(par, spec);
        CHECK(a.mean_acc == b.mean_acc);
        CHECK(a.seeds[0].scores.ari == b.seeds[0].scores.ari);
    }

    SECTION("json round trip carries the config") {
        cfg.num_seeds = 1;
        const ExperimentReport rep = run_experiment(cfg, spec);
        const auto j = report_to_json(rep, cfg, spec);
        CHECK(j.at("config").at("tau_u").get<float>() == cfg.loss.tau_u);
        CHECK(j.at("dataset").at("severity").get<int>() == spec.severity);
        CHECK(j.at("seeds").size() == 1);
    }
}

TEST_CASE("loss trace decreases over the desk preset") {
    // trimmed preset: fewer samples, same schedule shape
    TrainConfig cfg = TrainConfig::desk_preset();
    cfg.epochs = 15;
    cfg.num_seeds = 1;
    SyntheticSpec spec;
    spec.samples_per_class = 40;
    const SeedResult r = run_single_seed(cfg, spec, 0);
    REQUIRE(r.epochs.size() == 15);
    CHECK(r.epochs.back().mean_terms.total < r.epochs.front().mean_terms.total);
}

TEST_CASE("config files") {
    SECTION("round trip") {
        RunConfig cfg;
        cfg.train.epochs = 77;
        cfg.train.loss.w = 0.05f;
        cfg.data.severity = 4;
        cfg.data.corruption = Corruption::impulse_noise;
        const RunConfig back = parse_config(serialize_config(cfg));
        CHECK(back.train.epochs == 77);
        CHECK(back.train.loss.w == 0.05f);
        CHECK(back.data.severity == 4);
        CHECK(back.data.corruption == Corruption::impulse_noise);
    }

    SECTION("comments and blank lines are ignored") {
        const RunConfig cfg = parse_config("# hello\n\nepochs = 3 # trailing\n");
        CHECK(cfg.train.epochs == 3);
    }

    SECTION("unknown keys and malformed lines rejected") {
        CHECK_THROWS_AS(parse_config("nope = 1\n"), config_error);
        CHECK_THROWS_AS(parse_config("epochs 3\n"), config_error);
        CHECK_THROWS_AS(parse_config("epochs = abc\n"), config_error);
    }

    SECTION("defaults match the reference configuration") {
        const RunConfig cfg;
        CHECK(cfg.train.loss.tau_u == 0.07f);
        CHECK(cfg.train.loss.tau_c == 1.0f);
        CHECK(cfg.train.loss.tau_s == 0.1f);
        CHECK(cfg.train.loss.tau_t == 0.07f);
        CHECK(cfg.train.loss.lambda == 0.35f);
        CHECK(cfg.train.loss.eps_reg == 1.0f);
        CHECK(cfg.train.batch_size == 64);
        CHECK(cfg.train.momentum == 0.9f);
        CHECK(cfg.train.weight_decay == 5e-5f);
        CHECK(cfg.train.lr0 == 0.01f);
        CHECK(cfg.train.lr_min == 1e-5f);
    }
}
