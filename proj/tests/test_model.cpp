#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "rollcast/encoding.hpp"
#include "rollcast/model.hpp"
#include "rollcast/trainer.hpp"
#include "gradcases.hpp"
#include "support.hpp"

using namespace rollcast;
using namespace rollcast::model;
using diff::Graph;
using diff::Var;
using testing::min_routing_margin;

namespace {

std::vector<double> values(Var v) { return {v.value().begin(), v.value().end()}; }

}  // namespace

TEST_CASE("single-head attention over two tokens matches a hand computation") {
    // D = 2, W_qkv picks q = x, k = 2x, v = x + 1
    Graph g;
    const std::vector<double> x = {1.0, 0.0, 0.5, -1.0};
    const std::vector<double> wqkv = {1, 0, 2, 0, 1, 0,  //
                                      0, 1, 0, 2, 0, 1};
    const std::vector<double> bqkv = {0, 0, 0, 0, 1, 1};
    const std::vector<double> wout = {1, 0, 0, 1}, bout = {0, 0};
    auto y = self_attention(g.constant({2, 2}, x), g.constant({2, 6}, wqkv), g.constant({1, 6}, bqkv),
                            g.constant({2, 2}, wout), g.constant({1, 2}, bout), 1);
    const double r = 1.0 / std::sqrt(2.0);
    const double q[2][2] = {{1, 0}, {0.5, -1}}, k[2][2] = {{2, 0}, {1, -2}}, v[2][2] = {{2, 1}, {1.5, 0}};
    for (int i = 0; i < 2; ++i) {
        const double s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) * r;
        const double s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) * r;
        const double a0 = std::exp(s0) / (std::exp(s0) + std::exp(s1)), a1 = 1 - a0;
        for (int d = 0; d < 2; ++d)
            CHECK(y.value()[i * 2 + d] == doctest::Approx(a0 * v[0][d] + a1 * v[1][d]).epsilon(1e-14));
    }
}

TEST_CASE("attention is permutation equivariant") {
    std::mt19937_64 rng(41);
    const std::size_t L = 5, D = 8;
    const auto x = testing::random_vector(L * D, rng);
    const auto wqkv = testing::random_vector(D * 3 * D, rng), bqkv = testing::random_vector(3 * D, rng);
    const auto wout = testing::random_vector(D * D, rng), bout = testing::random_vector(D, rng);
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    Graph g;
    auto run = [&](const std::vector<double>& in) {
        return values(self_attention(g.constant({L, D}, in), g.constant({D, 3 * D}, wqkv), g.constant({1, 3 * D}, bqkv),
                                     g.constant({D, D}, wout), g.constant({1, D}, bout), 2));
    };
    std::vector<double> xp(L * D);
    for (std::size_t r = 0; r < L; ++r) std::copy_n(x.begin() + perm[r] * D, D, xp.begin() + r * D);
    const auto y = run(x), yp = run(xp);
    for (std::size_t r = 0; r < L; ++r)
        for (std::size_t d = 0; d < D; ++d) CHECK(yp[r * D + d] == doctest::Approx(y[perm[r] * D + d]).epsilon(1e-12));
}

TEST_CASE("freshly initialised block is the identity (zero AdaLN gates)") {
    auto cfg = testing::micro_config();
    cfg.validate(testing::micro_spec());
    diff::ParameterStore store;
    std::mt19937_64 rng(42);
    ArchBlock block(store, "b.", cfg, rng);
    for (double w : block.adaln_weight().value) CHECK(w == 0.0);
    Graph g;
    const auto z = testing::random_vector(8 * 8, rng);
    const auto cond = testing::random_vector(2 * 8, rng);
    const std::vector<std::size_t> ri = {0, 0, 0, 0, 2, 2, 2, 2};
    auto out = block.forward(g, g.constant({8, 8}, z), g.constant({2, 8}, cond), 4, ri, false);
    CHECK(values(out.z) == z);
}

TEST_CASE("zero-initialised head forecasts persistence") {
    const auto spec = gridio::GridSpec::equirectangular(2, 8, 16);
    const auto d = testing::random_dataset(spec, 30, 4);
    ModelConfig cfg;
    ForecastModel m(spec, cfg, 1);
    m.fit_normalizer(d);
    for (std::int64_t dl : {6, 12, 24}) {
        const auto out = m.forward(d.frames[3], dl);
        CHECK(out.x_hat.values == d.frames[3].values);
        CHECK(out.x_hat.timestamp_hours == d.frames[3].timestamp_hours + dl);
        for (double x : out.delta_hat.values) CHECK(x == 0.0);
        CHECK(out.gate_decisions.size() == cfg.num_blocks);
    }
    const std::int64_t one[] = {6};
    const auto r = m.predict_rollout(d.frames[0], one);
    REQUIRE(r.size() == 1);
    CHECK(r[0].values == d.frames[0].values);
}

TEST_CASE("normaliser statistics come from the training split") {
    const auto spec = testing::micro_spec();
    const auto d = testing::random_dataset(spec, 20, 5);
    ForecastModel m(spec, testing::micro_config(), 1);
    m.fit_normalizer(d);
    const std::size_t C = spec.cells();
    for (std::size_t v = 0; v < 2; ++v) {
        double s = 0, n = 0, ds = 0, dn = 0;
        for (std::size_t k = 0; k < d.splits.train_end; ++k)
            for (std::size_t c = 0; c < C; ++c) {
                s += d.frames[k].values[v * C + c];
                ++n;
                if (k + 1 < d.splits.train_end) {
                    const double e = d.frames[k + 1].values[v * C + c] - d.frames[k].values[v * C + c];
                    ds += e * e;
                    ++dn;
                }
            }
        CHECK(m.params().get("norm.mean").value[v] == doctest::Approx(s / n).epsilon(1e-6));
        CHECK(m.params().get("norm.delta_scale").value[v] == doctest::Approx(std::sqrt(ds / dn)).epsilon(1e-6));
        CHECK_FALSE(m.params().get("norm.mean").trainable);
    }
}

TEST_CASE("rollout chaining") {
    const auto spec = gridio::GridSpec::equirectangular(2, 8, 16);
    const auto d = testing::random_dataset(spec, 30, 6);
    ForecastModel m(spec, ModelConfig{}, 2);
    m.fit_normalizer(d);
    std::mt19937_64 rng(43);
    testing::randomize(m.params(), rng, 0.05);
    SUBCASE("two 6h steps equal two chained forwards") {
        const std::int64_t steps[] = {6, 6};
        const auto r = m.predict_rollout(d.frames[2], steps);
        const auto a = m.forward(d.frames[2], 6);
        const auto b = m.forward(a.x_hat, 6);
        REQUIRE(r.size() == 2);
        CHECK(r[0].values == a.x_hat.values);
        CHECK(r[1].values == b.x_hat.values);
        CHECK(r[1].timestamp_hours == d.frames[2].timestamp_hours + 12);
    }
    SUBCASE("trajectory reaching 138h emits seven fields") {
        const std::int64_t steps[] = {6, 12, 24, 24, 24, 24, 24};
        const auto r = m.predict_rollout(d.frames[0], steps, 138);
        REQUIRE(r.size() == 7);
        const std::int64_t expect[] = {6, 18, 42, 66, 90, 114, 138};
        for (std::size_t k = 0; k < 7; ++k) CHECK(r[k].timestamp_hours == expect[k]);
        const std::int64_t over[] = {24, 24, 24, 24, 24, 24};
        CHECK_THROWS(m.predict_rollout(d.frames[0], over, 138));
    }
    SUBCASE("interval conditioning changes the prediction") {
        const auto a = m.forward(d.frames[2], 6), b = m.forward(d.frames[2], 24);
        CHECK(a.delta_hat.values != b.delta_hat.values);
        CHECK_THROWS(m.forward(d.frames[2], 18));
    }
}

TEST_CASE("weighted delta loss") {
    SUBCASE("exact prediction gives zero") {
        Graph g;
        const std::vector<double> t = {1, 2, 3, 4}, w = {1, 1, 1, 1};
        CHECK(weighted_delta_loss(g.constant({1, 4}, t), t, w, 1).item() == 0.0);
    }
    SUBCASE("single cell, unit weight, error two") {
        Graph g;
        const std::vector<double> target = {0.0}, w = {1.0};
        CHECK(weighted_delta_loss(g.constant({1, 1}, std::vector<double>{2.0}), target, w, 1).item() == 4.0);
    }
    SUBCASE("random batch against a triple loop over the grid") {
        const auto spec = gridio::GridSpec::equirectangular(2, 8, 16);
        ModelConfig cfg;
        ForecastModel m(spec, cfg, 1);
        const auto w = metrics::lat_weights(spec, {0.7, 1.3});
        const auto tw = m.token_weights(w);
        std::mt19937_64 rng(44);
        const std::size_t B = 3;
        std::vector<std::vector<double>> pred(B), target(B);
        std::vector<double> pt, tt;
        double ref = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
            pred[b] = testing::random_vector(spec.size(), rng);
            target[b] = testing::random_vector(spec.size(), rng);
            for (std::size_t v = 0; v < 2; ++v)
                for (std::size_t i = 0; i < 8; ++i)
                    for (std::size_t j = 0; j < 16; ++j) {
                        const std::size_t e = (v * 8 + i) * 16 + j;
                        ref += w.var[v] * w.lat[i] * std::pow(pred[b][e] - target[b][e], 2);
                    }
            const auto p = encoding::patchify(spec, 4, pred[b]), t = encoding::patchify(spec, 4, target[b]);
            pt.insert(pt.end(), p.begin(), p.end());
            tt.insert(tt.end(), t.begin(), t.end());
        }
        ref /= static_cast<double>(B * spec.size());
        Graph g;
        const std::size_t L = m.tokens(), F = 2 * 16;
        CHECK(weighted_delta_loss(g.constant({B * L, F}, pt), tt, tw, B).item() == doctest::Approx(ref).epsilon(1e-13));
    }
}

TEST_CASE("end-to-end micro model gradients match finite differences over 20 seeds") {
    // Top-k routing is piecewise: a seed whose selection margin is within reach
    // of the finite-difference step is skipped rather than counted.
    const auto spec = testing::micro_spec();
    const auto d = testing::random_dataset(spec, 40, 7);
    const auto w = metrics::lat_weights(spec);
    std::size_t checked = 0, skipped = 0;
    for (std::uint64_t seed = 0; checked < 20; ++seed) {
        REQUIRE(seed < 60);
        ForecastModel m(spec, testing::micro_config(), 100 + seed);
        m.fit_normalizer(d);
        std::mt19937_64 rng(500 + seed);
        testing::randomize(m.params(), rng, 0.3);
        const auto tw = m.token_weights(w);
        const std::vector<Sample> batch = {{3 + seed % 5, 6}, {11, 12}, {17, 24}};
        if (min_routing_margin(m, d, batch) < 1e-3) {
            ++skipped;
            continue;
        }
        auto loss = [&](Graph& g) { return pretrain_loss(g, m, d, batch, tw, 0.5).total; };
        const auto params = m.trainable_parameters();
        const auto rep = diff::check_gradients(loss, params);
        INFO("seed ", seed, " max rel err ", rep.max_rel_error);
        CHECK(rep.passed);
        CHECK(rep.max_rel_error <= 1e-4);
        ++checked;
    }
    MESSAGE(checked, " seeds checked, ", skipped, " skipped for near-tied routing");
}

TEST_CASE("micro model gradient check also covers the delta term alone") {
    const auto spec = testing::micro_spec();
    const auto d = testing::random_dataset(spec, 40, 8);
    ForecastModel m(spec, testing::micro_config(), 9);
    m.fit_normalizer(d);
    std::mt19937_64 rng(9);
    testing::randomize(m.params(), rng, 0.3);
    const auto tw = m.token_weights(metrics::lat_weights(spec));
    const std::vector<Sample> batch = {{2, 6}, {9, 24}};
    auto loss = [&](Graph& g) { return pretrain_loss(g, m, d, batch, tw, 0.0).l_delta; };
    const auto params = m.trainable_parameters();
    CHECK(diff::check_gradients(loss, params).passed);
}

TEST_CASE("pre-training resumes bit-exactly from a checkpoint") {
    testing::TempDir dir("resume");
    const auto spec = testing::micro_spec();
    const auto d = testing::random_dataset(spec, 60, 10);
    const auto w = metrics::lat_weights(spec);
    PretrainConfig pc;
    pc.steps = 8;
    pc.batch_size = 2;
    pc.warmup_steps = 2;

    ForecastModel a(spec, testing::micro_config(), 3);
    a.fit_normalizer(d);
    Pretrainer ta(a, d, pc, w);
    std::vector<StepStats> sa;
    for (int k = 0; k < 8; ++k) sa.push_back(ta.step());

    ForecastModel b(spec, testing::micro_config(), 3);
    b.fit_normalizer(d);
    {
        Pretrainer tb(b, d, pc, w);
        for (int k = 0; k < 4; ++k) tb.step();
        tb.save(dir / "half.ckpt");
    }
    ForecastModel c(spec, testing::micro_config(), 999);  // different init, overwritten by load
    Pretrainer tc(c, d, pc, w);
    tc.load(dir / "half.ckpt");
    CHECK(tc.steps_done() == 4);
    for (int k = 4; k < 8; ++k) {
        const auto s = tc.step();
        CHECK(s.step == sa[k].step);
        CHECK(s.total == sa[k].total);
        CHECK(s.grad_norm == sa[k].grad_norm);
    }
    for (const auto* p : std::as_const(a.params()).all()) CHECK(c.params().get(p->name).value == p->value);
}

TEST_CASE("learning-rate schedule: linear warmup then cosine to the floor") {
    const auto spec = testing::micro_spec();
    const auto d = testing::random_dataset(spec, 30, 11);
    ForecastModel m(spec, testing::micro_config(), 1);
    PretrainConfig pc;
    pc.steps = 100;
    pc.lr = 1e-3;
    pc.warmup_steps = 10;
    pc.min_lr_fraction = 0.1;
    Pretrainer t(m, d, pc, metrics::lat_weights(spec));
    // 0-based step index
    CHECK(t.lr_at(0) == doctest::Approx(1e-4));
    CHECK(t.lr_at(9) == doctest::Approx(1e-3));
    CHECK(t.lr_at(10) == doctest::Approx(1e-3));
    CHECK(t.lr_at(55) == doctest::Approx(1e-4 + 0.9e-3 * 0.5).epsilon(1e-6));
    CHECK(t.lr_at(100) == doctest::Approx(1e-4));
}

TEST_CASE("batch sampling is deterministic and respects the split") {
    const auto spec = testing::micro_spec();
    const auto d = testing::random_dataset(spec, 100, 12);
    const auto cfg = testing::micro_config();
    const auto a = sample_batch(d, cfg, 5, 17, 16), b = sample_batch(d, cfg, 5, 17, 16);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].frame == b[i].frame);
        CHECK(a[i].delta == b[i].delta);
        CHECK(a[i].frame + static_cast<std::size_t>(a[i].delta / 6) < d.splits.train_end);
    }
    const auto v = sample_batch(d, cfg, 5, 17, 16, gridio::Split::val);
    for (const auto& s : v) {
        CHECK(s.frame >= d.splits.train_end);
        CHECK(s.frame + static_cast<std::size_t>(s.delta / 6) < d.splits.val_end);
    }
}

TEST_CASE("persistence loss equals the mean squared weighted RMSE of the true delta") {
    const auto spec = testing::micro_spec();
    const auto d = testing::random_dataset(spec, 50, 13);
    const auto w = metrics::lat_weights(spec);
    const auto frames = admissible_frames(d, gridio::Split::test, 12);
    double ref = 0.0;
    for (auto k : frames) ref += std::pow(metrics::rmse(d.frames[k], d.frames[k + 2], w), 2);
    ref /= static_cast<double>(frames.size());
    CHECK(persistence_l_delta(d, gridio::Split::test, 12, w) == doctest::Approx(ref).epsilon(1e-12));
    ForecastModel m(spec, testing::micro_config(), 1);
    m.fit_normalizer(d);
    CHECK(evaluate_l_delta(m, d, gridio::Split::test, 12, w) == doctest::Approx(ref).epsilon(1e-12));
}
