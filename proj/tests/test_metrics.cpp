#include <cmath>
#include <numbers>

#include "doctest.h"

#include "rollcast/metrics.hpp"
#include "support.hpp"

using namespace rollcast;
using namespace rollcast::metrics;

namespace {

gridio::GridSpec spec_with_lats(std::vector<double> lats, std::size_t v = 1, std::size_t w = 1) {
    gridio::GridSpec s;
    s.num_vars = v;
    s.lat_points = lats.size();
    s.lon_points = w;
    s.lat_degrees = std::move(lats);
    return s;
}

double oracle_rmse(const std::vector<double>& p, const std::vector<double>& t, const gridio::GridSpec& s,
                   const std::vector<double>& wv) {
    double cs = 0.0;
    for (double lat : s.lat_degrees) cs += std::cos(lat * std::numbers::pi / 180.0);
    double total = 0.0;
    for (std::size_t v = 0; v < s.num_vars; ++v)
        for (std::size_t i = 0; i < s.lat_points; ++i) {
            const double L = std::cos(s.lat_degrees[i] * std::numbers::pi / 180.0) * s.lat_points / cs;
            for (std::size_t j = 0; j < s.lon_points; ++j) {
                const std::size_t e = (v * s.lat_points + i) * s.lon_points + j;
                total += wv[v] * L * (p[e] - t[e]) * (p[e] - t[e]);
            }
        }
    return std::sqrt(total / static_cast<double>(s.num_vars * s.lat_points * s.lon_points));
}

double oracle_acc(const std::vector<double>& p, const std::vector<double>& t, const std::vector<double>& c,
                  const gridio::GridSpec& s, std::size_t v) {
    double cs = 0.0;
    for (double lat : s.lat_degrees) cs += std::cos(lat * std::numbers::pi / 180.0);
    double num = 0.0, a2 = 0.0, b2 = 0.0;
    for (std::size_t i = 0; i < s.lat_points; ++i) {
        const double L = std::cos(s.lat_degrees[i] * std::numbers::pi / 180.0) * s.lat_points / cs;
        for (std::size_t j = 0; j < s.lon_points; ++j) {
            const std::size_t e = (v * s.lat_points + i) * s.lon_points + j;
            num += L * (p[e] - c[e]) * (t[e] - c[e]);
            a2 += L * (p[e] - c[e]) * (p[e] - c[e]);
            b2 += L * (t[e] - c[e]) * (t[e] - c[e]);
        }
    }
    return num / std::sqrt(a2 * b2);
}

}  // namespace

TEST_CASE("latitude weights") {
    CHECK(lat_weights(spec_with_lats({0, 0, 0})).lat == std::vector<double>{1, 1, 1});
    const auto w = lat_weights(spec_with_lats({60, 0}));
    CHECK(w.lat[0] == doctest::Approx(2.0 / 3).epsilon(1e-14));
    CHECK(w.lat[1] == doctest::Approx(4.0 / 3).epsilon(1e-14));
    for (std::size_t h : {2, 7, 16, 33}) {
        const auto s = gridio::GridSpec::equirectangular(2, h, 4);
        const auto lw = lat_weights(s);
        double m = 0.0;
        for (double x : lw.lat) m += x;
        CHECK(std::abs(m / static_cast<double>(h) - 1.0) <= 1e-12);
        CHECK(lw.var == std::vector<double>{1, 1});
    }
    CHECK_THROWS(lat_weights(gridio::GridSpec::equirectangular(2, 4, 4), {1.0}));
    CHECK_THROWS(lat_weights(gridio::GridSpec::equirectangular(2, 4, 4), {1.0, 0.0}));
}

TEST_CASE("rmse") {
    SUBCASE("trivial cases") {
        const auto s = spec_with_lats({0});
        const auto w = lat_weights(s);
        CHECK(rmse(std::vector<double>{4.0}, std::vector<double>{1.0}, s, w) == 3.0);
        CHECK(rmse(std::vector<double>{4.0}, std::vector<double>{4.0}, s, w) == 0.0);
        CHECK_THROWS(rmse(std::vector<double>{4.0, 1.0}, std::vector<double>{4.0}, s, w));
    }
    SUBCASE("triple-loop oracle on 100 random instances") {
        std::mt19937_64 rng(31);
        for (int rep = 0; rep < 100; ++rep) {
            const auto s = gridio::GridSpec::equirectangular(2, 4, 8);
            const std::vector<double> wv = {0.5 + rep % 3, 1.0};
            const auto w = lat_weights(s, wv);
            const auto p = testing::random_vector(s.size(), rng, -3, 3), t = testing::random_vector(s.size(), rng, -3, 3);
            const double got = rmse(p, t, s, w);
            CHECK(std::abs(got - oracle_rmse(p, t, s, wv)) <= 1e-12);
            CHECK(got == rmse(t, p, s, w));
            CHECK(rmse(p, p, s, w) == 0.0);
        }
    }
}

TEST_CASE("acc") {
    std::mt19937_64 rng(32);
    const auto s = gridio::GridSpec::equirectangular(2, 4, 8);
    const auto w = lat_weights(s);
    SUBCASE("perfect and anti-correlated anomalies") {
        const auto t = testing::random_vector(s.size(), rng), c = testing::random_vector(s.size(), rng);
        std::vector<double> neg(s.size());
        for (std::size_t e = 0; e < s.size(); ++e) neg[e] = 2 * c[e] - t[e];
        for (std::size_t v = 0; v < 2; ++v) {
            CHECK(acc_variable(t, t, c, s, w, v) == doctest::Approx(1.0).epsilon(1e-15));
            CHECK(acc_variable(neg, t, c, s, w, v) == doctest::Approx(-1.0).epsilon(1e-15));
        }
    }
    SUBCASE("direct formula on 100 random instances") {
        for (int rep = 0; rep < 100; ++rep) {
            const auto p = testing::random_vector(s.size(), rng), t = testing::random_vector(s.size(), rng),
                       c = testing::random_vector(s.size(), rng);
            for (std::size_t v = 0; v < 2; ++v) {
                const double a = acc_variable(p, t, c, s, w, v);
                CHECK(std::abs(a - oracle_acc(p, t, c, s, v)) <= 1e-12);
                CHECK(a >= -1.0);
                CHECK(a <= 1.0);
            }
        }
    }
}

TEST_CASE("climatology from the training split") {
    const auto s = gridio::GridSpec::equirectangular(1, 2, 2);
    auto d = testing::random_dataset(s, 40, 3);  // 10 days, train = first 28 frames
    const auto c = Climatology::from_training(d, 30);
    // every training frame shares bin 0; hour 6 frames are indices 1, 5, ..., 25
    std::vector<double> mean(4, 0.0);
    int n = 0;
    for (std::size_t k = 1; k < 28; k += 4, ++n)
        for (std::size_t e = 0; e < 4; ++e) mean[e] += d.frames[k].values[e];
    const auto& got = c.lookup(6);
    for (std::size_t e = 0; e < 4; ++e) CHECK(got[e] == doctest::Approx(mean[e] / n).epsilon(1e-14));
    CHECK(c.has(24 * 9 + 6));
    CHECK_FALSE(c.has(24 * 200));
    CHECK_THROWS_AS(c.lookup(24 * 200), ClimatologyError);

    gridio::GridField p(d.spec, 6), t(d.spec, 6);
    t.values = d.frames[37].values;
    p.values = t.values;
    CHECK(acc(p, t, c, lat_weights(s)) == doctest::Approx(1.0));
}

TEST_CASE("rewards and returns") {
    const auto s = std::make_shared<const gridio::GridSpec>(gridio::GridSpec::equirectangular(1, 2, 2));
    const auto w = lat_weights(*s);
    gridio::GridField a(s, 0), b(s, 0);
    a.values = {1, 2, 3, 4};
    b.values = a.values;
    CHECK(step_reward(a, b, w, -0.1) == -0.1);
    const std::vector<double> r(3, step_reward(a, b, w, -0.1));
    CHECK(trajectory_return(r) == doctest::Approx(-0.3).epsilon(1e-15));
    b.values = {2, 2, 3, 5};
    const double e = oracle_rmse(a.values, b.values, *s, {1.0});
    CHECK(step_reward(a, b, w, -0.05) == doctest::Approx(-e - 0.05).epsilon(1e-15));
    const std::vector<double> mixed = {-0.2, step_reward(a, b, w, -0.05), -0.1};
    CHECK(trajectory_return(mixed) == doctest::Approx(-0.3 - e - 0.05).epsilon(1e-15));
}

TEST_CASE("series helpers average per-time values") {
    const auto s = std::make_shared<const gridio::GridSpec>(gridio::GridSpec::equirectangular(1, 2, 2));
    const auto w = lat_weights(*s);
    std::vector<gridio::GridField> p(2, gridio::GridField(s, 0)), t(2, gridio::GridField(s, 0));
    p[0].values = {1, 1, 1, 1};
    p[1].values = {2, 2, 2, 2};
    CHECK(rmse_series(p, t, w) == doctest::Approx(1.5));
    CHECK_THROWS(rmse_series(std::span(p).first(1), t, w));
}
