#include <cmath>
#include <numbers>

#include "doctest.h"

#include "rollcast/encoding.hpp"
#include "support.hpp"

using namespace rollcast;
using namespace rollcast::encoding;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::size_t circ(std::size_t a, std::size_t b, std::size_t w) {
    const std::size_t d = a > b ? a - b : b - a;
    return std::min(d, w - d);
}

}  // namespace

TEST_CASE("patchify / unpatchify round-trip and feature order") {
    const auto spec = gridio::GridSpec::equirectangular(2, 8, 12);
    std::mt19937_64 rng(1);
    const auto x = testing::random_vector(spec.size(), rng);
    const auto tok = patchify(spec, 4, x);
    REQUIRE(tok.size() == x.size());
    CHECK(unpatchify(spec, 4, tok) == x);
    // token (1, 2), feature (v=1, pi=3, pj=0) is grid cell (v=1, 7, 8)
    const std::size_t token = 1 * 3 + 2, feat = (1 * 4 + 3) * 4 + 0;
    CHECK(tok[token * 32 + feat] == x[(1 * 8 + 7) * 12 + 8]);
}

TEST_CASE("tokenizer") {
    const auto spec = gridio::GridSpec::equirectangular(2, 4, 8);
    const std::size_t P = 2, D = 8, pd = 2 * P * P, L = 8;
    std::mt19937_64 rng(2);
    diff::Graph g;
    SUBCASE("zero field and zero bias give zero tokens") {
        auto z = tokenize(g.constant({L, pd}, patchify(spec, P, std::vector<double>(spec.size(), 0.0))),
                          g.constant({pd, D}, testing::random_vector(pd * D, rng)), g.zeros({1, D}));
        for (double v : z.value()) CHECK(v == 0.0);
    }
    SUBCASE("one-hot field lights exactly one token") {
        std::vector<double> x(spec.size(), 0.0);
        x[(1 * 4 + 3) * 8 + 5] = 1.0;  // v=1, lat 3, lon 5 -> token (1, 2)
        std::vector<double> w(pd * D, 0.0);
        for (std::size_t k = 0; k < pd; ++k) w[k * D + k % D] = 1.0;
        auto z = tokenize(g.constant({L, pd}, patchify(spec, P, x)), g.constant({pd, D}, w), g.zeros({1, D}));
        for (std::size_t t = 0; t < L; ++t) {
            double norm = 0.0;
            for (std::size_t d = 0; d < D; ++d) norm += std::abs(z.value()[t * D + d]);
            CHECK((norm > 0.0) == (t == 1 * 4 + 2));
        }
    }
    SUBCASE("random field matches per-patch products") {
        const auto x = testing::random_vector(spec.size(), rng);
        const auto w = testing::random_vector(pd * D, rng);
        const auto b = testing::random_vector(D, rng);
        auto z = tokenize(g.constant({L, pd}, patchify(spec, P, x)), g.constant({pd, D}, w), g.constant({1, D}, b));
        for (std::size_t th = 0; th < 2; ++th)
            for (std::size_t tw = 0; tw < 4; ++tw)
                for (std::size_t d = 0; d < D; ++d) {
                    double s = b[d];
                    std::size_t f = 0;
                    for (std::size_t v = 0; v < 2; ++v)
                        for (std::size_t pi = 0; pi < P; ++pi)
                            for (std::size_t pj = 0; pj < P; ++pj, ++f)
                                s += x[(v * 4 + th * P + pi) * 8 + tw * P + pj] * w[f * D + d];
                    CHECK(z.value()[(th * 4 + tw) * D + d] == doctest::Approx(s).epsilon(1e-13));
                }
    }
    SUBCASE("validation") {
        CHECK_THROWS_AS((TokenizerConfig{3, 8}.validate(spec)), std::invalid_argument);
        CHECK_THROWS_AS((TokenizerConfig{2, 6}.validate(spec)), std::invalid_argument);
        CHECK_NOTHROW((TokenizerConfig{2, 8}.validate(spec)));
    }
}

TEST_CASE("ring encoding: longitude similarity depends only on circular distance") {
    for (std::size_t w : {8, 16, 32}) {
        for (std::size_t dim : {16, 64}) {
            const std::size_t h = 4;
            const auto t = ring_pe_2d(h, w, dim);
            for (std::size_t r = 0; r < h; ++r) {
                std::vector<double> by_distance(w / 2 + 1, std::nan(""));
                for (std::size_t a = 0; a < w; ++a)
                    for (std::size_t b = 0; b < w; ++b) {
                        const double s = dot(t.row(r * w + a), t.row(r * w + b));
                        auto& ref = by_distance[circ(a, b, w)];
                        if (std::isnan(ref)) ref = s;
                        CHECK(std::abs(s - ref) <= 1e-9);
                    }
            }
            const auto one = ring_pe_1d(w, dim);
            const auto sim = similarity_matrix(one);
            for (std::size_t a = 0; a < w; ++a)
                for (std::size_t b = 0; b < w; ++b)
                    CHECK(std::abs(sim[a * w + b] - sim[0 * w + circ(a, b, w)]) <= 1e-9);
        }
    }
}

TEST_CASE("ring encoding: self-similarity constant along a row, value layout") {
    const auto t = ring_pe_2d(2, 8, 16);
    for (std::size_t a = 1; a < 8; ++a)
        CHECK(dot(t.row(a), t.row(a)) == doctest::Approx(dot(t.row(0), t.row(0))).epsilon(1e-12));
    // frequency 1, column 2 of row 1: sin/cos(2/8 2pi) * 8/4, sin/cos(1/8 2pi) * 8/4
    const std::size_t k = 1 * 8 + 2;
    CHECK(t.at(k, 0) == doctest::Approx(std::sin(0.5 * std::numbers::pi) * 2.0));
    CHECK(t.at(k, 1) == doctest::Approx(std::cos(0.5 * std::numbers::pi) * 2.0));
    CHECK(t.at(k, 2) == doctest::Approx(std::sin(0.25 * std::numbers::pi) * 2.0));
    CHECK(t.at(k, 3) == doctest::Approx(std::cos(0.25 * std::numbers::pi) * 2.0));
}

TEST_CASE("ring vs conventional endpoint contrast") {
    for (std::size_t w : {8, 16, 32}) {
        const auto ring = similarity_matrix(ring_pe_1d(w, 32));
        const auto conv = similarity_matrix(conventional_pe(w, 32));
        CHECK(ring[w - 1] >= ring[2]);
        CHECK(ring[w - 1] == doctest::Approx(ring[1]).epsilon(1e-12));
        CHECK(conv[w - 1] < conv[1]);
    }
}

TEST_CASE("conventional encoding") {
    const auto t = conventional_pe(32, 16);
    for (std::size_t d = 0; d < 16; ++d) CHECK(t.at(0, d) == (d % 2 == 0 ? 0.0 : 1.0));
    CHECK(conventional_pe(32, 16).table == t.table);
    CHECK(t.at(3, 4) == doctest::Approx(std::sin(3.0 * std::pow(10000.0, -4.0 / 16))));
    // similarity decays monotonically over the first few offsets from the diagonal
    const auto sim = similarity_matrix(t);
    for (std::size_t a = 0; a < 32; ++a)
        for (std::size_t off = 1; off < 4 && a + off < 32; ++off)
            CHECK(sim[a * 32 + a + off] < sim[a * 32 + a + off - 1]);
}

TEST_CASE("positional tables are added per token") {
    diff::Graph g;
    const auto t = ring_pe_2d(2, 4, 8);
    auto z = add_positional(g.zeros({8, 8}), t);
    for (std::size_t i = 0; i < t.table.size(); ++i) CHECK(z.value()[i] == t.table[i]);
}

TEST_CASE("interval embedding lookup") {
    diff::ParameterStore store;
    std::mt19937_64 rng(3);
    IntervalEmbedding emb(store, "iv", {6, 12, 24}, 4, rng);
    CHECK(emb.index_of(12) == 1);
    CHECK_THROWS(emb.index_of(18));
    diff::Graph g;
    const std::int64_t ds[] = {24, 6, 24};
    auto rows = emb.lookup(g, ds);
    CHECK(rows.shape() == diff::Shape{3, 4});
    for (std::size_t d = 0; d < 4; ++d) {
        CHECK(rows.value()[d] == emb.table().value[2 * 4 + d]);
        CHECK(rows.value()[4 + d] == emb.table().value[d]);
    }
}

TEST_CASE("temporal features") {
    const auto f = TemporalEmbedding::features({30, 24, 114, 138}, 24.0);
    REQUIRE(f.size() == TemporalEmbedding::kFeatures);
    CHECK(f[4] == doctest::Approx(1.0));
    CHECK(f[5] == doctest::Approx(114.0 / 24));
    CHECK(f[6] == doctest::Approx(138.0 / 24));
    CHECK_THROWS_AS(TemporalEmbedding::features({0, 6, 6, 24}, 24.0), std::invalid_argument);
    CHECK_THROWS_AS(TemporalEmbedding::features({0, -6, 30, 24}, 24.0), std::invalid_argument);
}
