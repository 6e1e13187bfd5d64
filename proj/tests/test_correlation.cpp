#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <nurdstab/correlation.hpp>

using namespace nurdstab;

namespace {

// Noise smoothed along the angular axis so patches decorrelate gradually with
// shift instead of instantly; makes ridge locations unambiguous.
BScan smooth_texture(int h, int w, std::uint64_t seed, int passes = 2) {
    Rng rng(seed);
    BScan f(h, w);
    for (auto& p : f.pixels) p = static_cast<float>(rng.uniform());
    for (int pass = 0; pass < passes; ++pass) {
        BScan g = f;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                g.at(y, x) = (f.at(wrap_index(y - 1, h), x) + f.at(y, x) + f.at(wrap_index(y + 1, h), x)) / 3.0f;
        f = g;
    }
    return f;
}

int row_argmax(const CorrelationMap& m, int y) {
    int best = 0;
    for (int c = 1; c < m.width; ++c)
        if (m.at(y, c) > m.at(y, best)) best = c;
    return best;
}

}  // namespace

TEST_CASE("pearson matches a hand-computed value") {
    const std::vector<double> a{1, 2, 4}, b{2, 2, 5};
    // mean-centered: cov = 5, var_a = 14/3, var_b = 6 -> 5 / (2*sqrt(7))
    REQUIRE(pearson(a, b) == Catch::Approx(0.9449111825230680).epsilon(1e-14));
}

TEST_CASE("pearson is symmetric and bounded") {
    Rng rng(21);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(40), b(40);
        for (int i = 0; i < 40; ++i) {
            a[i] = rng.normal();
            b[i] = rng.normal();
        }
        const double ab = pearson(a, b), ba = pearson(b, a);
        REQUIRE(std::abs(ab - ba) < 1e-12);
        REQUIRE(ab <= 1.0);
        REQUIRE(ab >= -1.0);
    }
}

TEST_CASE("pearson is invariant to positive affine rescale and flips under negation") {
    Rng rng(22);
    std::vector<double> a(25), b(25);
    for (int i = 0; i < 25; ++i) {
        a[i] = rng.uniform();
        b[i] = rng.uniform();
    }
    const double base = pearson(a, b);
    std::vector<double> a2(25), a3(25);
    for (int i = 0; i < 25; ++i) {
        a2[i] = 3.7 * a[i] + 11.0;
        a3[i] = -2.0 * a[i] + 0.5;
    }
    REQUIRE(pearson(a2, b) == Catch::Approx(base).margin(1e-9));
    REQUIRE(pearson(a3, b) == Catch::Approx(-base).margin(1e-9));
    REQUIRE(pearson(a, a) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("pearson reports the degenerate value for flat patches") {
    const std::vector<double> flat(10, 0.4), varied{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    REQUIRE(pearson(flat, varied, 0.0) == 0.0);
    REQUIRE(pearson(varied, flat, -2.0) == -2.0);
    REQUIRE(pearson(flat, flat, -2.0) == -2.0);
}

TEST_CASE("pearson validates inputs") {
    REQUIRE_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), ContractError);
    REQUIRE_THROWS_AS(pearson(std::vector<double>{}, std::vector<double>{}), ContractError);
    REQUIRE_THROWS_AS(pearson(std::vector<double>{1, std::nan("")}, std::vector<double>{1, 2}), ContractError);
}

TEST_CASE("self correlation map has an exact unit ridge at the center column") {
    const BScan f = smooth_texture(64, 24, 30);
    CorrelationConfig cfg;
    cfg.window_width = 16;
    const CorrelationMap m = correlation_map(f, f, cfg);
    REQUIRE(m.height == 64);
    REQUIRE(m.width == 16);
    for (int y = 0; y < m.height; ++y) {
        REQUIRE(m.at(y, m.center()) == 1.0);
        REQUIRE(row_argmax(m, y) == m.center());
    }
}

TEST_CASE("a circular shift of the reference moves every row argmax by the shift") {
    const BScan f = smooth_texture(96, 20, 31);
    CorrelationConfig cfg;
    cfg.window_width = 24;
    for (int s : {3, -5, 9}) {
        const BScan ref = apply_warp(f, constant_warp(96, s), Interp::Linear);
        const CorrelationMap m = correlation_map(f, ref, cfg);
        for (int y = 0; y < m.height; ++y) REQUIRE(row_argmax(m, y) == m.center() + s);
    }
}

TEST_CASE("map entries agree with the direct pearson definition") {
    const BScan f = smooth_texture(32, 12, 32);
    const BScan r = smooth_texture(32, 12, 33);
    CorrelationConfig cfg;
    cfg.patch_height = 3;
    cfg.window_width = 8;
    const CorrelationMap m = correlation_map(f, r, cfg);
    for (int y = 0; y < 32; y += 5) {
        for (int c = 0; c < 8; ++c) {
            const int d = c - 4;
            std::vector<double> pa, pb;
            for (int dy = -1; dy <= 1; ++dy)
                for (int x = 0; x < 12; ++x) {
                    pa.push_back(f.at(wrap_index(y + dy, 32), x));
                    pb.push_back(r.at(wrap_index(y + d + dy, 32), x));
                }
            REQUIRE(m.at(y, c) == Catch::Approx(pearson(pa, pb)).margin(1e-10));
        }
    }
}

TEST_CASE("featureless rows yield the configured degenerate value") {
    BScan f = smooth_texture(64, 10, 34);
    BScan r = smooth_texture(64, 10, 35);
    for (int y = 20; y < 30; ++y)
        for (int x = 0; x < 10; ++x) {
            f.at(y, x) = 0.5f;
            r.at(y, x) = 0.25f;
        }
    CorrelationConfig cfg;
    cfg.patch_height = 3;
    cfg.window_width = 4;
    cfg.degenerate_value = -0.125;
    const CorrelationMap m = correlation_map(f, r, cfg);
    // rows whose whole patch lies inside the flat band are degenerate on both sides
    for (int y = 22; y < 28; ++y)
        REQUIRE(m.at(y, m.center()) == -0.125);
    // far away everything is live
    REQUIRE(m.at(0, m.center()) != -0.125);
}

TEST_CASE("depth crop restricts matching to the configured band") {
    BScan f = smooth_texture(48, 16, 36);
    BScan r = smooth_texture(48, 16, 37);
    // poison the columns outside the crop; they must never be touched
    for (int y = 0; y < 48; ++y)
        for (int x : {0, 1, 14, 15}) {
            f.at(y, x) = std::numeric_limits<float>::quiet_NaN();
            r.at(y, x) = std::numeric_limits<float>::quiet_NaN();
        }
    CorrelationConfig cfg;
    cfg.window_width = 8;
    cfg.crop_begin = 2;
    cfg.crop_end = 14;
    const CorrelationMap m = correlation_map(f, r, cfg);
    for (double v : m.values) REQUIRE(std::isfinite(v));
}

TEST_CASE("correlation_map validates its configuration") {
    const BScan f = smooth_texture(32, 8, 38);
    const BScan small(16, 8);
    CorrelationConfig cfg;
    cfg.window_width = 8;
    REQUIRE_THROWS_AS(correlation_map(f, small, cfg), ContractError);
    CorrelationConfig bad = cfg;
    bad.patch_height = 4;
    REQUIRE_THROWS_AS(correlation_map(f, f, bad), ContractError);
    bad = cfg;
    bad.window_width = 7;
    REQUIRE_THROWS_AS(correlation_map(f, f, bad), ContractError);
    bad = cfg;
    bad.window_width = 64;  // exceeds height 32
    REQUIRE_THROWS_AS(correlation_map(f, f, bad), ContractError);
    bad = cfg;
    bad.crop_begin = 6;
    bad.crop_end = 6;
    REQUIRE_THROWS_AS(correlation_map(f, f, bad), ContractError);
    bad = cfg;
    bad.crop_end = 9;
    REQUIRE_THROWS_AS(correlation_map(f, f, bad), ContractError);
}
