#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include <nurdstab/frame.hpp>

using namespace nurdstab;

namespace {

BScan textured(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    BScan f(h, w);
    for (auto& p : f.pixels) p = static_cast<float>(rng.uniform());
    return f;
}

}  // namespace

TEST_CASE("zero warp is the exact identity") {
    const BScan f = textured(16, 7, 1);
    for (Interp interp : {Interp::NearestNeighbor, Interp::Linear}) {
        const BScan out = apply_warp(f, constant_warp(16, 0.0), interp);
        REQUIRE(out.pixels == f.pixels);
    }
}

TEST_CASE("integer warp permutes rows circularly, content moves downward") {
    const int h = 12, w = 5;
    const BScan f = textured(h, w, 2);
    for (int shift : {1, 3, -4, 11, h, h + 3, -h - 2}) {
        for (Interp interp : {Interp::NearestNeighbor, Interp::Linear}) {
            const BScan out = apply_warp(f, constant_warp(h, shift), interp);
            for (int i = 0; i < h; ++i) {
                const int src = wrap_index(i - shift, h);
                for (int x = 0; x < w; ++x) REQUIRE(out.at(i, x) == f.at(src, x));
            }
        }
    }
}

TEST_CASE("linear interpolation at half shift blends circular neighbors") {
    BScan col(4, 1);
    col.at(0, 0) = 0;
    col.at(1, 0) = 1;
    col.at(2, 0) = 2;
    col.at(3, 0) = 3;
    const BScan out = apply_warp(col, constant_warp(4, 0.5), Interp::Linear);
    const double expect[4] = {1.5, 0.5, 1.5, 2.5};
    for (int i = 0; i < 4; ++i) REQUIRE(out.at(i, 0) == Catch::Approx(expect[i]).margin(1e-7));
}

TEST_CASE("nearest neighbor rounds the source position") {
    const BScan f = textured(8, 3, 3);
    const BScan out = apply_warp(f, constant_warp(8, 1.4), Interp::NearestNeighbor);
    for (int i = 0; i < 8; ++i)
        for (int x = 0; x < 3; ++x) REQUIRE(out.at(i, x) == f.at(wrap_index(i - 1, 8), x));
}

TEST_CASE("apply_warp validates its inputs") {
    const BScan f = textured(8, 3, 4);
    REQUIRE_THROWS_AS(apply_warp(f, WarpVector(7, 0.0), Interp::Linear), ContractError);
    WarpVector bad(8, 0.0);
    bad[3] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(apply_warp(f, bad, Interp::Linear), ContractError);
    bad[3] = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(apply_warp(f, bad, Interp::NearestNeighbor), ContractError);
}

TEST_CASE("compose_warps matches sequential application on integer warps") {
    const int h = 16;
    const BScan f = textured(h, 4, 5);
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        WarpVector a(h), b(h);
        for (int i = 0; i < h; ++i) {
            a[i] = static_cast<double>(rng.uniform_int(2 * h + 1)) - h;
            b[i] = static_cast<double>(rng.uniform_int(2 * h + 1)) - h;
        }
        const WarpVector c = compose_warps(a, b);
        for (Interp interp : {Interp::NearestNeighbor, Interp::Linear}) {
            const BScan two_step = apply_warp(apply_warp(f, a, interp), b, interp);
            const BScan one_step = apply_warp(f, c, interp);
            REQUIRE(one_step.pixels == two_step.pixels);
        }
    }
}

TEST_CASE("compose_warps with fractional first warp still matches when second is integral") {
    const int h = 12;
    const BScan f = textured(h, 3, 6);
    Rng rng(7);
    WarpVector a(h), b(h);
    for (int i = 0; i < h; ++i) {
        a[i] = rng.uniform(-3.0, 3.0);
        b[i] = static_cast<double>(rng.uniform_int(7)) - 3;
    }
    const BScan two_step = apply_warp(apply_warp(f, a, Interp::Linear), b, Interp::Linear);
    const BScan one_step = apply_warp(f, compose_warps(a, b), Interp::Linear);
    for (std::size_t i = 0; i < f.pixels.size(); ++i)
        REQUIRE(one_step.pixels[i] == Catch::Approx(two_step.pixels[i]).margin(1e-6));
}

TEST_CASE("sample_warp wraps circularly") {
    WarpVector w{10.0, 20.0, 30.0};
    REQUIRE(sample_warp(w, 0.0) == 10.0);
    REQUIRE(sample_warp(w, 2.5) == Catch::Approx(20.0));   // halfway between w[2] and w[0]
    REQUIRE(sample_warp(w, -0.5) == Catch::Approx(20.0));  // halfway between w[2] and w[0]
    REQUIRE(sample_warp(w, 3.0) == 10.0);
}

TEST_CASE("rng streams are deterministic and forks are independent") {
    Rng a(1234), b(1234);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.bits() == b.bits());
    Rng base(42);
    Rng f1 = base.fork(0), f2 = base.fork(1);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += (f1.bits() == f2.bits());
    REQUIRE(same == 0);
    // normals have roughly unit scale
    Rng n(7);
    double acc = 0, acc2 = 0;
    const int trials = 20000;
    for (int i = 0; i < trials; ++i) {
        double v = n.normal();
        acc += v;
        acc2 += v * v;
    }
    REQUIRE(std::abs(acc / trials) < 0.05);
    REQUIRE(acc2 / trials == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("uniform_int stays in range and covers it") {
    Rng rng(5);
    std::vector<int> seen(10, 0);
    for (int i = 0; i < 5000; ++i) {
        auto v = rng.uniform_int(10);
        REQUIRE(v < 10);
        ++seen[static_cast<std::size_t>(v)];
    }
    for (int c : seen) REQUIRE(c > 300);
}

TEST_CASE("parallel_for covers the index range exactly once") {
    std::vector<int> hits(1000, 0);
    parallel_for(1000, [&](long long b, long long e) {
        for (long long i = b; i < e; ++i) ++hits[static_cast<std::size_t>(i)];
    });
    for (int v : hits) REQUIRE(v == 1);
    parallel_for(0, [&](long long, long long) { FAIL("body must not run for empty range"); });
}
