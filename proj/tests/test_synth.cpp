#include <catch2/catch_amalgamated.hpp>

#include <nurdstab/graph_search.hpp>
#include <nurdstab/synth.hpp>

#include <cmath>
#include <set>
#include <vector>

using namespace nurdstab;

namespace {

double psnr(const BScan& a, const BScan& b) {
    REQUIRE(a.pixels.size() == b.pixels.size());
    double mse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.pixels.size());
    return mse == 0.0 ? 99.0 : 10.0 * std::log10(1.0 / mse);
}

double pearson(const BScan& a, const BScan& b) {
    const std::size_t n = a.pixels.size();
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a.pixels[i];
        mb += b.pixels[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a.pixels[i] - ma, db = b.pixels[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    return cov / std::sqrt(va * vb);
}

double roughness(const WarpVector& w) {
    double acc = 0.0;
    const std::size_t h = w.size();
    for (std::size_t i = 0; i < h; ++i) {
        const double d = w[(i + 1) % h] - w[i];
        acc += d * d;
    }
    return acc / static_cast<double>(h);
}

}  // namespace

TEST_CASE("expand_range widens the larger magnitude by a third") {
    REQUIRE(expand_range(-3.0, 3.0) == 4.0);
    REQUIRE(expand_range(-6.0, 3.0) == 8.0);
    REQUIRE(expand_range(0.0, 0.0) == 0.0);
    REQUIRE(expand_range(-1.5, 0.75) == 2.0);
}

TEST_CASE("generated warps peak exactly at the amplitude and repeat per seed") {
    SynthConfig cfg;
    cfg.amplitude = 5.0;
    cfg.smoothness = 8.0;
    Rng r1(42), r2(42), r3(43);
    const WarpVector a = generate_warp(512, cfg, r1);
    const WarpVector b = generate_warp(512, cfg, r2);
    const WarpVector c = generate_warp(512, cfg, r3);
    REQUIRE(a == b);
    REQUIRE(a != c);

    double peak = 0.0;
    for (double v : a) peak = std::max(peak, std::abs(v));
    REQUIRE(peak == Catch::Approx(5.0).margin(1e-9));
}

TEST_CASE("drift shifts the whole warp by a constant") {
    SynthConfig flat;
    flat.amplitude = 3.0;
    SynthConfig drifted = flat;
    drifted.drift_per_frame = 1.75;
    Rng r1(7), r2(7);
    const WarpVector a = generate_warp(256, flat, r1);
    const WarpVector b = generate_warp(256, drifted, r2);
    for (std::size_t i = 0; i < a.size(); ++i)
        REQUIRE(b[i] - a[i] == Catch::Approx(1.75).margin(1e-12));

    SynthConfig pure;
    pure.amplitude = 0.0;
    pure.drift_per_frame = -2.5;
    Rng r3(7);
    for (double v : generate_warp(256, pure, r3)) REQUIRE(v == -2.5);
}

TEST_CASE("generate_warp rejects invalid configurations") {
    Rng rng(1);
    SynthConfig bad;
    bad.amplitude = -1.0;
    REQUIRE_THROWS_AS(generate_warp(64, bad, rng), ContractError);
    bad.amplitude = 1.0;
    bad.smoothness = 0.5;
    REQUIRE_THROWS_AS(generate_warp(64, bad, rng), ContractError);
    bad.smoothness = 8.0;
    REQUIRE_THROWS_AS(generate_warp(0, bad, rng), ContractError);
}

TEST_CASE("smoothness controls the roughness of the warp") {
    SynthConfig rough_cfg, smooth_cfg;
    rough_cfg.amplitude = smooth_cfg.amplitude = 5.0;
    rough_cfg.smoothness = 5.0;
    smooth_cfg.smoothness = 50.0;
    double rough_sum = 0.0, smooth_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng r1(seed), r2(seed);
        rough_sum += roughness(generate_warp(512, rough_cfg, r1));
        smooth_sum += roughness(generate_warp(512, smooth_cfg, r2));
    }
    REQUIRE(smooth_sum < 0.2 * rough_sum);
}

TEST_CASE("zero-amplitude distortion with no augmentations is the identity") {
    PhantomConfig pc;
    pc.height = 64;
    pc.width = 160;
    pc.frames = 3;
    pc.seed = 5;
    const FrameStream source = make_phantom_stream(pc);

    SynthConfig cfg;  // amplitude 0, drift 0, all augmentations off
    const FrameStream out = distort_stream(source, cfg);
    REQUIRE(out.frames.size() == source.frames.size());
    REQUIRE(out.scan_mode == source.scan_mode);
    for (std::size_t k = 0; k < out.frames.size(); ++k) {
        REQUIRE(out.frames[k].pixels == source.frames[k].pixels);
        for (double v : out.ground_truth_warps[k]) REQUIRE(v == 0.0);
    }
}

TEST_CASE("injected drift accumulates frame by frame") {
    PhantomConfig pc;
    pc.height = 64;
    pc.width = 160;
    pc.frames = 6;
    pc.seed = 9;
    const FrameStream source = make_phantom_stream(pc);

    SynthConfig cfg;
    cfg.amplitude = 0.0;
    cfg.drift_per_frame = 0.5;
    const FrameStream out = distort_stream(source, cfg);
    for (std::size_t k = 0; k < out.frames.size(); ++k) {
        for (double v : out.ground_truth_warps[k]) REQUIRE(v == 0.5 * static_cast<double>(k));
        const BScan expect =
            apply_warp(source.frames[k], constant_warp(64, 0.5 * static_cast<double>(k)),
                       Interp::Linear);
        REQUIRE(out.frames[k].pixels == expect.pixels);
        REQUIRE(out.frames[k].frame_index == static_cast<long>(k));
    }
}

TEST_CASE("distortion is reproducible and augmentations stay in range") {
    PhantomConfig pc;
    pc.height = 64;
    pc.width = 160;
    pc.frames = 4;
    pc.seed = 3;
    const FrameStream source = make_phantom_stream(pc);

    SynthConfig cfg;
    cfg.amplitude = 3.0;
    cfg.smoothness = 10.0;
    cfg.drift_per_frame = 0.1;
    cfg.seed = 77;
    cfg.augment.geometric = cfg.augment.noise = cfg.augment.brightness_contrast =
        cfg.augment.speckle = cfg.augment.shadow = true;

    const FrameStream a = distort_stream(source, cfg);
    const FrameStream b = distort_stream(source, cfg);
    for (std::size_t k = 0; k < a.frames.size(); ++k) {
        REQUIRE(a.frames[k].pixels == b.frames[k].pixels);
        REQUIRE(a.ground_truth_warps[k] == b.ground_truth_warps[k]);
        for (float v : a.frames[k].pixels) {
            REQUIRE(std::isfinite(v));
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }

    SynthConfig plain = cfg;
    plain.augment = {};
    const FrameStream c = distort_stream(source, plain);
    REQUIRE(a.frames[0].pixels != c.frames[0].pixels);   // augmentations did something
    REQUIRE(a.ground_truth_warps == c.ground_truth_warps);  // but never touch the truth

    REQUIRE_THROWS_AS(distort_stream(FrameStream{}, cfg), ContractError);
}

TEST_CASE("inverting a constant warp negates it exactly") {
    const WarpVector inv = invert_warp(constant_warp(64, 7.0));
    for (double v : inv) REQUIRE(v == -7.0);

    PhantomConfig pc;
    pc.height = 64;
    pc.width = 160;
    pc.frames = 1;
    const FrameStream stream = make_phantom_stream(pc);
    const BScan& src = stream.frames[0];
    const BScan zig = apply_warp(src, constant_warp(64, 7.0), Interp::Linear);
    const BScan back = apply_warp(zig, inv, Interp::Linear);
    REQUIRE(back.pixels == src.pixels);  // integer warps hit the exact-copy path
}

TEST_CASE("recovering with the exact inverse warp restores the source") {
    PhantomConfig pc;
    pc.height = 512;
    pc.width = 256;
    pc.frames = 4;
    pc.seed = 11;
    const FrameStream source = make_phantom_stream(pc);

    SynthConfig cfg;
    cfg.amplitude = 6.0;
    cfg.smoothness = 30.0;
    cfg.drift_per_frame = 0.25;
    cfg.seed = 4;
    const FrameStream out = distort_stream(source, cfg);

    for (std::size_t k = 0; k < out.frames.size(); ++k) {
        const WarpVector inv = invert_warp(out.ground_truth_warps[k]);
        const BScan recovered = apply_warp(out.frames[k], inv, Interp::Linear);
        INFO("frame " << k << " psnr " << psnr(recovered, source.frames[k]));
        REQUIRE(psnr(recovered, source.frames[k]) >= 40.0);
    }
}

TEST_CASE("phantom streams are deterministic with correlated consecutive frames") {
    PhantomConfig pc;
    pc.height = 128;
    pc.width = 192;
    pc.frames = 3;
    pc.seed = 21;
    const FrameStream a = make_phantom_stream(pc);
    const FrameStream b = make_phantom_stream(pc);
    PhantomConfig other = pc;
    other.seed = 22;
    const FrameStream c = make_phantom_stream(other);

    REQUIRE(a.frames.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        REQUIRE(a.frames[k].pixels == b.frames[k].pixels);
        for (float v : a.frames[k].pixels) {
            REQUIRE(std::isfinite(v));
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
    REQUIRE(a.frames[0].pixels != c.frames[0].pixels);

    // same anatomy, fresh temporal speckle: strongly but not perfectly correlated
    REQUIRE(a.frames[0].pixels != a.frames[1].pixels);
    REQUIRE(pearson(a.frames[0], a.frames[1]) > 0.5);

    REQUIRE_THROWS_AS(make_phantom_stream(PhantomConfig{.height = 0}), ContractError);
}

TEST_CASE("flat-target phantom has a wall echo on every scan line") {
    PhantomConfig pc;
    pc.height = 512;
    pc.width = 256;
    pc.frames = 2;
    pc.seed = 6;
    pc.scan_mode = ScanMode::Stationary;
    const FrameStream ft = make_flat_target_stream(pc);
    REQUIRE(ft.scan_mode == ScanMode::Stationary);

    double band = 0.0;
    for (int i = 0; i < 512; ++i) {
        float deepest = 0.0f;
        for (int c = 40; c < 256; ++c) deepest = std::max(deepest, ft.frames[0].at(i, c));
        REQUIRE(deepest >= 0.9f);
        for (int c = 8; c < 40; ++c) band += ft.frames[0].at(i, c);
    }
    REQUIRE(band / (512.0 * 32.0) > 0.2);

    const FrameStream again = make_flat_target_stream(pc);
    REQUIRE(again.frames[0].pixels == ft.frames[0].pixels);
}

TEST_CASE("datasets split by source stream with no leakage") {
    std::vector<FrameStream> sources;
    for (std::uint64_t s = 0; s < 5; ++s) {
        PhantomConfig pc;
        pc.height = 64;
        pc.width = 160;
        pc.frames = 4;
        pc.seed = 30 + s;
        sources.push_back(make_phantom_stream(pc));
    }

    SynthConfig cfg;
    cfg.amplitude = 2.0;
    cfg.smoothness = 6.0;
    cfg.seed = 13;
    const Dataset ds = make_dataset(sources, CorrelationConfig{}, cfg);

    REQUIRE(ds.samples.size() == 15);  // 5 sources x 3 consecutive pairs
    REQUIRE(ds.train.size() + ds.val.size() + ds.test.size() == 15);
    REQUIRE(!ds.train.empty());
    REQUIRE(!ds.val.empty());
    REQUIRE(!ds.test.empty());

    auto ids = [&](const std::vector<std::size_t>& idx) {
        std::set<int> out;
        for (std::size_t i : idx) out.insert(ds.samples[i].source_id);
        return out;
    };
    const std::set<int> tr = ids(ds.train), va = ids(ds.val), te = ids(ds.test);
    for (int s : tr) {
        REQUIRE(!va.count(s));
        REQUIRE(!te.count(s));
    }
    for (int s : va) REQUIRE(!te.count(s));
    REQUIRE(tr.size() + va.size() + te.size() == 5);

    const Dataset again = make_dataset(sources, CorrelationConfig{}, cfg);
    REQUIRE(again.train == ds.train);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        REQUIRE(again.samples[i].map == ds.samples[i].map);
        REQUIRE(again.samples[i].target == ds.samples[i].target);
    }

    sources.resize(2);
    REQUIRE_THROWS_AS(make_dataset(sources, CorrelationConfig{}, cfg), ConfigError);
}

TEST_CASE("dataset targets are the relative injected warps") {
    std::vector<FrameStream> sources;
    for (std::uint64_t s = 0; s < 3; ++s) {
        PhantomConfig pc;
        pc.height = 64;
        pc.width = 160;
        pc.frames = 3;
        pc.seed = 50 + s;
        sources.push_back(make_phantom_stream(pc));
    }
    SynthConfig cfg;
    cfg.amplitude = 2.5;
    cfg.smoothness = 8.0;
    cfg.drift_per_frame = 0.2;
    cfg.seed = 99;
    const Dataset ds = make_dataset(sources, CorrelationConfig{}, cfg);

    // replay the distortion of the first-processed source and check sample 0
    const auto s = static_cast<std::size_t>(ds.samples[0].source_id);
    SynthConfig stream_cfg = cfg;
    stream_cfg.seed = Rng(cfg.seed).fork(100 + s).bits();
    const FrameStream replay = distort_stream(sources[s], stream_cfg);

    const CorrelationMap map = correlation_map(replay.frames[1], replay.frames[0], {});
    REQUIRE(ds.samples[0].height == map.height);
    REQUIRE(ds.samples[0].width == map.width);
    for (std::size_t i = 0; i < map.values.size(); ++i)
        REQUIRE(ds.samples[0].map[i] == static_cast<float>(map.values[i]));
    for (int i = 0; i < 64; ++i) {
        const double expect = replay.ground_truth_warps[0][static_cast<std::size_t>(i)] -
                              replay.ground_truth_warps[1][static_cast<std::size_t>(i)];
        REQUIRE(ds.samples[0].target[static_cast<std::size_t>(i)] ==
                static_cast<float>(expect));
    }
}

TEST_CASE("graph search recovers dataset targets within the amplitude budget") {
    PhantomConfig pc;
    pc.height = 128;
    pc.width = 192;
    pc.frames = 3;
    pc.seed = 61;
    const FrameStream source = make_phantom_stream(pc);

    SynthConfig cfg;
    cfg.amplitude = 4.0;
    cfg.smoothness = 20.0;
    cfg.seed = 8;
    cfg.augment.noise = true;
    const FrameStream out = distort_stream(source, cfg);

    for (std::size_t k = 1; k < out.frames.size(); ++k) {
        const CorrelationMap map = correlation_map(out.frames[k], out.frames[k - 1], {});
        const WarpVector est = gs_path(map, {});
        double mae = 0.0;
        for (int i = 0; i < map.height; ++i) {
            const double target = out.ground_truth_warps[k - 1][static_cast<std::size_t>(i)] -
                                  out.ground_truth_warps[k][static_cast<std::size_t>(i)];
            mae += std::abs(est[static_cast<std::size_t>(i)] - target);
        }
        mae /= map.height;
        INFO("pair " << k << " graph-search MAE " << mae);
        REQUIRE(mae <= cfg.amplitude);
    }
}
