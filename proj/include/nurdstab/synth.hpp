#pragma once

// Synthetic scan generation: procedural phantom streams, smooth random
// distortion warps with drift, post-warp augmentations, and assembly of
// (correlation map, relative warp) training pairs.
//
// Real source videos are not redistributable, so phantoms carry the repo's
// training and evaluation: layered media with speckle behind a ring-textured
// sheath band, optionally interrupted by featureless sectors where only
// background noise is visible (the hard case for any matching estimator).

#include <nurdstab/common.hpp>
#include <nurdstab/correlation.hpp>
#include <nurdstab/frame.hpp>
#include <nurdstab/net.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

namespace nurdstab {

struct SynthConfig {
    double amplitude = 0.0;        // max |warp| in A-lines before drift
    double smoothness = 8.0;       // correlation length of the warp, in rows
    double drift_per_frame = 0.0;  // constant precession component, A-lines per frame
    struct {
        bool geometric = false;
        bool noise = false;
        bool brightness_contrast = false;
        bool speckle = false;
        bool shadow = false;
    } augment;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(amplitude >= 0.0)) throw ContractError("amplitude must be non-negative");
        if (!(smoothness >= 1.0)) throw ContractError("smoothness must be at least one row");
        if (!std::isfinite(drift_per_frame)) throw ContractError("drift must be finite");
    }
};

// Symmetric amplitude bound from an observed shift range, widened by a third
// on each side so the synthetic distribution covers the observed one.
inline double expand_range(double min_shift, double max_shift) {
    return std::max(std::abs(min_shift), std::abs(max_shift)) * 4.0 / 3.0;
}

// Smooth random warp: white Gaussian noise circularly convolved with a
// Gaussian kernel of width `smoothness`, rescaled to peak amplitude, plus the
// configured drift as a constant offset.
inline WarpVector generate_warp(int height, const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    if (height <= 0) throw ContractError("height must be positive");
    std::vector<double> white(static_cast<std::size_t>(height));
    for (auto& v : white) v = rng.normal();

    const int radius = std::min(height / 2, static_cast<int>(std::ceil(3.0 * cfg.smoothness)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int t = -radius; t <= radius; ++t)
        kernel[static_cast<std::size_t>(t + radius)] =
            std::exp(-0.5 * (t / cfg.smoothness) * (t / cfg.smoothness));

    WarpVector warp(static_cast<std::size_t>(height), 0.0);
    for (int i = 0; i < height; ++i) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t)
            acc += kernel[static_cast<std::size_t>(t + radius)] * white[static_cast<std::size_t>(wrap_index(i + t, height))];
        warp[static_cast<std::size_t>(i)] = acc;
    }

    double peak = 0.0;
    for (double v : warp) peak = std::max(peak, std::abs(v));
    const double scale = peak > 0.0 ? cfg.amplitude / peak : 0.0;
    for (double& v : warp) v = v * scale + cfg.drift_per_frame;
    return warp;
}

namespace detail {

// Resamples columns by c -> c * gain + offset with edge clamping: the radial
// axis is not circular, so out-of-range samples take the border value.
inline void radial_resample(BScan& frame, double gain, double offset) {
    std::vector<float> row(static_cast<std::size_t>(frame.width));
    for (int i = 0; i < frame.height; ++i) {
        float* src = frame.row(i);
        for (int c = 0; c < frame.width; ++c) {
            const double pos = std::clamp(c * gain + offset, 0.0, frame.width - 1.0);
            const int c0 = static_cast<int>(pos);
            const int c1 = std::min(c0 + 1, frame.width - 1);
            const double t = pos - c0;
            row[static_cast<std::size_t>(c)] =
                static_cast<float>((1.0 - t) * src[c0] + t * src[c1]);
        }
        std::copy(row.begin(), row.end(), src);
    }
}

inline float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace detail

// Injects ground-truth distortion into a clean stream.  Frame k is warped by
// a fresh smooth warp plus k times the per-frame drift; the absolute warp is
// recorded as ground truth.  Augmentations run after warping and only touch
// intensity (or, for the geometric one, the radial axis), so they never
// invalidate the recorded warps: the per-stream geometric resample and shadow
// sector are fixed across frames, and noise, brightness/contrast, and speckle
// are drawn per frame.
inline FrameStream distort_stream(const FrameStream& source, const SynthConfig& cfg) {
    cfg.validate();
    if (source.frames.empty()) throw ContractError("source stream is empty");
    const int h = source.frames[0].height;

    Rng master(cfg.seed);
    Rng stream_rng = master.fork(0x73747265);  // per-stream augmentation draws
    const double geo_gain = stream_rng.uniform(0.9, 1.1);
    const double geo_offset = stream_rng.uniform(-3.0, 3.0);
    const int shadow_center = static_cast<int>(stream_rng.uniform_int(static_cast<std::uint64_t>(h)));
    const int shadow_half = h / 64 + static_cast<int>(stream_rng.uniform_int(static_cast<std::uint64_t>(h / 16 + 1)));
    const double shadow_factor = stream_rng.uniform(0.2, 0.6);

    SynthConfig warp_cfg = cfg;
    warp_cfg.drift_per_frame = 0.0;  // drift is accumulated here, not per call

    FrameStream out;
    out.scan_mode = source.scan_mode;
    out.frames.reserve(source.frames.size());
    out.ground_truth_warps.reserve(source.frames.size());

    for (std::size_t k = 0; k < source.frames.size(); ++k) {
        Rng warp_rng = master.fork(2 * k + 2);
        Rng aug_rng = master.fork(2 * k + 3);

        WarpVector warp = generate_warp(h, warp_cfg, warp_rng);
        const double drift = cfg.drift_per_frame * static_cast<double>(k);
        for (double& v : warp) v += drift;

        BScan frame = apply_warp(source.frames[k], warp, Interp::Linear);
        frame.frame_index = static_cast<long>(k);

        if (cfg.augment.geometric) detail::radial_resample(frame, geo_gain, geo_offset);
        if (cfg.augment.noise) {
            const double sigma = aug_rng.uniform(0.0, 0.05);
            for (auto& v : frame.pixels) v = detail::clamp01(v + aug_rng.normal(0.0, sigma));
        }
        if (cfg.augment.brightness_contrast) {
            const double gain = aug_rng.uniform(0.8, 1.2);
            const double offset = aug_rng.uniform(-0.1, 0.1);
            for (auto& v : frame.pixels) v = detail::clamp01(v * gain + offset);
        }
        if (cfg.augment.speckle) {
            // exponential grain blended by strength s: mean-preserving, s=0 is a no-op
            const double s = aug_rng.uniform(0.0, 0.4);
            for (auto& v : frame.pixels) {
                const double e = -std::log(1.0 - aug_rng.uniform());
                v = detail::clamp01(v * ((1.0 - s) + s * e));
            }
        }
        if (cfg.augment.shadow) {
            for (int i = shadow_center - shadow_half; i <= shadow_center + shadow_half; ++i) {
                float* row = frame.row(wrap_index(i, h));
                for (int c = 0; c < frame.width; ++c)
                    row[c] = static_cast<float>(row[c] * shadow_factor);
            }
        }

        out.frames.push_back(std::move(frame));
        out.ground_truth_warps.push_back(std::move(warp));
    }
    return out;
}

// Exact compositional inverse of a warp: the correction u with
// apply_warp(apply_warp(img, w), u) == img up to interpolation, found by the
// fixed point u_i = -w[i - u_i].  Converges when the warp is smoother than
// one A-line per A-line, which generated warps always are.
inline WarpVector invert_warp(const WarpVector& warp) {
    const int h = static_cast<int>(warp.size());
    WarpVector inv(warp.size());
    for (int i = 0; i < h; ++i) {
        double u = -warp[static_cast<std::size_t>(i)];
        for (int it = 0; it < 40; ++it) {
            const double next = -sample_warp(warp, static_cast<double>(i) - u);
            if (std::abs(next - u) < 1e-12) {
                u = next;
                break;
            }
            u = next;
        }
        inv[static_cast<std::size_t>(i)] = u;
    }
    return inv;
}

// ---------------------------------------------------------------------------
// Procedural phantoms

struct PhantomConfig {
    int height = 512;
    int width = 256;
    int frames = 32;
    std::uint64_t seed = 1;
    // one anatomy rendered repeatedly is physically a robotic/stationary scan
    ScanMode scan_mode = ScanMode::RoboticOuterScan;
    double featureless_fraction = 0.15;  // chance of a no-feature sector per layer set
};

namespace detail {

// Smooths a noise field along the angular axis (circularly) with a small
// Gaussian so speckle has realistic row-to-row correlation.
inline void smooth_rows(std::vector<double>& field, int h, int w, double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double norm = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        kernel[static_cast<std::size_t>(t + radius)] = std::exp(-0.5 * (t / sigma) * (t / sigma));
        norm += kernel[static_cast<std::size_t>(t + radius)];
    }
    for (auto& v : kernel) v /= norm;
    std::vector<double> out(field.size());
    for (int c = 0; c < w; ++c) {
        for (int i = 0; i < h; ++i) {
            double acc = 0.0;
            for (int t = -radius; t <= radius; ++t)
                acc += kernel[static_cast<std::size_t>(t + radius)] *
                       field[static_cast<std::size_t>(wrap_index(i + t, h)) * w + c];
            out[static_cast<std::size_t>(i) * w + c] = acc;
        }
    }
    field = std::move(out);
}

}  // namespace detail

// Tissue phantom stream: a ring-textured sheath band at a fixed radius plus
// two or three tissue layers whose boundary radius varies smoothly with
// angle, under static structural speckle and per-frame temporal speckle.
// Optionally one angular sector is featureless (background noise only beyond
// the sheath) to exercise estimators where correlation has nothing to grip.
inline FrameStream make_phantom_stream(const PhantomConfig& cfg) {
    if (cfg.height <= 0 || cfg.width <= 0 || cfg.frames <= 0)
        throw ContractError("phantom dimensions must be positive");
    const int h = cfg.height, w = cfg.width;
    Rng rng(cfg.seed);

    // smooth lumen-wall radius: low-order Fourier series, kept inside the frame
    const double base_radius = rng.uniform(0.28, 0.45) * w;
    double coef[3], phase[3];
    for (int m = 0; m < 3; ++m) {
        coef[m] = rng.uniform(0.0, 0.06) * w / (m + 1.0);
        phase[m] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    const double layer2 = rng.uniform(0.10, 0.18) * w;  // second boundary offset
    const double attenuation = rng.uniform(0.015, 0.03);
    const int sheath_mod_cycles = 2 + static_cast<int>(rng.uniform_int(4));
    const double sheath_mod_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    // catheter-wall contact zone: a narrow bright sector (the probe pressing
    // into the wall) that gives the en-face projection a dominant, trackable
    // ridge; a wide flat plateau would leave the ridge argmax to speckle noise
    const double contact_center = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double contact_sigma = rng.uniform(0.02, 0.04) * 2.0 * std::numbers::pi;

    const bool has_gap = rng.uniform() < cfg.featureless_fraction;
    const int gap_center = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h)));
    const int gap_half = h / 16 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h / 8 + 1)));

    // static structural speckle, smoothed along the angle
    std::vector<double> structure(static_cast<std::size_t>(h) * w);
    for (auto& v : structure) v = rng.uniform();
    detail::smooth_rows(structure, h, w, 1.2);

    auto in_gap = [&](int i) {
        if (!has_gap) return false;
        const int d = std::abs(wrap_index(i - gap_center, h));
        return std::min(d, h - d) <= gap_half;
    };

    FrameStream out;
    out.scan_mode = cfg.scan_mode;
    out.frames.reserve(static_cast<std::size_t>(cfg.frames));
    for (int k = 0; k < cfg.frames; ++k) {
        Rng frame_rng = rng.fork(1000 + static_cast<std::uint64_t>(k));
        std::vector<double> temporal(static_cast<std::size_t>(h) * w);
        for (auto& v : temporal) v = frame_rng.normal();
        detail::smooth_rows(temporal, h, w, 1.2);

        BScan f(h, w);
        f.frame_index = k;
        for (int i = 0; i < h; ++i) {
            const double a = 2.0 * std::numbers::pi * i / h;
            double wall = base_radius;
            for (int m = 0; m < 3; ++m) wall += coef[m] * std::sin((m + 1) * a + phase[m]);
            wall = std::max(wall, 44.0);  // tissue stays clear of the sheath band
            const double mod =
                1.0 + 0.18 * std::sin(sheath_mod_cycles * a + sheath_mod_phase);
            double da = std::remainder(a - contact_center, 2.0 * std::numbers::pi);
            const double contact = 1.0 + 1.2 * std::exp(-0.5 * (da / contact_sigma) * (da / contact_sigma));
            const bool gap = in_gap(i);
            for (int c = 0; c < w; ++c) {
                const std::size_t idx = static_cast<std::size_t>(i) * w + c;
                double v = 0.02 + 0.015 * temporal[idx];  // background noise floor
                if (c >= 8 && c < 40) {
                    const double ring =
                        0.38 + 0.26 * std::sin(2.0 * std::numbers::pi * (c - 8) / 7.0);
                    v = ring * mod * (0.9 + 0.2 * structure[idx]) + 0.02 * temporal[idx];
                } else if (!gap && c >= wall) {
                    // speckle is mostly static on a stationary target: structure
                    // carries the texture, the temporal term only decorrelates mildly
                    const double depth = c - wall;
                    double level = depth < layer2 ? 0.55 : 0.35;
                    level *= contact * std::exp(-attenuation * depth);
                    v = level * (0.55 + 0.9 * structure[idx]) * (1.0 + 0.08 * temporal[idx]);
                }
                f.at(i, c) = detail::clamp01(v);
            }
        }
        out.frames.push_back(std::move(f));
    }
    return out;
}

// Flat-target phantom for calibration: the catheter sits off-center inside a
// rectangular channel, so every A-line hits a wall and the ray-box depth
// profile is asymmetric — the circular alignment has a unique answer.
inline FrameStream make_flat_target_stream(const PhantomConfig& cfg) {
    if (cfg.height <= 0 || cfg.width <= 0 || cfg.frames <= 0)
        throw ContractError("phantom dimensions must be positive");
    const int h = cfg.height, w = cfg.width;
    Rng rng(cfg.seed);
    const double px = 0.18, py = -0.12;
    const double ax = 1.0, ay = 0.8;
    // nearest/farthest possible wall hits for this catheter position
    const double t_min = std::min({ax - px, ax + px, ay - py, ay + py});
    const double t_max = std::hypot(ax + std::abs(px), ay + std::abs(py));
    const double scale_floor = 42.0 / t_min;      // echo clears the sheath band everywhere
    const double scale_cap = (w - 4.0) / t_max;   // deepest echo stays inside the frame
    if (scale_cap < scale_floor)
        throw ContractError("flat-target phantom needs a deeper frame (width >= ~100)");
    const double scale = std::clamp(0.35 * w, scale_floor, scale_cap);

    FrameStream out;
    out.scan_mode = cfg.scan_mode;
    out.frames.reserve(static_cast<std::size_t>(cfg.frames));
    for (int k = 0; k < cfg.frames; ++k) {
        Rng frame_rng = rng.fork(static_cast<std::uint64_t>(k));
        BScan f(h, w);
        f.frame_index = k;
        for (int i = 0; i < h; ++i) {
            const double theta = 2.0 * std::numbers::pi * i / h;
            const double ux = std::cos(theta), uy = std::sin(theta);
            double t = std::numeric_limits<double>::infinity();
            if (ux > 1e-12) t = std::min(t, (ax - px) / ux);
            if (ux < -1e-12) t = std::min(t, (-ax - px) / ux);
            if (uy > 1e-12) t = std::min(t, (ay - py) / uy);
            if (uy < -1e-12) t = std::min(t, (-ay - py) / uy);
            const int cs = static_cast<int>(std::lround(t * scale));
            const double mod = 1.0 + 0.45 * std::sin(2.0 * theta + 0.7) +
                               0.2 * std::sin(5.0 * theta + 2.1);
            for (int c = 0; c < w; ++c) {
                double v = 0.02;
                if (c >= 8 && c < 40) {
                    const double ring =
                        0.35 + 0.25 * std::sin(2.0 * std::numbers::pi * (c - 8) / 8.0);
                    v = std::clamp(ring * mod, 0.0, 0.95);
                } else if (c == cs) {
                    v = 1.0;
                } else if (c == cs + 1) {
                    v = 0.55;
                } else if (c == cs + 2) {
                    v = 0.25;
                }
                f.at(i, c) = detail::clamp01(v + frame_rng.normal(0.0, 0.005));
            }
        }
        out.frames.push_back(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset assembly

struct Dataset {
    std::vector<MapSample> samples;
    std::vector<std::size_t> train, val, test;
};

// Builds (correlation map, relative warp) pairs from a set of clean source
// streams.  Each stream is distorted with its own derived seed, and every
// consecutive pair contributes the map of the newer frame against the older
// one, targeted with the correction the newer frame needs: the difference of
// the injected absolute warps.  The three-way split is by source stream, not
// by pair, so no source pixels leak between train, validation, and test.
inline Dataset make_dataset(const std::vector<FrameStream>& sources,
                            const CorrelationConfig& corr_cfg, const SynthConfig& cfg) {
    cfg.validate();
    if (sources.size() < 3)
        throw ConfigError("dataset needs at least 3 source streams for a leak-free split");

    Rng split_rng = Rng(cfg.seed).fork(0x73706c69);
    std::vector<std::size_t> order(sources.size());
    for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
    shuffle(order, split_rng);

    Dataset ds;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const std::size_t s = order[pos];
        if (sources[s].frames.size() < 2)
            throw ContractError("source streams need at least two frames");
        SynthConfig stream_cfg = cfg;
        stream_cfg.seed = Rng(cfg.seed).fork(100 + s).bits();
        const FrameStream distorted = distort_stream(sources[s], stream_cfg);

        std::vector<std::size_t>& bucket =
            pos % 3 == 0 ? ds.train : (pos % 3 == 1 ? ds.val : ds.test);
        for (std::size_t k = 1; k < distorted.frames.size(); ++k) {
            const CorrelationMap map =
                correlation_map(distorted.frames[k], distorted.frames[k - 1], corr_cfg);
            MapSample sample;
            sample.height = map.height;
            sample.width = map.width;
            sample.source_id = static_cast<int>(s);
            sample.map.resize(map.values.size());
            for (std::size_t i = 0; i < map.values.size(); ++i)
                sample.map[i] = static_cast<float>(map.values[i]);
            sample.target.resize(static_cast<std::size_t>(map.height));
            const WarpVector& prev = distorted.ground_truth_warps[k - 1];
            const WarpVector& cur = distorted.ground_truth_warps[k];
            for (int i = 0; i < map.height; ++i)
                sample.target[static_cast<std::size_t>(i)] =
                    static_cast<float>(prev[static_cast<std::size_t>(i)] - cur[static_cast<std::size_t>(i)]);
            bucket.push_back(ds.samples.size());
            ds.samples.push_back(std::move(sample));
        }
    }
    return ds;
}

}  // namespace nurdstab
