#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "common.hpp"

namespace nurdstab {

// A polar-coordinate frame: `height` A-lines (angular rows, circular axis) by
// `width` depth samples. Pixels are row-major floats, nominally in [0, 1].
struct BScan {
    int height = 0;
    int width = 0;
    long frame_index = 0;
    std::vector<float> pixels;

    BScan() = default;
    BScan(int h, int w, long index = 0) : height(h), width(w), frame_index(index) {
        if (h <= 0 || w <= 0) throw ContractError("BScan: dimensions must be positive");
        pixels.assign(static_cast<std::size_t>(h) * w, 0.0f);
    }

    float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    const float* row(int y) const { return pixels.data() + static_cast<std::size_t>(y) * width; }
    float* row(int y) { return pixels.data() + static_cast<std::size_t>(y) * width; }
};

enum class ScanMode {
    InternalPullback,   // probe advances inside a stationary sheath
    RoboticOuterScan,   // whole assembly translated; sheath appearance fixed
    Stationary,
};

// Per-A-line angular displacement, in A-line index units (1 unit = 360/H deg).
// Entry i says where row i's content came from / should go, depending on the
// producer; see apply_warp for the sampling convention.
using WarpVector = std::vector<double>;

struct FrameStream {
    std::vector<BScan> frames;
    ScanMode scan_mode = ScanMode::InternalPullback;
    // Absolute distortion applied to each frame when the stream is synthetic;
    // empty for acquired data.
    std::vector<WarpVector> ground_truth_warps;

    int height() const { return frames.empty() ? 0 : frames.front().height; }
    int width() const { return frames.empty() ? 0 : frames.front().width; }
};

enum class Interp { NearestNeighbor, Linear };

namespace detail {

inline void check_warp(const BScan& f, const WarpVector& warp, const char* who) {
    if (static_cast<int>(warp.size()) != f.height)
        throw ContractError(std::string(who) + ": warp length must equal frame height");
    for (double v : warp)
        if (!std::isfinite(v)) throw ContractError(std::string(who) + ": warp entries must be finite");
}

}  // namespace detail

// Resamples rows: out[i] = in[(i - warp[i]) mod H]. A constant warp +c thus
// moves content c rows downward (toward larger i), so the warp that undoes a
// distortion is the distortion's negation in the constant case.
inline BScan apply_warp(const BScan& frame, const WarpVector& warp, Interp interp) {
    detail::check_warp(frame, warp, "apply_warp");
    const int h = frame.height, w = frame.width;
    BScan out(h, w, frame.frame_index);
    for (int i = 0; i < h; ++i) {
        double pos = static_cast<double>(i) - warp[i];
        if (interp == Interp::NearestNeighbor) {
            int src = wrap_index(std::llround(pos), h);
            const float* s = frame.row(src);
            float* d = out.row(i);
            for (int x = 0; x < w; ++x) d[x] = s[x];
        } else {
            double fl = std::floor(pos);
            double t = pos - fl;
            int i0 = wrap_index(static_cast<long long>(fl), h);
            if (t == 0.0) {
                const float* s = frame.row(i0);
                float* d = out.row(i);
                for (int x = 0; x < w; ++x) d[x] = s[x];
            } else {
                int i1 = i0 + 1 == h ? 0 : i0 + 1;
                const float* s0 = frame.row(i0);
                const float* s1 = frame.row(i1);
                float* d = out.row(i);
                for (int x = 0; x < w; ++x)
                    d[x] = static_cast<float>((1.0 - t) * s0[x] + t * s1[x]);
            }
        }
    }
    return out;
}

// Circular linear sample of a warp vector at fractional row position.
inline double sample_warp(const WarpVector& w, double pos) {
    const int h = static_cast<int>(w.size());
    double fl = std::floor(pos);
    double t = pos - fl;
    int i0 = wrap_index(static_cast<long long>(fl), h);
    int i1 = i0 + 1 == h ? 0 : i0 + 1;
    return (1.0 - t) * w[i0] + t * w[i1];
}

// Warp matching "apply a, then apply b": applying the result to a frame equals
// apply_warp(apply_warp(f, a, Linear), b, Linear) up to interpolation, and is
// exact when both inputs are integer-valued.
inline WarpVector compose_warps(const WarpVector& a, const WarpVector& b) {
    if (a.size() != b.size()) throw ContractError("compose_warps: length mismatch");
    const int h = static_cast<int>(a.size());
    WarpVector c(a.size());
    for (int i = 0; i < h; ++i) c[i] = b[i] + sample_warp(a, static_cast<double>(i) - b[i]);
    return c;
}

inline WarpVector constant_warp(int h, double value) { return WarpVector(static_cast<std::size_t>(h), value); }

}  // namespace nurdstab
