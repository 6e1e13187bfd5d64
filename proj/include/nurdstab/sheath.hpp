#pragma once

// Overall-rotation estimation against a calibrated sheath reference stack.
//
// The protection sheath is the only image content whose appearance does not
// depend on what the probe is looking at, so a narrow radial band containing
// its echo anchors a drift-free (if coarse) estimate of the frame's absolute
// orientation.  A raw reference recording carries its own rotational
// distortion; calibrate_reference removes it by aligning every frame of a
// flat-target recording to the stack consensus before the stack is used.

#include <nurdstab/common.hpp>
#include <nurdstab/frame.hpp>
#include <nurdstab/io.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace nurdstab {

// Radial band [band_begin, band_end) holding the sheath echo.  Columns are
// depth samples, so the band is a fixed property of the catheter geometry and
// applies to every frame of a stream.
struct SheathMask {
    int band_begin = 8;
    int band_end = 40;

    void validate() const {
        if (band_begin < 0 || band_end <= band_begin)
            throw ContractError("sheath mask requires 0 <= begin < end");
    }
};

// Calibrated sheath recording used as the rotation reference.  `rotations`
// holds the per-frame correction (in A-lines) that calibration applied, and
// the residual spread is recorded in degrees before/after alignment so the
// stack carries proof of its own quality.
struct ReferenceStack {
    std::vector<BScan> frames;
    SheathMask mask;
    int buffer_length = 3;
    std::vector<double> rotations;
    double residual_before_deg = 0.0;
    double residual_after_deg = 0.0;
};

namespace detail {

// Extracts the masked band of a frame as a dense H x band matrix with the
// band's global mean removed.  Mean subtraction makes the match insensitive
// to overall brightness changes; it is shift-invariant, so it cannot bias the
// recovered rotation.
inline std::vector<double> masked_band(const BScan& frame, const SheathMask& mask, int* band_width) {
    const int c0 = std::min(mask.band_begin, frame.width);
    const int c1 = std::min(mask.band_end, frame.width);
    const int bw = c1 - c0;
    *band_width = bw;
    if (bw <= 0) return {};
    std::vector<double> band(static_cast<std::size_t>(frame.height) * bw);
    double sum = 0.0;
    for (int i = 0; i < frame.height; ++i) {
        const float* src = frame.row(i) + c0;
        double* dst = band.data() + static_cast<std::size_t>(i) * bw;
        for (int c = 0; c < bw; ++c) {
            dst[c] = src[c];
            sum += src[c];
        }
    }
    const double mean = sum / static_cast<double>(band.size());
    for (double& v : band) v -= mean;
    return band;
}

}  // namespace detail

// Finds the integer rotation of `buffer` relative to `reference` by
// minimizing the Euclidean distance between the circularly shifted masked
// bands, searching shifts r in (-window, window).  Both sequences are
// matched jointly: the distance is summed over all frame pairs, which
// averages speckle without smearing the rotation signal.
//
// The returned value is the displacement of the buffer: if every buffer frame
// equals its reference frame rotated down by s (apply_warp with a constant
// +s), the result is +s.  Ties break toward zero, then toward the negative
// candidate, so the result is deterministic on featureless input.
inline int match_rotation(std::span<const BScan> buffer,
                          std::span<const BScan> reference,
                          const SheathMask& mask,
                          int window) {
    mask.validate();
    if (window < 1) throw ContractError("match window must be positive");
    if (buffer.empty() || buffer.size() != reference.size())
        throw ContractError("buffer and reference must be equally sized and non-empty");
    const int h = buffer[0].height;
    const int w = buffer[0].width;
    for (const auto& f : buffer)
        if (f.height != h || f.width != w) throw ContractError("buffer frames disagree in shape");
    for (const auto& f : reference)
        if (f.height != h || f.width != w) throw ContractError("reference frames disagree in shape");

    const std::size_t n = buffer.size();
    std::vector<std::vector<double>> buf(n), ref(n);
    int bw = 0;
    for (std::size_t f = 0; f < n; ++f) {
        buf[f] = detail::masked_band(buffer[f], mask, &bw);
        ref[f] = detail::masked_band(reference[f], mask, &bw);
    }
    if (bw <= 0) throw EstimationUnavailable("sheath band is empty for this frame width");

    const int lo = -(window - 1), hi = window - 1;
    double best = std::numeric_limits<double>::infinity();
    int best_r = 0;
    for (int r = lo; r <= hi; ++r) {
        double d = 0.0;
        for (std::size_t f = 0; f < n; ++f) {
            const double* b = buf[f].data();
            const double* s = ref[f].data();
            for (int i = 0; i < h; ++i) {
                const double* brow = b + static_cast<std::size_t>(wrap_index(i + r, h)) * bw;
                const double* srow = s + static_cast<std::size_t>(i) * bw;
                for (int c = 0; c < bw; ++c) {
                    const double diff = brow[c] - srow[c];
                    d += diff * diff;
                }
            }
        }
        const bool better =
            d < best || (d == best && (std::abs(r) < std::abs(best_r) ||
                                       (std::abs(r) == std::abs(best_r) && r < best_r)));
        if (better) {
            best = d;
            best_r = r;
        }
    }
    return best_r;
}

// Maps a stream frame index onto the reference stack.  An internal pullback
// advances through the stack proportionally (the torque coil is assumed to
// move with equal interval per frame); the other modes keep a fixed
// longitudinal position, so the first calibrated frame is always the right
// reference.  Indices that map past the stack clamp to the last frame and
// report it via `clamped`.
inline int select_reference(const ReferenceStack& stack, long frame_index, ScanMode mode,
                            long stream_length, bool* clamped = nullptr) {
    if (stack.frames.empty()) throw ContractError("reference stack is empty");
    if (frame_index < 0) throw ContractError("frame index must be non-negative");
    if (clamped) *clamped = false;
    if (mode != ScanMode::InternalPullback) return 0;
    if (stream_length <= 0) throw ContractError("stream length must be positive");
    const long n = static_cast<long>(stack.frames.size());
    long j = frame_index * n / stream_length;
    if (j >= n) {
        j = n - 1;
        if (clamped) *clamped = true;
    }
    return static_cast<int>(j);
}

// The matching buffer ending at stack index `end_index`: up to buffer_length
// consecutive frames, shorter near the start of the stack.
inline std::span<const BScan> reference_slice(const ReferenceStack& stack, int end_index) {
    if (end_index < 0 || end_index >= static_cast<int>(stack.frames.size()))
        throw ContractError("reference index out of range");
    if (stack.buffer_length < 1) throw ContractError("buffer length must be positive");
    const int start = std::max(0, end_index - stack.buffer_length + 1);
    return {stack.frames.data() + start, static_cast<std::size_t>(end_index - start + 1)};
}

// Settings for flat-target calibration.  The surface band is the radial
// interval where the target's echo can appear; it must not overlap the
// sheath band or the sheath's own rings would win the gradient search.
struct CalibrationConfig {
    int surface_begin = 40;
    int surface_end = 0;  // 0 means "to the full frame width"
    double min_gradient = 0.25;
    int iterations = 3;
    double max_missing_fraction = 0.10;
};

namespace detail {

// Per-A-line surface position: the column with the strongest axial gradient
// inside the surface band, or -1 when no gradient clears the threshold.
inline std::vector<int> surface_profile(const BScan& frame, const CalibrationConfig& cfg) {
    const int c1 = cfg.surface_end > 0 ? std::min(cfg.surface_end, frame.width) : frame.width;
    const int c0 = std::max(cfg.surface_begin, 1);
    std::vector<int> pos(frame.height, -1);
    for (int i = 0; i < frame.height; ++i) {
        const float* row = frame.row(i);
        double best = cfg.min_gradient;
        for (int c = c0; c < c1; ++c) {
            const double g = static_cast<double>(row[c]) - row[c - 1];
            if (g > best) {
                best = g;
                pos[i] = c;
            }
        }
    }
    return pos;
}

// Median over the defined entries of each row across all profiles, with each
// profile read through its current rotation.  Rows where no frame sees the
// surface stay undefined.
inline std::vector<double> median_profile(const std::vector<std::vector<int>>& profiles,
                                          const std::vector<int>& rot, int h) {
    std::vector<double> median(h, -1.0);
    std::vector<double> col;
    for (int i = 0; i < h; ++i) {
        col.clear();
        for (std::size_t f = 0; f < profiles.size(); ++f) {
            const int v = profiles[f][wrap_index(i - rot[f], h)];
            if (v >= 0) col.push_back(v);
        }
        if (col.empty()) continue;
        std::sort(col.begin(), col.end());
        const std::size_t m = col.size() / 2;
        median[i] = col.size() % 2 ? col[m] : 0.5 * (col[m - 1] + col[m]);
    }
    return median;
}

// Mean absolute distance between a rotated profile and the consensus,
// counting only rows defined on both sides.
inline double profile_distance(const std::vector<int>& profile, int rot,
                               const std::vector<double>& median, int h) {
    double sum = 0.0;
    int count = 0;
    for (int i = 0; i < h; ++i) {
        if (median[i] < 0) continue;
        const int v = profile[wrap_index(i - rot, h)];
        if (v < 0) continue;
        sum += std::abs(v - median[i]);
        ++count;
    }
    if (count == 0) return std::numeric_limits<double>::infinity();
    return sum / count;
}

// One alignment pass: for each frame, the full-circle rotation that brings
// its surface profile closest to the running median.  Ties prefer the
// smaller correction.
inline std::vector<int> align_profiles(const std::vector<std::vector<int>>& profiles, int h,
                                       int iterations) {
    std::vector<int> rot(profiles.size(), 0);
    for (int pass = 0; pass < iterations; ++pass) {
        const auto median = median_profile(profiles, rot, h);
        for (std::size_t f = 0; f < profiles.size(); ++f) {
            double best = std::numeric_limits<double>::infinity();
            int best_r = 0;
            for (int r = -h / 2; r < h - h / 2; ++r) {
                const double d = profile_distance(profiles[f], r, median, h);
                const bool better =
                    d < best || (d == best && (std::abs(r) < std::abs(best_r) ||
                                               (std::abs(r) == std::abs(best_r) && r < best_r)));
                if (better) {
                    best = d;
                    best_r = r;
                }
            }
            rot[f] = best_r;
        }
    }
    return rot;
}

inline double spread_degrees(const std::vector<int>& rot, int h) {
    const auto [lo, hi] = std::minmax_element(rot.begin(), rot.end());
    return static_cast<double>(*hi - *lo) * 360.0 / h;
}

}  // namespace detail

// Aligns a raw flat-target recording into a usable reference stack.  Every
// frame's target surface is extracted as the strongest axial edge per A-line;
// frames are then iteratively rotated to minimize the summed distance to the
// stack's median surface.  The residual rotational spread is measured before
// alignment and re-measured on the aligned stack, both in degrees.
//
// A frame whose surface is missing in more than max_missing_fraction of its
// A-lines aborts the calibration (that frame is unusable as a reference and
// would silently poison the median).
inline ReferenceStack calibrate_reference(const std::vector<BScan>& raw, const SheathMask& mask,
                                          const CalibrationConfig& cfg) {
    mask.validate();
    if (raw.empty()) throw ContractError("calibration needs at least one frame");
    if (cfg.iterations < 1) throw ContractError("calibration needs at least one pass");
    const int h = raw[0].height;
    const int w = raw[0].width;
    std::vector<std::vector<int>> profiles;
    profiles.reserve(raw.size());
    for (std::size_t f = 0; f < raw.size(); ++f) {
        if (raw[f].height != h || raw[f].width != w)
            throw ContractError("calibration frames disagree in shape");
        auto p = detail::surface_profile(raw[f], cfg);
        const long missing = std::count(p.begin(), p.end(), -1);
        if (missing > static_cast<long>(cfg.max_missing_fraction * h))
            throw CalibrationError("target surface not detected in enough A-lines",
                                   static_cast<long>(f));
        profiles.push_back(std::move(p));
    }

    const auto rot = detail::align_profiles(profiles, h, cfg.iterations);

    ReferenceStack stack;
    stack.mask = mask;
    stack.frames.reserve(raw.size());
    stack.rotations.reserve(raw.size());
    for (std::size_t f = 0; f < raw.size(); ++f) {
        stack.frames.push_back(apply_warp(raw[f], constant_warp(h, rot[f]), Interp::NearestNeighbor));
        stack.rotations.push_back(rot[f]);
    }
    stack.residual_before_deg = detail::spread_degrees(rot, h);

    // verification pass: re-extract and re-align on the corrected frames; the
    // leftover spread is what a consumer of the stack actually inherits
    std::vector<std::vector<int>> check;
    check.reserve(stack.frames.size());
    for (const auto& f : stack.frames) check.push_back(detail::surface_profile(f, cfg));
    stack.residual_after_deg = detail::spread_degrees(detail::align_profiles(check, h, cfg.iterations), h);
    return stack;
}

// On-disk layout: the calibrated frames in the standard stream format plus a
// calibration.json carrying the mask, buffer length, per-frame rotations, and
// the residual report.
inline void save_reference_stack(const ReferenceStack& stack, const std::filesystem::path& dir) {
    if (stack.frames.empty()) throw ContractError("cannot save an empty reference stack");
    FrameStream stream;
    stream.scan_mode = ScanMode::Stationary;
    stream.frames = stack.frames;
    write_stream(dir, stream);

    nlohmann::json j;
    j["band_begin"] = stack.mask.band_begin;
    j["band_end"] = stack.mask.band_end;
    j["buffer_length"] = stack.buffer_length;
    j["residual_before_deg"] = stack.residual_before_deg;
    j["residual_after_deg"] = stack.residual_after_deg;
    j["per_frame_rotation"] = stack.rotations;
    std::ofstream out(dir / "calibration.json");
    if (!out) throw IoError("cannot write " + (dir / "calibration.json").string());
    out << j.dump(2) << '\n';
}

inline ReferenceStack load_reference_stack(const std::filesystem::path& dir) {
    std::ifstream in(dir / "calibration.json");
    if (!in) throw IoError("cannot read " + (dir / "calibration.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed calibration.json: " + std::string(e.what()));
    }
    ReferenceStack stack;
    try {
        stack.mask.band_begin = j.at("band_begin").get<int>();
        stack.mask.band_end = j.at("band_end").get<int>();
        stack.buffer_length = j.at("buffer_length").get<int>();
        stack.residual_before_deg = j.at("residual_before_deg").get<double>();
        stack.residual_after_deg = j.at("residual_after_deg").get<double>();
        stack.rotations = j.at("per_frame_rotation").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("calibration.json missing fields: " + std::string(e.what()));
    }
    stack.mask.validate();
    if (stack.buffer_length < 1) throw IoError("calibration.json: invalid buffer length");
    stack.frames = read_stream(dir).frames;
    if (stack.frames.size() != stack.rotations.size())
        throw IoError("calibration.json rotation count disagrees with stored frames");
    return stack;
}

}  // namespace nurdstab
