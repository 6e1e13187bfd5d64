#pragma once

// Evaluation suite: per-pixel temporal STD with signal-pixel selection,
// unstable-pixel counts, en-face projection, precession and local-fluctuation
// ridge statistics, RGB temporal encoding, and warp-estimation MSE.
//
// Angular quantities convert to degrees at 360/H per A-line; everything else
// stays in pixel units.

#include <nurdstab/common.hpp>
#include <nurdstab/frame.hpp>
#include <nurdstab/io.hpp>  // RgbImage

#include <algorithm>
#include <cmath>
#include <vector>

namespace nurdstab {

struct MetricsConfig {
    int std_window = 10;              // frames per STD window
    double unstable_threshold = 0.05; // per-pixel STD above this counts as unstable
    double mean_floor = 0.05;         // pixels dimmer than this on average are excluded

    void validate() const {
        if (std_window < 2) throw ContractError("std_window must be at least 2 frames");
        if (!(unstable_threshold > 0.0)) throw ContractError("unstable_threshold must be positive");
        if (!(mean_floor >= 0.0)) throw ContractError("mean_floor must be non-negative");
    }
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
};

namespace detail {

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd out;
    if (v.empty()) return out;
    for (double x : v) out.mean += x;
    out.mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(var / static_cast<double>(v.size()));
    return out;
}

}  // namespace detail

// Per-pixel population STD over one window of frames, with the signal mask
// used for averaging and counting.
struct StdImage {
    std::vector<double> values;        // height x width, row-major
    std::vector<std::uint8_t> selected;  // 1 where the pixel enters the statistics
    int height = 0, width = 0;
    long n_sig = 0;

    double mean_selected() const {
        if (n_sig == 0) return 0.0;
        double acc = 0.0;
        for (std::size_t i = 0; i < values.size(); ++i)
            if (selected[i]) acc += values[i];
        return acc / static_cast<double>(n_sig);
    }
};

inline StdImage window_std_image(const FrameStream& stream, const MetricsConfig& cfg,
                                 std::size_t begin) {
    cfg.validate();
    const auto window = static_cast<std::size_t>(cfg.std_window);
    if (begin + window > stream.frames.size())
        throw ContractError("STD window extends past the end of the stream");
    const BScan& first = stream.frames[begin];
    StdImage out;
    out.height = first.height;
    out.width = first.width;
    const std::size_t n = first.pixels.size();
    out.values.assign(n, 0.0);
    out.selected.assign(n, 0);

    std::vector<double> mean(n, 0.0);
    for (std::size_t k = begin; k < begin + window; ++k) {
        const BScan& f = stream.frames[k];
        if (f.pixels.size() != n) throw ContractError("frame shapes differ within the stream");
        for (std::size_t i = 0; i < n; ++i) mean[i] += f.pixels[i];
    }
    for (std::size_t i = 0; i < n; ++i) mean[i] /= static_cast<double>(window);
    for (std::size_t k = begin; k < begin + window; ++k) {
        const BScan& f = stream.frames[k];
        for (std::size_t i = 0; i < n; ++i) {
            const double d = f.pixels[i] - mean[i];
            out.values[i] += d * d;
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.values[i] = std::sqrt(out.values[i] / static_cast<double>(window));
        if (mean[i] >= cfg.mean_floor) {
            out.selected[i] = 1;
            ++out.n_sig;
        }
    }
    return out;
}

struct StdReport {
    double sigma = 0.0;           // mean per-window average STD over signal pixels
    std::vector<StdImage> windows;  // one per full non-overlapping window
};

// Splits the stream into non-overlapping windows of std_window frames and
// averages each window's per-pixel STD over its signal pixels.
inline StdReport stream_std(const FrameStream& stream, const MetricsConfig& cfg = {}) {
    cfg.validate();
    const auto window = static_cast<std::size_t>(cfg.std_window);
    if (stream.frames.size() < window)
        throw ContractError("stream shorter than the STD window");
    StdReport out;
    std::vector<double> sigmas;
    for (std::size_t begin = 0; begin + window <= stream.frames.size(); begin += window) {
        out.windows.push_back(window_std_image(stream, cfg, begin));
        sigmas.push_back(out.windows.back().mean_selected());
    }
    out.sigma = detail::mean_std(sigmas).mean;
    return out;
}

inline long unstable_pixel_count(const StdImage& image, double threshold) {
    if (!(threshold > 0.0)) throw ContractError("threshold must be positive");
    long count = 0;
    for (std::size_t i = 0; i < image.values.size(); ++i)
        if (image.selected[i] && image.values[i] > threshold) ++count;
    return count;
}

// Unstable-pixel count per window, summarized as mean +/- population std.
inline MeanStd mpc(const FrameStream& stream, const MetricsConfig& cfg = {}) {
    const StdReport report = stream_std(stream, cfg);
    std::vector<double> counts;
    counts.reserve(report.windows.size());
    for (const StdImage& w : report.windows)
        counts.push_back(static_cast<double>(unstable_pixel_count(w, cfg.unstable_threshold)));
    return detail::mean_std(counts);
}

// ---------------------------------------------------------------------------
// En-face projection and ridge statistics

struct EnfaceImage {
    std::vector<double> values;  // height x frames, row-major
    int height = 0, frames = 0;

    double at(int row, int frame) const {
        return values[static_cast<std::size_t>(row) * frames + frame];
    }
};

// Collapses each A-line to its mean intensity: entry (i, k) is the mean of
// row i of frame k, so rows follow the circumferential scan and columns time.
inline EnfaceImage enface(const FrameStream& stream) {
    if (stream.frames.empty()) throw ContractError("enface of an empty stream");
    const int h = stream.frames[0].height;
    EnfaceImage out;
    out.height = h;
    out.frames = static_cast<int>(stream.frames.size());
    out.values.assign(static_cast<std::size_t>(h) * out.frames, 0.0);
    for (int k = 0; k < out.frames; ++k) {
        const BScan& f = stream.frames[static_cast<std::size_t>(k)];
        if (f.height != h) throw ContractError("frame shapes differ within the stream");
        for (int i = 0; i < h; ++i) {
            const float* row = f.row(i);
            double acc = 0.0;
            for (int c = 0; c < f.width; ++c) acc += row[c];
            out.values[static_cast<std::size_t>(i) * out.frames + k] =
                acc / static_cast<double>(f.width);
        }
    }
    return out;
}

namespace detail {

struct Ridge {
    std::vector<double> unwrapped;  // circularly unwrapped argmax row per usable column
    std::vector<double> diffs;      // per-column displacement before any smoothing
};

// Tracks the per-column intensity maximum.  Columns with no contrast are
// dropped; more than 20% of them means there is no ridge to follow.  The
// circular row axis is unwrapped by wrapping successive differences into
// (-H/2, H/2], and a displacement beyond H/4 is treated as an artifact (the
// maximum teleported, e.g. across the seam of a bright band) and zeroed.
inline Ridge extract_ridge(const EnfaceImage& image) {
    if (image.frames <= 0 || image.height <= 0) throw ContractError("empty en-face image");
    const int h = image.height;
    std::vector<int> argmax;
    argmax.reserve(static_cast<std::size_t>(image.frames));
    int flat = 0;
    for (int k = 0; k < image.frames; ++k) {
        int best = 0;
        double lo = image.at(0, k), hi = image.at(0, k);
        for (int i = 1; i < h; ++i) {
            const double v = image.at(i, k);
            if (v > hi) {
                hi = v;
                best = i;
            }
            lo = std::min(lo, v);
        }
        if (hi - lo <= 1e-9)
            ++flat;
        else
            argmax.push_back(best);
    }
    if (flat * 5 > image.frames)
        throw MetricUnavailable("en-face ridge untrackable: too many featureless columns");
    if (argmax.empty()) throw MetricUnavailable("en-face ridge untrackable: no columns left");

    Ridge ridge;
    ridge.unwrapped.push_back(static_cast<double>(argmax[0]));
    for (std::size_t k = 1; k < argmax.size(); ++k) {
        double d = static_cast<double>(argmax[k] - argmax[k - 1]);
        if (d > h / 2.0) d -= h;
        if (d <= -h / 2.0) d += h;
        if (std::abs(d) > h / 4.0) d = 0.0;
        ridge.diffs.push_back(d);
        ridge.unwrapped.push_back(ridge.unwrapped.back() + d);
    }
    return ridge;
}

inline std::vector<double> median5(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    double win[5];
    for (std::size_t i = 0; i < v.size(); ++i) {
        int n = 0;
        for (long j = static_cast<long>(i) - 2; j <= static_cast<long>(i) + 2; ++j)
            if (j >= 0 && j < static_cast<long>(v.size())) win[n++] = v[static_cast<std::size_t>(j)];
        std::sort(win, win + n);
        out[i] = n % 2 ? win[n / 2] : 0.5 * (win[n / 2 - 1] + win[n / 2]);
    }
    return out;
}

}  // namespace detail

// Total excursion of the brightest-A-line ridge across the stream, in
// degrees: the paper's precession measure.  A 5-column median smooths the
// unwrapped ridge so single-column speckle flips do not inflate the range.
inline double precession(const EnfaceImage& image) {
    const detail::Ridge ridge = detail::extract_ridge(image);
    const std::vector<double> smooth = detail::median5(ridge.unwrapped);
    const auto [lo, hi] = std::minmax_element(smooth.begin(), smooth.end());
    return (*hi - *lo) * 360.0 / image.height;
}

// Frame-to-frame shaking of the same ridge, in degrees, from the unsmoothed
// displacements.
inline MeanStd local_fluctuation(const EnfaceImage& image) {
    const detail::Ridge ridge = detail::extract_ridge(image);
    if (ridge.diffs.empty())
        throw MetricUnavailable("local fluctuation needs at least two usable columns");
    std::vector<double> mags;
    mags.reserve(ridge.diffs.size());
    for (double d : ridge.diffs) mags.push_back(std::abs(d));
    MeanStd out = detail::mean_std(mags);
    out.mean *= 360.0 / image.height;
    out.std *= 360.0 / image.height;
    return out;
}

// ---------------------------------------------------------------------------
// RGB temporal encoding

// Paints frames k, k+1, k+2 into the R, G, B channels: static content comes
// out gray, anything moving shows as color fringes.
inline RgbImage rgb_encode(const FrameStream& stream, std::size_t k) {
    if (k + 2 >= stream.frames.size())
        throw ContractError("rgb_encode needs three consecutive frames");
    const BScan& r = stream.frames[k];
    const BScan& g = stream.frames[k + 1];
    const BScan& b = stream.frames[k + 2];
    if (g.pixels.size() != r.pixels.size() || b.pixels.size() != r.pixels.size())
        throw ContractError("frame shapes differ within the stream");
    RgbImage out;
    out.height = r.height;
    out.width = r.width;
    out.pixels.resize(r.pixels.size() * 3);
    for (std::size_t i = 0; i < r.pixels.size(); ++i) {
        out.pixels[3 * i + 0] = r.pixels[i];
        out.pixels[3 * i + 1] = g.pixels[i];
        out.pixels[3 * i + 2] = b.pixels[i];
    }
    return out;
}

// Pixels whose channels disagree by more than the threshold: a scalar proxy
// for how much color (i.e. inter-frame motion) an encoding shows.
inline long colored_pixel_count(const RgbImage& image, double threshold = 0.1) {
    long count = 0;
    for (std::size_t i = 0; i + 2 < image.pixels.size(); i += 3) {
        const float lo = std::min({image.pixels[i], image.pixels[i + 1], image.pixels[i + 2]});
        const float hi = std::max({image.pixels[i], image.pixels[i + 1], image.pixels[i + 2]});
        if (hi - lo > threshold) ++count;
    }
    return count;
}

// ---------------------------------------------------------------------------
// Warp-estimation error

struct NurdMse {
    double total_deg2 = 0.0;
    std::vector<double> per_frame_deg2;
};

// Mean squared estimation error in squared degrees, total and per frame.
inline NurdMse nurd_mse(const std::vector<WarpVector>& estimated,
                        const std::vector<WarpVector>& truth) {
    if (estimated.size() != truth.size())
        throw ContractError("nurd_mse: sequence lengths differ (estimated " +
                            std::to_string(estimated.size()) + ", truth " +
                            std::to_string(truth.size()) + ")");
    if (estimated.empty()) throw ContractError("nurd_mse: empty sequences");
    NurdMse out;
    out.per_frame_deg2.reserve(estimated.size());
    double acc = 0.0;
    std::size_t entries = 0;
    for (std::size_t k = 0; k < estimated.size(); ++k) {
        if (estimated[k].size() != truth[k].size() || truth[k].empty())
            throw ContractError("nurd_mse: warp shapes differ");
        const double to_deg = 360.0 / static_cast<double>(truth[k].size());
        double frame = 0.0;
        for (std::size_t i = 0; i < truth[k].size(); ++i) {
            const double d = (estimated[k][i] - truth[k][i]) * to_deg;
            frame += d * d;
        }
        acc += frame;
        entries += truth[k].size();
        out.per_frame_deg2.push_back(frame / static_cast<double>(truth[k].size()));
    }
    out.total_deg2 = acc / static_cast<double>(entries);
    return out;
}

}  // namespace nurdstab
