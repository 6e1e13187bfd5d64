#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "frame.hpp"

namespace nurdstab {

struct CorrelationConfig {
    int patch_height = 5;         // rows per patch; odd so the patch centers on its row
    int window_width = 64;        // shift search window; column w/2 is zero shift
    double degenerate_value = 0.0;  // emitted where either patch has ~zero variance
    int crop_begin = 0;           // depth band [crop_begin, crop_end) used for matching;
    int crop_end = -1;            // -1 means "to the full width"
};

// Row i, column c holds the Pearson correlation between the patch of `frame`
// centered on row i and the patch of `reference` centered on row i + (c - w/2).
// A ridge at column w/2 + s therefore means the reference content sits s rows
// below, i.e. the warp correcting `frame` onto `reference` is +s at that row.
struct CorrelationMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    CorrelationMap() = default;
    CorrelationMap(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0) {}
    double at(int y, int c) const { return values[static_cast<std::size_t>(y) * width + c]; }
    double& at(int y, int c) { return values[static_cast<std::size_t>(y) * width + c]; }
    int center() const { return width / 2; }
};

inline double pearson(const double* a, const double* b, std::size_t n, double degenerate_value = 0.0) {
    if (n == 0) throw ContractError("pearson: empty patches");
    for (std::size_t i = 0; i < n; ++i)
        if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw ContractError("pearson: non-finite entry");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double va = 0, vb = 0, cov = 0, qa = 0, qb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        va += da * da;
        vb += db * db;
        cov += da * db;
        qa += a[i] * a[i];
        qb += b[i] * b[i];
    }
    // Constant patches don't reach exactly zero variance in floating point
    // (their mean rounds), so degeneracy is judged relative to the scale.
    if (va <= 1e-24 * qa || vb <= 1e-24 * qb) return degenerate_value;
    return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b, double degenerate_value = 0.0) {
    if (a.size() != b.size()) throw ContractError("pearson: patch shapes differ");
    return pearson(a.data(), b.data(), a.size(), degenerate_value);
}

namespace detail {

// Sum of `src` over the patch window centered on each row, circularly.
// Incremental slide keeps the whole map O(H * w * W).
inline std::vector<double> window_sum(const std::vector<double>& src, int h2) {
    const int h = static_cast<int>(src.size());
    std::vector<double> out(src.size());
    double acc = 0;
    for (int r = -h2; r <= h2; ++r) acc += src[wrap_index(r, h)];
    out[0] = acc;
    for (int i = 1; i < h; ++i) {
        acc += src[wrap_index(i + h2, h)] - src[wrap_index(i - 1 - h2, h)];
        out[i] = acc;
    }
    return out;
}

}  // namespace detail

inline CorrelationMap correlation_map(const BScan& frame, const BScan& reference, const CorrelationConfig& cfg = {}) {
    if (frame.height != reference.height || frame.width != reference.width)
        throw ContractError("correlation_map: frame shapes differ");
    if (cfg.patch_height < 1 || cfg.patch_height % 2 == 0)
        throw ContractError("correlation_map: patch height must be odd and positive");
    if (cfg.window_width < 2 || cfg.window_width % 2 != 0)
        throw ContractError("correlation_map: window width must be even and >= 2");
    if (cfg.window_width > frame.height)
        throw ContractError("correlation_map: window width exceeds frame height");
    const int x0 = cfg.crop_begin;
    const int x1 = cfg.crop_end < 0 ? frame.width : cfg.crop_end;
    if (x0 < 0 || x1 <= x0 || x1 > frame.width)
        throw ContractError("correlation_map: bad depth crop");

    const int h = frame.height;
    const int w = cfg.window_width;
    const int h2 = cfg.patch_height / 2;
    const int wc = x1 - x0;
    const double n = static_cast<double>(cfg.patch_height) * wc;
    // Absolute floor for the summed squared deviation of a patch; cancellation
    // noise in the shifted-moment form stays orders of magnitude below this
    // for [0,1] pixels while any real texture stays far above it.
    const double var_floor = 1e-9;

    std::vector<double> rs_f(h), rq_f(h), rs_r(h), rq_r(h);
    for (int y = 0; y < h; ++y) {
        const float* pf = frame.row(y);
        const float* pr = reference.row(y);
        double sf = 0, qf = 0, sr = 0, qr = 0;
        for (int x = x0; x < x1; ++x) {
            const double vf = pf[x], vr = pr[x];
            sf += vf;
            qf += vf * vf;
            sr += vr;
            qr += vr * vr;
        }
        rs_f[y] = sf;
        rq_f[y] = qf;
        rs_r[y] = sr;
        rq_r[y] = qr;
    }
    const std::vector<double> S_f = detail::window_sum(rs_f, h2);
    const std::vector<double> Q_f = detail::window_sum(rq_f, h2);
    const std::vector<double> S_r = detail::window_sum(rs_r, h2);
    const std::vector<double> Q_r = detail::window_sum(rq_r, h2);

    CorrelationMap map(h, w);
    parallel_for(w, [&](long long cb, long long ce) {
        std::vector<double> rowdot(h);
        for (int c = static_cast<int>(cb); c < ce; ++c) {
            const int d = c - w / 2;
            for (int y = 0; y < h; ++y) {
                const float* pf = frame.row(y);
                const float* pr = reference.row(wrap_index(y + d, h));
                double acc = 0;
                for (int x = x0; x < x1; ++x) acc += static_cast<double>(pf[x]) * pr[x];
                rowdot[y] = acc;
            }
            const std::vector<double> X = detail::window_sum(rowdot, h2);
            for (int i = 0; i < h; ++i) {
                const int j = wrap_index(i + d, h);
                const double va = Q_f[i] - S_f[i] * S_f[i] / n;
                const double vb = Q_r[j] - S_r[j] * S_r[j] / n;
                if (va <= var_floor || vb <= var_floor) {
                    map.at(i, c) = cfg.degenerate_value;
                } else {
                    const double num = X[i] - S_f[i] * S_r[j] / n;
                    map.at(i, c) = std::clamp(num / std::sqrt(va * vb), -1.0, 1.0);
                }
            }
        }
    });
    return map;
}

}  // namespace nurdstab
