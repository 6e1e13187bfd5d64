#pragma once

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "correlation.hpp"

namespace nurdstab {

struct GsConfig {
    int max_step = 2;          // |c_i - c_{i-1}| bound between neighboring rows
    double step_penalty = 0.05;  // score cost per unit of step
};

// Picks one column per map row maximizing sum(map(i, c_i)) - penalty * sum|dc|
// subject to the per-row step bound (an open path: no wrap constraint between
// the last and first rows). Returned entries are shifts, i.e. column - w/2.
//
// Ties are broken deterministically: among equal-score paths the one whose
// final-row column is nearest the zero-shift center wins (then the smaller
// column), and the same preference is applied row by row backwards. The
// recursion realizes this by keeping, per cell, the best predecessor under
// (score, |c - center|, c).
inline WarpVector gs_path(const CorrelationMap& map, const GsConfig& cfg = {}) {
    if (map.height <= 0 || map.width <= 0) throw ContractError("gs_path: empty map");
    if (cfg.max_step < 0) throw ContractError("gs_path: negative step bound");
    const int h = map.height, w = map.width, ctr = map.center();

    auto prefer = [ctr](int a, int b) {
        // true when column a is preferred over b for tie-breaking
        const int da = std::abs(a - ctr), db = std::abs(b - ctr);
        return da != db ? da < db : a < b;
    };

    std::vector<double> score(static_cast<std::size_t>(h) * w);
    std::vector<int> parent(static_cast<std::size_t>(h) * w, -1);
    for (int c = 0; c < w; ++c) score[c] = map.at(0, c);
    for (int i = 1; i < h; ++i) {
        const double* prev = &score[static_cast<std::size_t>(i - 1) * w];
        double* cur = &score[static_cast<std::size_t>(i) * w];
        int* par = &parent[static_cast<std::size_t>(i) * w];
        for (int c = 0; c < w; ++c) {
            double best = -std::numeric_limits<double>::infinity();
            int from = -1;
            const int lo = std::max(0, c - cfg.max_step), hi = std::min(w - 1, c + cfg.max_step);
            for (int p = lo; p <= hi; ++p) {
                const double s = prev[p] - cfg.step_penalty * std::abs(c - p);
                if (s > best || (s == best && prefer(p, from))) {
                    best = s;
                    from = p;
                }
            }
            cur[c] = best + map.at(i, c);
            par[c] = from;
        }
    }

    int c = 0;
    {
        const double* last = &score[static_cast<std::size_t>(h - 1) * w];
        for (int k = 1; k < w; ++k)
            if (last[k] > last[c] || (last[k] == last[c] && prefer(k, c))) c = k;
    }
    WarpVector path(static_cast<std::size_t>(h));
    for (int i = h - 1; i >= 0; --i) {
        path[i] = c - ctr;
        if (i > 0) c = parent[static_cast<std::size_t>(i) * w + c];
    }
    return path;
}

// Range of inter-frame displacement across a raw stream, for sizing synthetic
// distortions. For each consecutive pair the older frame is correlated against
// the newer one as reference, so the path reads out how far the newer frame's
// content moved (frame k+1 = frame k shifted down 3 rows gives +3, not the
// -3 warp that would undo it).
inline std::pair<double, double> measure_nurd_range(const FrameStream& stream,
                                                    const CorrelationConfig& ccfg = {},
                                                    const GsConfig& gcfg = {}) {
    if (stream.frames.size() < 2) throw ContractError("measure_nurd_range: need at least two frames");
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t k = 0; k + 1 < stream.frames.size(); ++k) {
        const CorrelationMap map = correlation_map(stream.frames[k], stream.frames[k + 1], ccfg);
        for (double s : gs_path(map, gcfg)) {
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
    }
    return {lo, hi};
}

}  // namespace nurdstab
