#pragma once

// PI complementary fusion of the per-A-line NURD estimate with the sheath's
// overall-rotation estimate, and the stabilizer loop that drives both.
//
// The NURD estimator is accurate frame-to-frame but integrates its own error
// over a long stream; the sheath match is coarse but drift-free.  The filter
// trusts the NURD vector at frame rate (proportional gain close to one) and
// lets the rotation reference correct the low-frequency drift through the
// integral term, the same split a gyro/accelerometer attitude filter uses.

#include <nurdstab/common.hpp>
#include <nurdstab/correlation.hpp>
#include <nurdstab/frame.hpp>
#include <nurdstab/graph_search.hpp>
#include <nurdstab/net.hpp>
#include <nurdstab/sheath.hpp>

#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nurdstab {

enum class Estimator { Cnn, GraphSearch };

struct FusionConfig {
    double k_p = 0.95;
    double k_i = 0.02;
    Estimator estimator = Estimator::Cnn;
    bool overall_rotation_enabled = true;
    bool nurd_enabled = true;

    void validate() const {
        if (!(k_p >= 0.0 && k_p <= 1.0)) throw ContractError("k_p must lie in [0, 1]");
        if (!(k_i >= 0.0)) throw ContractError("k_i must be non-negative");
    }
};

// Anti-windup bound on each integral element, as a fraction of the frame
// height (a quarter turn).  Sustained residuals beyond that indicate the
// rotation reference and the estimator disagree wildly; letting the integral
// keep growing would only delay recovery.
inline constexpr double kIntegralLimitFraction = 0.25;

// One filter update.  `nurd` is the estimator's correction vector and
// `rotation` the drift-free correction, both expressed for the same frame.
// Computes the fused correction using the integral carried in from the
// previous step, then updates the integral with this step's residual:
//
//   fused_i   = k_p * nurd_i + (1 - k_p) * rotation + k_i * integral_i
//   integral_i += rotation - fused_i            (clamped to a quarter turn)
inline WarpVector pi_fuse(const WarpVector& nurd, double rotation, std::vector<double>& integral,
                          const FusionConfig& cfg) {
    cfg.validate();
    if (nurd.empty() || nurd.size() != integral.size())
        throw ContractError("pi_fuse: nurd and integral lengths disagree");
    if (!std::isfinite(rotation)) throw ContractError("pi_fuse: non-finite rotation");
    const double limit = kIntegralLimitFraction * static_cast<double>(nurd.size());
    WarpVector fused(nurd.size());
    for (std::size_t i = 0; i < nurd.size(); ++i) {
        if (!std::isfinite(nurd[i]) || !std::isfinite(integral[i]))
            throw ContractError("pi_fuse: non-finite input");
        fused[i] = cfg.k_p * nurd[i] + (1.0 - cfg.k_p) * rotation + cfg.k_i * integral[i];
        integral[i] = std::clamp(integral[i] + rotation - fused[i], -limit, limit);
    }
    return fused;
}

struct StabilizerConfig {
    FusionConfig fusion;
    CorrelationConfig correlation;
    GsConfig graph;
    SheathMask mask;
    int match_window = 32;
    Interp interpolation = Interp::Linear;
};

// Everything one frame's correction produced.  `correction` applies to the
// pre-shifted frame; `total_warp` is the composition of the pre-shift and the
// correction, i.e. what was applied to the raw frame.
struct StepResult {
    BScan corrected{1, 1};
    WarpVector correction;
    WarpVector total_warp;
    double rotation = 0.0;
    double rotation_increment = 0.0;
    bool estimator_fallback = false;
    bool rotation_fallback = false;
    std::string warning;
};

// On-line stabilizer: feed frames in stream order, receive corrected frames.
// Only already-seen frames are ever touched, so the loop is causal by
// construction.  The first frame is emitted unchanged and becomes the anchor
// for everything after it.
//
// When overall rotation is enabled and no calibrated reference stack is
// supplied, the first frame itself becomes a single-frame reference — the
// simplification that works when the sheath's longitudinal position is fixed
// (robotic outer scan, stationary scan).  A real pullback should supply a
// calibrated stack.
class Stabilizer {
public:
    Stabilizer(StabilizerConfig cfg, NurdNet<float>* net = nullptr,
               const ReferenceStack* reference = nullptr,
               ScanMode mode = ScanMode::RoboticOuterScan, long stream_length = 0)
        : cfg_(std::move(cfg)), net_(net), external_(reference), mode_(mode),
          stream_length_(stream_length) {
        cfg_.fusion.validate();
        cfg_.mask.validate();
        if (cfg_.match_window < 1) throw ContractError("match window must be positive");
        if (cfg_.fusion.nurd_enabled && cfg_.fusion.estimator == Estimator::Cnn && !net_)
            throw ContractError("estimator is Cnn but no model was supplied");
        if (external_ && external_->frames.empty())
            throw ContractError("reference stack is empty");
    }

    long frames_processed() const { return k_; }

    StepResult step(const BScan& raw) {
        StepResult out;
        if (k_ == 0) {
            init(raw);
            out.corrected = raw;
            out.corrected.frame_index = 0;
            out.correction.assign(raw.height, 0.0);
            out.total_warp.assign(raw.height, 0.0);
            ++k_;
            return out;
        }
        if (raw.height != last_.height || raw.width != last_.width)
            throw ContractError("frame shape changed mid-stream");
        const int h = raw.height;

        // (1) pre-shift by the integer part of the previous overall rotation;
        // the fractional remainder stays in the bookkeeping so it is never
        // lost, and the frame is only interpolated once (at the final warp)
        const long long rho = std::llround(rotation_);
        BScan pre = rho == 0
                        ? raw
                        : apply_warp(raw, constant_warp(h, static_cast<double>(rho)),
                                     Interp::NearestNeighbor);

        // (2) per-A-line NURD estimate against the last stabilized frame
        WarpVector nurd(static_cast<std::size_t>(h), 0.0);
        if (cfg_.fusion.nurd_enabled) {
            try {
                const CorrelationMap map = correlation_map(pre, last_, cfg_.correlation);
                nurd = cfg_.fusion.estimator == Estimator::Cnn ? net_->infer(map)
                                                               : gs_path(map, cfg_.graph);
            } catch (const std::exception& e) {
                nurd.assign(static_cast<std::size_t>(h), 0.0);
                out.estimator_fallback = true;
                out.warning = std::string("estimator fallback: ") + e.what();
            }
        }

        // (3) drift-free rotation from the sheath band
        double rotation_new = rotation_;
        if (cfg_.fusion.overall_rotation_enabled) {
            buffer_.push_back(pre);
            while (buffer_.size() > static_cast<std::size_t>(stack().buffer_length))
                buffer_.pop_front();
            try {
                const int displacement = match_buffer();
                rotation_new = static_cast<double>(rho) - displacement;
            } catch (const EstimationUnavailable& e) {
                out.rotation_fallback = true;
                if (out.warning.empty())
                    out.warning = std::string("rotation fallback: ") + e.what();
            }
        }
        out.rotation_increment = rotation_new - rotation_;
        out.rotation = rotation_new;

        // (4)+(5) fuse in the pre-shifted frame's coordinates and correct.
        // The rotation handed to the filter is the part the pre-shift has not
        // already taken out, so nothing is counted twice.
        const double residual_rotation = rotation_new - static_cast<double>(rho);
        out.correction = pi_fuse(nurd, residual_rotation, integral_, cfg_.fusion);
        out.corrected = apply_warp(pre, out.correction, cfg_.interpolation);
        out.corrected.frame_index = k_;
        out.total_warp =
            compose_warps(constant_warp(h, static_cast<double>(rho)), out.correction);

        // (6) advance the recurrence
        last_ = out.corrected;
        rotation_ = rotation_new;
        ++k_;
        return out;
    }

private:
    void init(const BScan& first) {
        last_ = first;
        rotation_ = 0.0;
        integral_.assign(first.height, 0.0);
        if (cfg_.fusion.overall_rotation_enabled) {
            if (!external_) {
                implicit_.emplace();
                implicit_->frames.push_back(first);
                implicit_->mask = cfg_.mask;
                implicit_->rotations.assign(1, 0.0);
            }
            buffer_.push_back(first);
        }
    }

    const ReferenceStack& stack() const { return external_ ? *external_ : *implicit_; }

    int match_buffer() const {
        const ReferenceStack& s = stack();
        const int end = s.frames.size() == 1
                            ? 0
                            : select_reference(s, k_, mode_, stream_length_);
        const auto slice = reference_slice(s, end);
        const std::size_t m = std::min(slice.size(), buffer_.size());
        std::vector<BScan> recent(buffer_.end() - static_cast<long>(m), buffer_.end());
        return match_rotation(recent, slice.last(m), s.mask, cfg_.match_window);
    }

    StabilizerConfig cfg_;
    NurdNet<float>* net_ = nullptr;
    const ReferenceStack* external_ = nullptr;
    std::optional<ReferenceStack> implicit_;
    ScanMode mode_;
    long stream_length_ = 0;

    BScan last_{1, 1};
    double rotation_ = 0.0;
    std::vector<double> integral_;
    std::deque<BScan> buffer_;
    long k_ = 0;
};

}  // namespace nurdstab
