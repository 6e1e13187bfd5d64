#pragma once

#include <algorithm>
#include <cmath>
#include <type_traits>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <vector>

#include "correlation.hpp"
#include "frame.hpp"

namespace nurdstab {

// One training example: a correlation map and the warp that corrects its frame
// onto the reference the map was computed against.
struct MapSample {
    std::vector<float> map;     // height x width, row-major
    std::vector<float> target;  // height entries
    int height = 0, width = 0;
    int source_id = 0;  // identity of the originating clean stream
};

namespace nn {

template <class T>
struct Tensor {
    int n = 0, h = 0, w = 0, c = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int n_, int h_, int w_, int c_)
        : n(n_), h(h_), w(w_), c(c_),
          v(static_cast<std::size_t>(n_) * h_ * w_ * c_, T(0)) {}

    T& at(int s, int y, int x, int ch) {
        return v[((static_cast<std::size_t>(s) * h + y) * w + x) * c + ch];
    }
    T at(int s, int y, int x, int ch) const {
        return v[((static_cast<std::size_t>(s) * h + y) * w + x) * c + ch];
    }
    T* ptr(int s, int y, int x) { return v.data() + ((static_cast<std::size_t>(s) * h + y) * w + x) * c; }
    const T* ptr(int s, int y, int x) const {
        return v.data() + ((static_cast<std::size_t>(s) * h + y) * w + x) * c;
    }
    std::size_t size() const { return v.size(); }
    void zero() { std::fill(v.begin(), v.end(), T(0)); }
};

struct ConvSpec {
    int kh = 1, kw = 1;   // kernel extent (rows, columns)
    int sv = 1, sh = 1;   // stride
    int pv = 0, ph = 0;   // padding: vertical is circular, horizontal zero-fill
    int cin = 1, cout = 1;
    bool norm_act = true;  // batch norm + leaky relu follow; plain biased conv otherwise

    int out_h(int in_h) const { return (in_h + 2 * pv - kh) / sv + 1; }
    int out_w(int in_w) const { return (in_w + 2 * ph - kw) / sh + 1; }
    std::size_t weight_count() const {
        return static_cast<std::size_t>(cout) * kh * kw * cin;
    }
};

constexpr double kLeakySlope = 0.01;
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

// Convolution with circular vertical padding (the angular axis wraps) and
// zero horizontal padding. Weight layout: [cout][kh][kw][cin].
template <class T>
void conv_forward(const Tensor<T>& in, const ConvSpec& s, const std::vector<T>& w,
                  const std::type_identity_t<std::vector<T>>* bias, Tensor<T>& out) {
    const int oh = s.out_h(in.h), ow = s.out_w(in.w);
    out = Tensor<T>(in.n, oh, ow, s.cout);
    const int cin = s.cin;
    for (int b = 0; b < in.n; ++b) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                T* dst = out.ptr(b, oy, ox);
                for (int co = 0; co < s.cout; ++co) dst[co] = bias ? (*bias)[co] : T(0);
                for (int ky = 0; ky < s.kh; ++ky) {
                    const int iy = wrap_index(oy * s.sv - s.pv + ky, in.h);
                    for (int kx = 0; kx < s.kw; ++kx) {
                        const int ix = ox * s.sh - s.ph + kx;
                        if (ix < 0 || ix >= in.w) continue;
                        const T* src = in.ptr(b, iy, ix);
                        const T* wp = w.data() + (static_cast<std::size_t>(ky) * s.kw + kx) * cin;
                        const std::size_t wstride = static_cast<std::size_t>(s.kh) * s.kw * cin;
                        for (int co = 0; co < s.cout; ++co) {
                            T acc = 0;
                            const T* wr = wp + co * wstride;
                            for (int ci = 0; ci < cin; ++ci) acc += src[ci] * wr[ci];
                            dst[co] += acc;
                        }
                    }
                }
            }
        }
    }
}

// Accumulates dW/dBias and writes dIn (which must be pre-sized and zeroed by
// the caller when accumulation across calls is not wanted).
template <class T>
void conv_backward(const Tensor<T>& in, const ConvSpec& s, const std::vector<T>& w,
                   const Tensor<T>& dout, std::vector<T>& dw,
                   std::type_identity_t<std::vector<T>>* dbias,
                   std::type_identity_t<Tensor<T>>* din) {
    const int oh = dout.h, ow = dout.w, cin = s.cin;
    for (int b = 0; b < in.n; ++b) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const T* g = dout.ptr(b, oy, ox);
                if (dbias)
                    for (int co = 0; co < s.cout; ++co) (*dbias)[co] += g[co];
                for (int ky = 0; ky < s.kh; ++ky) {
                    const int iy = wrap_index(oy * s.sv - s.pv + ky, in.h);
                    for (int kx = 0; kx < s.kw; ++kx) {
                        const int ix = ox * s.sh - s.ph + kx;
                        if (ix < 0 || ix >= in.w) continue;
                        const T* src = in.ptr(b, iy, ix);
                        T* dsrc = din ? din->ptr(b, iy, ix) : nullptr;
                        const std::size_t koff = (static_cast<std::size_t>(ky) * s.kw + kx) * cin;
                        const std::size_t wstride = static_cast<std::size_t>(s.kh) * s.kw * cin;
                        for (int co = 0; co < s.cout; ++co) {
                            const T gc = g[co];
                            if (gc == T(0)) continue;
                            T* dwr = dw.data() + koff + co * wstride;
                            const T* wr = w.data() + koff + co * wstride;
                            for (int ci = 0; ci < cin; ++ci) {
                                dwr[ci] += gc * src[ci];
                                if (dsrc) dsrc[ci] += gc * wr[ci];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
struct BnCache {
    Tensor<T> xhat;
    std::vector<T> inv_std;
};

// Training-mode batch norm over (n, h, w) per channel, biased variance.
template <class T>
void batchnorm_forward_train(const Tensor<T>& z, const std::vector<T>& gamma,
                             const std::vector<T>& beta, std::vector<T>& run_mean,
                             std::vector<T>& run_var, BnCache<T>& cache, Tensor<T>& out) {
    const int ch = z.c;
    const std::size_t m = z.size() / ch;
    cache.xhat = Tensor<T>(z.n, z.h, z.w, z.c);
    cache.inv_std.assign(ch, T(0));
    out = Tensor<T>(z.n, z.h, z.w, z.c);
    std::vector<T> mean(ch, T(0)), var(ch, T(0));
    for (std::size_t i = 0; i < z.size(); ++i) mean[i % ch] += z.v[i];
    for (int c = 0; c < ch; ++c) mean[c] /= static_cast<T>(m);
    for (std::size_t i = 0; i < z.size(); ++i) {
        const T d = z.v[i] - mean[i % ch];
        var[i % ch] += d * d;
    }
    for (int c = 0; c < ch; ++c) {
        var[c] /= static_cast<T>(m);
        cache.inv_std[c] = T(1) / std::sqrt(var[c] + static_cast<T>(kBnEps));
        run_mean[c] = static_cast<T>(1 - kBnMomentum) * run_mean[c] + static_cast<T>(kBnMomentum) * mean[c];
        run_var[c] = static_cast<T>(1 - kBnMomentum) * run_var[c] + static_cast<T>(kBnMomentum) * var[c];
    }
    for (std::size_t i = 0; i < z.size(); ++i) {
        const int c = static_cast<int>(i % ch);
        const T xh = (z.v[i] - mean[c]) * cache.inv_std[c];
        cache.xhat.v[i] = xh;
        out.v[i] = gamma[c] * xh + beta[c];
    }
}

template <class T>
void batchnorm_forward_eval(const Tensor<T>& z, const std::vector<T>& gamma,
                            const std::vector<T>& beta, const std::vector<T>& run_mean,
                            const std::vector<T>& run_var, Tensor<T>& out) {
    const int ch = z.c;
    out = Tensor<T>(z.n, z.h, z.w, z.c);
    std::vector<T> scale(ch), shift(ch);
    for (int c = 0; c < ch; ++c) {
        scale[c] = gamma[c] / std::sqrt(run_var[c] + static_cast<T>(kBnEps));
        shift[c] = beta[c] - scale[c] * run_mean[c];
    }
    for (std::size_t i = 0; i < z.size(); ++i) {
        const int c = static_cast<int>(i % ch);
        out.v[i] = scale[c] * z.v[i] + shift[c];
    }
}

template <class T>
void batchnorm_backward(const BnCache<T>& cache, const std::vector<T>& gamma,
                        const Tensor<T>& dout, std::vector<T>& dgamma, std::vector<T>& dbeta,
                        Tensor<T>& dz) {
    const int ch = cache.xhat.c;
    const std::size_t m = cache.xhat.size() / ch;
    dz = Tensor<T>(cache.xhat.n, cache.xhat.h, cache.xhat.w, cache.xhat.c);
    std::vector<T> sum_dy(ch, T(0)), sum_dy_xhat(ch, T(0));
    for (std::size_t i = 0; i < dout.size(); ++i) {
        const int c = static_cast<int>(i % ch);
        sum_dy[c] += dout.v[i];
        sum_dy_xhat[c] += dout.v[i] * cache.xhat.v[i];
    }
    for (int c = 0; c < ch; ++c) {
        dgamma[c] += sum_dy_xhat[c];
        dbeta[c] += sum_dy[c];
    }
    const T inv_m = T(1) / static_cast<T>(m);
    for (std::size_t i = 0; i < dout.size(); ++i) {
        const int c = static_cast<int>(i % ch);
        dz.v[i] = gamma[c] * cache.inv_std[c] *
                  (dout.v[i] - sum_dy[c] * inv_m - cache.xhat.v[i] * sum_dy_xhat[c] * inv_m);
    }
}

template <class T>
void leaky_relu(Tensor<T>& t) {
    for (auto& v : t.v)
        if (v < T(0)) v *= static_cast<T>(kLeakySlope);
}

// Backward through leaky relu given the layer *output*: the slope is positive,
// so the output sign matches the input sign.
template <class T>
void leaky_relu_backward(const Tensor<T>& out, Tensor<T>& dout) {
    for (std::size_t i = 0; i < out.size(); ++i)
        if (out.v[i] < T(0)) dout.v[i] *= static_cast<T>(kLeakySlope);
}

template <class T>
struct ConvLayer {
    ConvSpec spec;
    std::vector<T> w, bias, gamma, beta, run_mean, run_var;
    // gradient accumulators and momentum buffers, matching the param arrays
    std::vector<T> gw, gbias, ggamma, gbeta;
    std::vector<T> vw, vbias, vgamma, vbeta;

    void allocate() {
        w.assign(spec.weight_count(), T(0));
        gw.assign(w.size(), T(0));
        vw.assign(w.size(), T(0));
        if (spec.norm_act) {
            gamma.assign(spec.cout, T(1));
            beta.assign(spec.cout, T(0));
            run_mean.assign(spec.cout, T(0));
            run_var.assign(spec.cout, T(1));
            ggamma.assign(spec.cout, T(0));
            gbeta.assign(spec.cout, T(0));
            vgamma.assign(spec.cout, T(0));
            vbeta.assign(spec.cout, T(0));
        } else {
            bias.assign(spec.cout, T(0));
            gbias.assign(spec.cout, T(0));
            vbias.assign(spec.cout, T(0));
        }
    }

    void he_init(Rng& rng) {
        const double sigma = std::sqrt(2.0 / (static_cast<double>(spec.kh) * spec.kw * spec.cin));
        for (auto& x : w) x = static_cast<T>(rng.normal(0.0, sigma));
    }
};

}  // namespace nn

// Composite loss for a predicted correction warp: alpha weighs a smoothness
// term (mean squared successive difference) against the plain MSE.
inline double warp_loss(const WarpVector& pred, const WarpVector& truth, double alpha = 0.2) {
    if (pred.size() != truth.size() || pred.empty())
        throw ContractError("warp_loss: length mismatch");
    if (alpha < 0.0 || alpha > 1.0) throw ContractError("warp_loss: alpha outside [0,1]");
    const std::size_t n = pred.size();
    double l2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = pred[i] - truth[i];
        l2 += d * d;
    }
    l2 /= static_cast<double>(n);
    double lc = 0;
    if (n > 1) {
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const double d = pred[i] - pred[i + 1];
            lc += d * d;
        }
        lc /= static_cast<double>(n - 1);
    }
    return alpha * lc + (1.0 - alpha) * l2;
}

// The two-branch correlation-map-to-warp estimator. The left branch collapses
// the shift window per row (kernels 3x4, horizontal stride); the right branch
// collapses the angular axis instead (vertical stride 2 per layer down to
// H/64 rows of width 64, then a row-major flatten back to H), giving it a
// 64-row receptive field per output entry. A 3x1 convolution over the stacked
// branch outputs produces the final per-row correction.
//
// Works on any height that is a positive multiple of 64; the map width must
// be exactly 64 columns.
template <class T>
class NurdNet {
public:
    static constexpr int kWindow = 64;

    static NurdNet make(std::uint64_t seed) {
        NurdNet net;
        net.build();
        Rng rng(seed);
        for (auto* l : net.all_layers()) l->he_init(rng);
        return net;
    }

    // maps: [n, H, 64, 1]. Returns per-sample predictions [n][H]. Training
    // mode uses batch statistics and retains what backward() needs.
    nn::Tensor<T> forward(const nn::Tensor<T>& maps, bool train) {
        check_input(maps.h, maps.w);
        if (maps.c != 1) throw ContractError("NurdNet: input must have one channel");
        ctx_.clear();
        ctx_.resize(13);
        train_mode_ = train;
        input_ = maps;

        // left branch: rows preserved, window collapsed
        nn::Tensor<T> x = maps;
        for (int i = 0; i < 6; ++i) x = run_layer(left_[i], x, ctx_[i]);
        left_out_ = x;  // [n, H, 1, 1]

        // right branch: window preserved, rows collapsed, then flattened back
        nn::Tensor<T> r = maps;
        for (int i = 0; i < 6; ++i) r = run_layer(right_[i], r, ctx_[6 + i]);
        // [n, H/64, 64, 1] -> [n, H, 1, 1]; both are the same linear layout
        r.h = r.h * r.w;
        r.w = 1;
        right_out_ = r;

        nn::Tensor<T> both(maps.n, maps.h, 1, 2);
        for (int s = 0; s < maps.n; ++s)
            for (int y = 0; y < maps.h; ++y) {
                both.at(s, y, 0, 0) = left_out_.at(s, y, 0, 0);
                both.at(s, y, 0, 1) = right_out_.at(s, y, 0, 0);
            }
        stack_in_ = both;
        return run_layer(comb_, both, ctx_[12]);
    }

    // dpred: gradient wrt forward()'s output, same shape. Accumulates into
    // the layers' gradient buffers; call zero_grad() between steps.
    void backward(const nn::Tensor<T>& dpred) {
        if (!train_mode_) throw ContractError("NurdNet: backward needs a training-mode forward");
        nn::Tensor<T> dstack;
        backprop_layer(comb_, stack_in_, ctx_[12], dpred, &dstack);

        nn::Tensor<T> dleft(dstack.n, dstack.h, 1, 1), dright(dstack.n, dstack.h, 1, 1);
        for (int s = 0; s < dstack.n; ++s)
            for (int y = 0; y < dstack.h; ++y) {
                dleft.at(s, y, 0, 0) = dstack.at(s, y, 0, 0);
                dright.at(s, y, 0, 0) = dstack.at(s, y, 0, 1);
            }
        // undo the flatten: [n, H, 1, 1] -> [n, H/64, 64, 1]
        dright.w = kWindow;
        dright.h = dright.h / kWindow;

        nn::Tensor<T> d = dright;
        for (int i = 5; i >= 0; --i) {
            const nn::Tensor<T>& in = i == 0 ? input_ : ctx_[6 + i - 1].out;
            nn::Tensor<T> dnext;
            backprop_layer(right_[i], in, ctx_[6 + i], d, i == 0 ? nullptr : &dnext);
            if (i > 0) d = std::move(dnext);
        }
        d = dleft;
        for (int i = 5; i >= 0; --i) {
            const nn::Tensor<T>& in = i == 0 ? input_ : ctx_[i - 1].out;
            nn::Tensor<T> dnext;
            backprop_layer(left_[i], in, ctx_[i], d, i == 0 ? nullptr : &dnext);
            if (i > 0) d = std::move(dnext);
        }
    }

    void zero_grad() {
        for (auto* l : all_layers()) {
            std::fill(l->gw.begin(), l->gw.end(), T(0));
            std::fill(l->gbias.begin(), l->gbias.end(), T(0));
            std::fill(l->ggamma.begin(), l->ggamma.end(), T(0));
            std::fill(l->gbeta.begin(), l->gbeta.end(), T(0));
        }
    }

    // Momentum SGD with decoupled weight decay on the convolution weights.
    void sgd_step(double lr, double momentum, double weight_decay) {
        auto update = [&](std::vector<T>& p, std::vector<T>& g, std::vector<T>& v, bool decay) {
            for (std::size_t i = 0; i < p.size(); ++i) {
                v[i] = static_cast<T>(momentum) * v[i] + g[i];
                p[i] -= static_cast<T>(lr) * v[i];
                if (decay) p[i] -= static_cast<T>(lr * weight_decay) * p[i];
            }
        };
        for (auto* l : all_layers()) {
            update(l->w, l->gw, l->vw, true);
            if (!l->spec.norm_act) update(l->bias, l->gbias, l->vbias, false);
            if (l->spec.norm_act) {
                update(l->gamma, l->ggamma, l->vgamma, false);
                update(l->beta, l->gbeta, l->vbeta, false);
            }
        }
    }

    // Single-map inference with running statistics.
    WarpVector infer(const CorrelationMap& map) {
        check_input(map.height, map.width);
        nn::Tensor<T> in(1, map.height, map.width, 1);
        for (std::size_t i = 0; i < map.values.size(); ++i) in.v[i] = static_cast<T>(map.values[i]);
        const nn::Tensor<T> out = forward_eval(in);
        WarpVector warp(static_cast<std::size_t>(map.height));
        for (int y = 0; y < map.height; ++y) warp[y] = static_cast<double>(out.at(0, y, 0, 0));
        return warp;
    }

    nn::Tensor<T> forward_eval(const nn::Tensor<T>& maps) { return forward(maps, false); }

    std::vector<nn::ConvLayer<T>*> all_layers() {
        std::vector<nn::ConvLayer<T>*> v;
        for (auto& l : left_) v.push_back(&l);
        for (auto& l : right_) v.push_back(&l);
        v.push_back(&comb_);
        return v;
    }
    std::vector<const nn::ConvLayer<T>*> all_layers() const {
        std::vector<const nn::ConvLayer<T>*> v;
        for (auto& l : left_) v.push_back(&l);
        for (auto& l : right_) v.push_back(&l);
        v.push_back(&comb_);
        return v;
    }

    void save(const std::filesystem::path& path) const;
    static NurdNet load(const std::filesystem::path& path);

    // Copies of every parameter array, for checkpointing.
    std::vector<std::vector<T>> snapshot() const {
        std::vector<std::vector<T>> s;
        for (auto* l : all_layers()) {
            s.push_back(l->w);
            s.push_back(l->bias);
            s.push_back(l->gamma);
            s.push_back(l->beta);
            s.push_back(l->run_mean);
            s.push_back(l->run_var);
        }
        return s;
    }
    void restore(const std::vector<std::vector<T>>& s) {
        std::size_t i = 0;
        for (auto* l : all_layers()) {
            l->w = s[i++];
            l->bias = s[i++];
            l->gamma = s[i++];
            l->beta = s[i++];
            l->run_mean = s[i++];
            l->run_var = s[i++];
        }
    }

private:
    struct LayerCtx {
        nn::BnCache<T> bn;
        nn::Tensor<T> z;    // conv output (norm layers only; kept for bn backward input)
        nn::Tensor<T> out;  // layer output
    };

    static void check_input(int h, int w) {
        if (w != kWindow) throw ContractError("NurdNet: map width must be 64");
        if (h < kWindow || h % kWindow != 0)
            throw ContractError("NurdNet: frame height must be a positive multiple of 64");
    }

    void build() {
        auto L = [](int kh, int kw, int sv, int sh, int pv, int ph, int cin, int cout, bool na) {
            nn::ConvLayer<T> l;
            l.spec = {kh, kw, sv, sh, pv, ph, cin, cout, na};
            l.allocate();
            return l;
        };
        left_[0] = L(3, 4, 1, 2, 1, 1, 1, 8, true);
        left_[1] = L(3, 4, 1, 2, 1, 1, 8, 16, true);
        left_[2] = L(3, 4, 1, 2, 1, 1, 16, 32, true);
        left_[3] = L(3, 4, 1, 2, 1, 1, 32, 64, true);
        left_[4] = L(3, 4, 1, 4, 1, 0, 64, 128, true);
        left_[5] = L(1, 1, 1, 1, 0, 0, 128, 1, false);
        right_[0] = L(7, 3, 2, 1, 3, 1, 1, 8, true);
        right_[1] = L(5, 3, 2, 1, 2, 1, 8, 16, true);
        right_[2] = L(5, 3, 2, 1, 2, 1, 16, 32, true);
        right_[3] = L(3, 3, 2, 1, 1, 1, 32, 64, true);
        right_[4] = L(3, 3, 2, 1, 1, 1, 64, 64, true);
        right_[5] = L(3, 3, 2, 1, 1, 1, 64, 1, false);
        comb_ = L(3, 1, 1, 1, 1, 0, 2, 1, false);
    }

    nn::Tensor<T> run_layer(nn::ConvLayer<T>& l, const nn::Tensor<T>& in, LayerCtx& ctx) {
        if (l.spec.norm_act) {
            nn::conv_forward(in, l.spec, l.w, nullptr, ctx.z);
            if (train_mode_) {
                nn::batchnorm_forward_train(ctx.z, l.gamma, l.beta, l.run_mean, l.run_var, ctx.bn, ctx.out);
            } else {
                nn::batchnorm_forward_eval(ctx.z, l.gamma, l.beta, l.run_mean, l.run_var, ctx.out);
            }
            nn::leaky_relu(ctx.out);
        } else {
            nn::conv_forward(in, l.spec, l.w, &l.bias, ctx.out);
        }
        return ctx.out;
    }

    void backprop_layer(nn::ConvLayer<T>& l, const nn::Tensor<T>& in, LayerCtx& ctx,
                        const nn::Tensor<T>& dout, nn::Tensor<T>* din) {
        if (din) *din = nn::Tensor<T>(in.n, in.h, in.w, in.c);
        if (l.spec.norm_act) {
            nn::Tensor<T> dact = dout;
            nn::leaky_relu_backward(ctx.out, dact);
            nn::Tensor<T> dz;
            nn::batchnorm_backward(ctx.bn, l.gamma, dact, l.ggamma, l.gbeta, dz);
            nn::conv_backward(in, l.spec, l.w, dz, l.gw, nullptr, din);
        } else {
            nn::conv_backward(in, l.spec, l.w, dout, l.gw, &l.gbias, din);
        }
    }

    nn::ConvLayer<T> left_[6], right_[6], comb_;
    std::vector<LayerCtx> ctx_;
    nn::Tensor<T> input_, left_out_, right_out_, stack_in_;
    bool train_mode_ = false;
};

// --- model file --------------------------------------------------------------
//
// Layout: "NNET" magic, u32 version, u32 counts (left, right, combiner), then
// one descriptor per layer (eight i32 geometry fields + u32 flags), then every
// layer's parameter arrays as f32 in descriptor order, then the batch-norm
// running statistics. Integers and floats are little-endian.

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw IoError("model file: truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f32(std::ostream& out, float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(out, u);
}

inline float get_f32(std::istream& in) {
    const std::uint32_t u = get_u32(in);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

template <class T>
void put_array(std::ostream& out, const std::vector<T>& v) {
    for (T x : v) put_f32(out, static_cast<float>(x));
}

template <class T>
void get_array(std::istream& in, std::vector<T>& v) {
    for (auto& x : v) x = static_cast<T>(get_f32(in));
}

}  // namespace detail

template <class T>
void NurdNet<T>::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("model save: cannot open " + path.string());
    out.write("NNET", 4);
    detail::put_u32(out, 1);
    detail::put_u32(out, 6);
    detail::put_u32(out, 6);
    detail::put_u32(out, 1);
    const auto layers = all_layers();
    for (const auto* l : layers) {
        const auto& s = l->spec;
        for (int v : {s.kh, s.kw, s.sv, s.sh, s.pv, s.ph, s.cin, s.cout})
            detail::put_u32(out, static_cast<std::uint32_t>(v));
        detail::put_u32(out, s.norm_act ? 1u : 0u);
    }
    for (const auto* l : layers) {
        detail::put_array(out, l->w);
        if (!l->spec.norm_act) detail::put_array(out, l->bias);
        if (l->spec.norm_act) {
            detail::put_array(out, l->gamma);
            detail::put_array(out, l->beta);
        }
    }
    for (const auto* l : layers) {
        if (l->spec.norm_act) {
            detail::put_array(out, l->run_mean);
            detail::put_array(out, l->run_var);
        }
    }
    if (!out) throw IoError("model save: short write to " + path.string());
}

template <class T>
NurdNet<T> NurdNet<T>::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("model load: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "NNET", 4) != 0) throw IoError("model load: bad magic");
    if (detail::get_u32(in) != 1) throw IoError("model load: unsupported version");
    NurdNet net;
    net.build();
    if (detail::get_u32(in) != 6 || detail::get_u32(in) != 6 || detail::get_u32(in) != 1)
        throw IoError("model load: unexpected branch layout");
    const auto layers = net.all_layers();
    for (auto* l : layers) {
        const auto& s = l->spec;
        for (int v : {s.kh, s.kw, s.sv, s.sh, s.pv, s.ph, s.cin, s.cout})
            if (detail::get_u32(in) != static_cast<std::uint32_t>(v))
                throw IoError("model load: layer geometry disagrees with this implementation");
        if (detail::get_u32(in) != (s.norm_act ? 1u : 0u))
            throw IoError("model load: layer flags disagree with this implementation");
    }
    for (auto* l : layers) {
        detail::get_array(in, l->w);
        if (!l->spec.norm_act) detail::get_array(in, l->bias);
        if (l->spec.norm_act) {
            detail::get_array(in, l->gamma);
            detail::get_array(in, l->beta);
        }
    }
    for (auto* l : layers) {
        if (l->spec.norm_act) {
            detail::get_array(in, l->run_mean);
            detail::get_array(in, l->run_var);
        }
    }
    if (!in) throw IoError("model load: truncated parameters");
    return net;
}

}  // namespace nurdstab
