#pragma once

#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include "net.hpp"

namespace nurdstab {

struct TrainConfig {
    int epochs = 12;
    int batch_size = 8;
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double alpha = 0.2;          // smoothness weight inside the loss
    double lr_drop_factor = 0.1;  // applied to the last (1 - lr_drop_at) of epochs
    double lr_drop_at = 0.7;
    std::uint64_t seed = 1;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double val_l2 = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_val_l2 = std::numeric_limits<double>::infinity();
};

namespace detail {

template <class T>
nn::Tensor<T> batch_tensor(const std::vector<MapSample>& samples,
                           const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
    const MapSample& first = samples[idx[begin]];
    nn::Tensor<T> t(static_cast<int>(end - begin), first.height, first.width, 1);
    for (std::size_t s = begin; s < end; ++s) {
        const MapSample& m = samples[idx[s]];
        if (m.height != first.height || m.width != first.width)
            throw ContractError("train: all samples in one run must share the map shape");
        if (m.map.size() != static_cast<std::size_t>(m.height) * m.width ||
            m.target.size() != static_cast<std::size_t>(m.height))
            throw ContractError("train: sample buffers disagree with the declared shape");
        T* dst = t.v.data() + (s - begin) * t.size() / t.n;
        for (std::size_t i = 0; i < m.map.size(); ++i) dst[i] = static_cast<T>(m.map[i]);
    }
    return t;
}

// Composite loss over a batch of predictions plus its gradient; both averaged
// over the batch. Mirrors warp_loss().
template <class T>
double batch_loss_grad(const nn::Tensor<T>& pred, const std::vector<MapSample>& samples,
                       const std::vector<std::size_t>& idx, std::size_t begin, double alpha,
                       nn::Tensor<T>* dpred) {
    const int b = pred.n, h = pred.h;
    if (dpred) *dpred = nn::Tensor<T>(b, h, 1, 1);
    const double inv_b = 1.0 / b;
    double total = 0;
    for (int s = 0; s < b; ++s) {
        const MapSample& m = samples[idx[begin + s]];
        double l2 = 0, lc = 0;
        for (int i = 0; i < h; ++i) {
            const double d = static_cast<double>(pred.at(s, i, 0, 0)) - m.target[i];
            l2 += d * d;
            if (dpred)
                dpred->at(s, i, 0, 0) += static_cast<T>(2.0 * (1.0 - alpha) * d / h * inv_b);
        }
        for (int i = 0; i + 1 < h; ++i) {
            const double d = static_cast<double>(pred.at(s, i, 0, 0)) - pred.at(s, i + 1, 0, 0);
            lc += d * d;
            if (dpred) {
                const T g = static_cast<T>(2.0 * alpha * d / (h - 1) * inv_b);
                dpred->at(s, i, 0, 0) += g;
                dpred->at(s, i + 1, 0, 0) -= g;
            }
        }
        total += (1.0 - alpha) * l2 / h + alpha * lc / (h - 1);
    }
    return total * inv_b;
}

}  // namespace detail

// Mean squared error of the net's predictions against targets over a subset,
// in A-line units squared, using inference-mode statistics.
template <class T>
double evaluate_l2(NurdNet<T>& net, const std::vector<MapSample>& samples,
                   const std::vector<std::size_t>& idx, int batch_size = 8) {
    if (idx.empty()) throw ContractError("evaluate_l2: empty index set");
    double total = 0;
    for (std::size_t b = 0; b < idx.size(); b += static_cast<std::size_t>(batch_size)) {
        const std::size_t e = std::min(idx.size(), b + static_cast<std::size_t>(batch_size));
        const auto in = detail::batch_tensor<T>(samples, idx, b, e);
        const auto pred = net.forward_eval(in);
        for (std::size_t s = b; s < e; ++s) {
            const MapSample& m = samples[idx[s]];
            double l2 = 0;
            for (int i = 0; i < pred.h; ++i) {
                const double d = static_cast<double>(pred.at(static_cast<int>(s - b), i, 0, 0)) - m.target[i];
                l2 += d * d;
            }
            total += l2 / pred.h;
        }
    }
    return total / idx.size();
}

// Momentum SGD over the sample subset `train_idx`, checkpointing on the best
// validation MSE and restoring that checkpoint before returning. Streams
// "epoch,train_loss,val_l2" rows to `csv` when given.
template <class T>
TrainReport train_nurd_net(NurdNet<T>& net, const std::vector<MapSample>& samples,
                           const std::vector<std::size_t>& train_idx,
                           const std::vector<std::size_t>& val_idx, const TrainConfig& cfg,
                           std::ostream* csv = nullptr) {
    if (train_idx.empty() || val_idx.empty())
        throw ContractError("train: train and validation sets must be non-empty");
    if (cfg.epochs <= 0 || cfg.batch_size <= 0) throw ContractError("train: bad epoch/batch config");
    for (std::size_t i : train_idx)
        if (i >= samples.size()) throw ContractError("train: index out of range");
    for (std::size_t i : val_idx)
        if (i >= samples.size()) throw ContractError("train: index out of range");

    Rng rng(cfg.seed);
    TrainReport report;
    std::vector<std::vector<T>> best;
    std::vector<std::size_t> order = train_idx;
    const int drop_epoch = static_cast<int>(std::floor(cfg.lr_drop_at * cfg.epochs));
    if (csv) *csv << "epoch,train_loss,val_l2\n";

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr =
            epoch >= drop_epoch ? cfg.learning_rate * cfg.lr_drop_factor : cfg.learning_rate;
        Rng erng = rng.fork(static_cast<std::uint64_t>(epoch));
        shuffle(order, erng);

        double loss_sum = 0;
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
            const auto in = detail::batch_tensor<T>(samples, order, b, e);
            const auto pred = net.forward(in, true);
            nn::Tensor<T> dpred;
            const double loss = detail::batch_loss_grad(pred, samples, order, b, cfg.alpha, &dpred);
            loss_sum += loss * static_cast<double>(e - b);
            net.zero_grad();
            net.backward(dpred);
            net.sgd_step(lr, cfg.momentum, cfg.weight_decay);
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = loss_sum / static_cast<double>(order.size());
        st.val_l2 = evaluate_l2(net, samples, val_idx, cfg.batch_size);
        report.epochs.push_back(st);
        if (csv) {
            *csv << st.epoch << ',' << st.train_loss << ',' << st.val_l2 << '\n';
            csv->flush();
        }
        if (st.val_l2 < report.best_val_l2) {
            report.best_val_l2 = st.val_l2;
            report.best_epoch = epoch;
            best = net.snapshot();
        }
    }
    if (!best.empty()) net.restore(best);
    return report;
}

}  // namespace nurdstab
