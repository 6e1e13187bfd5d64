#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include <nurdstab/net.hpp>
#include <nurdstab/train.hpp>

using namespace nurdstab;
using nn::ConvSpec;
using nn::Tensor;

namespace {

constexpr double kEps = 1e-3;   // central-difference step for single-op checks
constexpr double kTol = 1e-3;   // relative error bound

double rel_err(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-4});
    return std::abs(a - b) / scale;
}

// Central finite difference of f along param[i].
double fd(std::function<double()> f, double& param, double eps = kEps) {
    const double keep = param;
    param = keep + eps;
    const double up = f();
    param = keep - eps;
    const double dn = f();
    param = keep;
    return (up - dn) / (2 * eps);
}

void fill_uniform(std::vector<double>& v, Rng& rng, double lo, double hi) {
    for (auto& x : v) x = rng.uniform(lo, hi);
}

std::vector<std::size_t> pick(std::size_t n, std::size_t count, Rng& rng) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < count; ++i) idx.push_back(rng.uniform_int(n));
    return idx;
}

}  // namespace

TEST_CASE("convolution gradients match finite differences") {
    for (int variant = 0; variant < 2; ++variant) {
        ConvSpec s;
        if (variant == 0) {
            s = {3, 3, 1, 1, 1, 1, 3, 4, false};
        } else {
            s = {5, 4, 2, 2, 2, 1, 2, 3, false};  // strided, asymmetric padding
        }
        Rng rng(100 + variant);
        Tensor<double> in(2, 8, 6, s.cin);
        fill_uniform(in.v, rng, -1.0, 1.0);
        std::vector<double> w(s.weight_count());
        fill_uniform(w, rng, -0.5, 0.5);
        std::vector<double> bias(s.cout);
        fill_uniform(bias, rng, -0.2, 0.2);
        Tensor<double> probe;  // fixed random projection makes the output scalar
        {
            Tensor<double> out;
            nn::conv_forward(in, s, w, &bias, out);
            probe = out;
            fill_uniform(probe.v, rng, -1.0, 1.0);
        }
        auto value = [&] {
            Tensor<double> out;
            nn::conv_forward(in, s, w, &bias, out);
            double acc = 0;
            for (std::size_t i = 0; i < out.size(); ++i) acc += out.v[i] * probe.v[i];
            return acc;
        };

        std::vector<double> dw(w.size(), 0.0), dbias(s.cout, 0.0);
        Tensor<double> din(in.n, in.h, in.w, in.c);
        nn::conv_backward(in, s, w, probe, dw, &dbias, &din);

        for (std::size_t i : pick(w.size(), 20, rng))
            REQUIRE(rel_err(dw[i], fd(value, w[i])) < kTol);
        for (std::size_t i = 0; i < bias.size(); ++i)
            REQUIRE(rel_err(dbias[i], fd(value, bias[i])) < kTol);
        for (std::size_t i : pick(in.size(), 20, rng))
            REQUIRE(rel_err(din.v[i], fd(value, in.v[i])) < kTol);
    }
}

TEST_CASE("batch norm gradients match finite differences through the batch statistics") {
    Rng rng(200);
    Tensor<double> z(3, 4, 2, 5);
    fill_uniform(z.v, rng, -2.0, 2.0);
    std::vector<double> gamma(5), beta(5);
    fill_uniform(gamma, rng, 0.5, 1.5);
    fill_uniform(beta, rng, -0.5, 0.5);
    Tensor<double> probe(3, 4, 2, 5);
    fill_uniform(probe.v, rng, -1.0, 1.0);

    auto value = [&] {
        std::vector<double> rm(5, 0.0), rv(5, 1.0);
        nn::BnCache<double> cache;
        Tensor<double> out;
        nn::batchnorm_forward_train(z, gamma, beta, rm, rv, cache, out);
        double acc = 0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out.v[i] * probe.v[i];
        return acc;
    };

    std::vector<double> rm(5, 0.0), rv(5, 1.0), dgamma(5, 0.0), dbeta(5, 0.0);
    nn::BnCache<double> cache;
    Tensor<double> out, dz;
    nn::batchnorm_forward_train(z, gamma, beta, rm, rv, cache, out);
    nn::batchnorm_backward(cache, gamma, probe, dgamma, dbeta, dz);

    for (int c = 0; c < 5; ++c) {
        REQUIRE(rel_err(dgamma[c], fd(value, gamma[c])) < kTol);
        REQUIRE(rel_err(dbeta[c], fd(value, beta[c])) < kTol);
    }
    for (std::size_t i : pick(z.size(), 25, rng))
        REQUIRE(rel_err(dz.v[i], fd(value, z.v[i])) < kTol);
}

TEST_CASE("leaky relu gradient matches finite differences away from the kink") {
    Rng rng(300);
    Tensor<double> x(1, 4, 4, 3);
    for (auto& v : x.v) {
        v = rng.uniform(0.05, 1.5);
        if (rng.uniform() < 0.5) v = -v;
    }
    Tensor<double> probe(1, 4, 4, 3);
    fill_uniform(probe.v, rng, -1.0, 1.0);
    auto value = [&] {
        Tensor<double> y = x;
        nn::leaky_relu(y);
        double acc = 0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += y.v[i] * probe.v[i];
        return acc;
    };
    Tensor<double> y = x;
    nn::leaky_relu(y);
    Tensor<double> dx = probe;
    nn::leaky_relu_backward(y, dx);
    for (std::size_t i = 0; i < x.size(); ++i) REQUIRE(rel_err(dx.v[i], fd(value, x.v[i])) < kTol);
}

TEST_CASE("loss gradient matches finite differences") {
    Rng rng(400);
    std::vector<MapSample> samples(2);
    for (auto& s : samples) {
        s.height = 8;
        s.width = 64;
        s.map.assign(8 * 64, 0.f);
        s.target.resize(8);
        for (auto& t : s.target) t = static_cast<float>(rng.uniform(-3.0, 3.0));
    }
    std::vector<std::size_t> idx{0, 1};
    Tensor<double> pred(2, 8, 1, 1);
    fill_uniform(pred.v, rng, -3.0, 3.0);
    const double alpha = 0.2;
    auto value = [&] { return nurdstab::detail::batch_loss_grad<double>(pred, samples, idx, 0, alpha, nullptr); };
    Tensor<double> dpred;
    nurdstab::detail::batch_loss_grad(pred, samples, idx, 0, alpha, &dpred);
    for (std::size_t i = 0; i < pred.size(); ++i)
        REQUIRE(rel_err(dpred.v[i], fd(value, pred.v[i])) < kTol);
}

TEST_CASE("full network gradients match finite differences for every layer") {
    // A 1e-3 step is fine for the single-op checks above, but through six
    // norm+leaky stages it sweeps thousands of pre-activations across the
    // kink, so the difference quotient itself is off at the percent level.
    // A smaller step isolates backprop correctness; double precision keeps
    // roundoff far below the tolerance.  A few parameters still sit so close
    // to a kink that even a 1e-6 window straddles it (the loss is genuinely
    // non-differentiable there, so no quotient is meaningful); those are
    // detected by disagreement between two step sizes and skipped, with a cap
    // on how many may be skipped.
    constexpr double kNetEps = 1e-6;
    Rng rng(500);
    auto net = NurdNet<double>::make(501);
    std::vector<MapSample> samples(1);
    samples[0].height = 64;
    samples[0].width = 64;
    samples[0].map.resize(64 * 64);
    for (auto& v : samples[0].map) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    samples[0].target.resize(64);
    for (auto& t : samples[0].target) t = static_cast<float>(rng.uniform(-3.0, 3.0));
    std::vector<std::size_t> idx{0};

    Tensor<double> in(1, 64, 64, 1);
    for (std::size_t i = 0; i < samples[0].map.size(); ++i) in.v[i] = samples[0].map[i];

    auto value = [&] {
        const auto pred = net.forward(in, true);
        return nurdstab::detail::batch_loss_grad<double>(pred, samples, idx, 0, 0.2, nullptr);
    };

    const auto pred = net.forward(in, true);
    Tensor<double> dpred;
    nurdstab::detail::batch_loss_grad(pred, samples, idx, 0, 0.2, &dpred);
    net.zero_grad();
    net.backward(dpred);

    int skipped = 0;
    auto check = [&](double grad, double& param) {
        const double f1 = fd(value, param, kNetEps);
        const double f2 = fd(value, param, 2 * kNetEps);
        if (rel_err(f1, f2) > kTol / 2) {  // kink inside the probe window
            ++skipped;
            return;
        }
        REQUIRE(rel_err(grad, f1) < kTol);
    };

    const auto layers = net.all_layers();
    int probed = 0;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        auto* l = layers[li];
        INFO("layer " << li);
        for (std::size_t i : pick(l->w.size(), 14, rng)) check(l->gw[i], l->w[i]);
        probed += 14;
        if (l->spec.norm_act) {
            for (std::size_t i : pick(l->gamma.size(), 3, rng)) {
                check(l->ggamma[i], l->gamma[i]);
                check(l->gbeta[i], l->beta[i]);
            }
            probed += 6;
        } else {
            for (std::size_t i : pick(l->bias.size(), 6, rng)) check(l->gbias[i], l->bias[i]);
            probed += 6;
        }
    }
    REQUIRE(probed == 13 * 20);
    REQUIRE(skipped * 10 <= probed);
}

TEST_CASE("the network overfits a single batch with windowed monotone loss") {
    Rng rng(600);
    std::vector<MapSample> samples(2);
    for (auto& s : samples) {
        s.height = 64;
        s.width = 64;
        s.map.resize(64 * 64);
        for (auto& v : s.map) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        s.target.resize(64);
        double t = rng.uniform(-4.0, 4.0);
        for (auto& x : s.target) {
            t += rng.uniform(-0.3, 0.3);
            x = static_cast<float>(t);
        }
    }
    std::vector<std::size_t> idx{0, 1};

    auto net = NurdNet<float>::make(601);
    const int steps = 200;
    std::vector<double> losses;
    for (int step = 0; step < steps; ++step) {
        const auto in = nurdstab::detail::batch_tensor<float>(samples, idx, 0, 2);
        const auto pred = net.forward(in, true);
        Tensor<float> dpred;
        losses.push_back(nurdstab::detail::batch_loss_grad(pred, samples, idx, 0, 0.2, &dpred));
        net.zero_grad();
        net.backward(dpred);
        net.sgd_step(0.01, 0.9, 1e-4);
    }
    for (int k = 50; k < steps; ++k) {
        INFO("step " << k);
        REQUIRE(losses[k] < losses[k - 50]);
    }
    REQUIRE(losses.back() < losses.front() * 0.05);
}
