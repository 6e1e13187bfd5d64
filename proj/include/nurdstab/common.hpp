#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nurdstab {

// Caller broke a documented precondition (bad sizes, non-finite inputs, ...).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A rotation/NURD estimate could not be produced for this frame; callers fall
// back to "no update" rather than aborting the stream.
class EstimationUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A metric is undefined on this input (e.g. too many featureless columns).
class MetricUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CalibrationError : public std::runtime_error {
public:
    CalibrationError(const std::string& msg, long frame) : std::runtime_error(msg), frame_index(frame) {}
    long frame_index;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Circular row index. H is a period, i may be any (possibly negative) offset.
inline int wrap_index(long long i, int h) {
    long long m = i % h;
    if (m < 0) m += h;
    return static_cast<int>(m);
}

// Deterministic RNG used everywhere randomness is needed. std::* distributions
// are implementation-defined, so sampling is done by hand: 53-bit uniforms,
// Box-Muller normals, and rejection-free bounded ints via 128-bit multiply.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed), seed_(seed) {}

    std::uint64_t bits() { return gen_(); }

    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // Box-Muller; u clamped away from 0 so log stays finite.
        double u = uniform();
        if (u < 0x1.0p-53) u = 0x1.0p-53;
        double v = uniform();
        double r = std::sqrt(-2.0 * std::log(u));
        double a = 6.283185307179586476925286766559 * v;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Uniform in [0, n). Lemire multiply-shift; tiny modulo bias (< 2^-64) is
    // irrelevant here and buys platform-independent output.
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>(gen_()) * n) >> 64);
    }

    // Independent child stream; mixing constants from splitmix64.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

private:
    std::mt19937_64 gen_;
    std::uint64_t seed_;
    double spare_ = 0;
    bool have_spare_ = false;
};

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = rng.uniform_int(i);
        std::swap(v[i - 1], v[j]);
    }
}

inline int thread_count() {
    if (const char* env = std::getenv("NURDSTAB_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

// Splits [0, n) into contiguous chunks and runs body(begin, end) on each, on
// up to thread_count() threads. Only used where chunks write disjoint data,
// so results do not depend on the thread count.
template <class Body>
void parallel_for(long long n, Body&& body) {
    int workers = thread_count();
    if (n <= 0) return;
    if (workers <= 1 || n == 1) {
        body(0LL, n);
        return;
    }
    if (workers > n) workers = static_cast<int>(n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    long long chunk = (n + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        long long b = t * chunk;
        long long e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace nurdstab
