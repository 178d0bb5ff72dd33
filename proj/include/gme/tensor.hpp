#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gme {

// Dense rank-4 array in (batch, channels, height, width) order. Rank-2 data
// (logits, pooled vectors) lives in the same container with h == w == 1.
template <typename T>
struct Tensor {
    int b = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int b_, int c_, int h_, int w_)
        : b(b_), c(c_), h(h_), w(w_),
          v(static_cast<size_t>(b_) * c_ * h_ * w_, T(0)) {
        if (b_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw std::invalid_argument("Tensor: negative dimension");
    }

    size_t size() const { return v.size(); }

    T& at(int i, int j, int y, int x) {
        return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
    }
    const T& at(int i, int j, int y, int x) const {
        return v[((static_cast<size_t>(i) * c + j) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const {
        return b == o.b && c == o.c && h == o.h && w == o.w;
    }

    std::string shape_str() const {
        return "(" + std::to_string(b) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }

    bool all_finite() const {
        for (const T& x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    void fill(T x) { std::fill(v.begin(), v.end(), x); }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.b, o.c, o.h, o.w); }

    Tensor& operator+=(const Tensor& o) {
        if (!same_shape(o))
            throw std::invalid_argument("Tensor +=: shape mismatch " + shape_str() +
                                        " vs " + o.shape_str());
        for (size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }
};

template <typename T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
    a += b;
    return a;
}

// Deterministic RNG: mt19937_64 bit stream with a hand-rolled Box-Muller so
// draws are identical across standard library implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        // xorshift64* — small, fast, reproducible everywhere.
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // uniform in [0, 1)
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    int uniform_int(int n) {
        if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n <= 0");
        return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0, u2 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void fill_normal(Tensor<T>& t, double stddev) {
        for (T& x : t.v) x = static_cast<T>(normal() * stddev);
    }

    template <typename T>
    void fill_uniform(Tensor<T>& t, double lo, double hi) {
        for (T& x : t.v) x = static_cast<T>(uniform(lo, hi));
    }

    // Fisher-Yates
    template <typename V>
    void shuffle(std::vector<V>& xs) {
        for (size_t i = xs.size(); i > 1; --i) {
            size_t j = next_u64() % i;
            std::swap(xs[i - 1], xs[j]);
        }
    }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Learnable tensor plus its gradient accumulator.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;

    void init_shape(const std::string& n, int b, int c, int h, int w) {
        name = n;
        value = Tensor<T>(b, c, h, w);
        grad = Tensor<T>(b, c, h, w);
    }
    void zero_grad() { grad.fill(T(0)); }
    size_t count() const { return value.size(); }
};

}  // namespace gme
