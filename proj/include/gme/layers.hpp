#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gme/ops.hpp"
#include "gme/tensor.hpp"

namespace gme {

template <typename T>
struct Conv2d {
    int in_ch = 0, out_ch = 0, k = 0, stride = 1, pad = 0, groups = 1;
    bool has_bias = true;
    Param<T> weight, bias;

    Conv2d() = default;
    Conv2d(std::string name, int in, int out, int kernel, int stride_ = 1, int pad_ = -1,
           int groups_ = 1, bool bias_ = true)
        : in_ch(in), out_ch(out), k(kernel), stride(stride_),
          pad(pad_ < 0 ? kernel / 2 : pad_), groups(groups_), has_bias(bias_) {
        if (in % groups != 0 || out % groups != 0)
            throw std::invalid_argument("Conv2d " + name + ": channels not divisible by groups");
        weight.init_shape(name + ".weight", out, in / groups, kernel, kernel);
        if (has_bias) bias.init_shape(name + ".bias", 1, out, 1, 1);
    }

    // Kaiming-normal, fan-out mode; biases start at zero.
    void init(Rng& rng) {
        const double fan_out = static_cast<double>(k) * k * out_ch / groups;
        rng.fill_normal(weight.value, std::sqrt(2.0 / fan_out));
        if (has_bias) bias.value.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, Tensor<T>& xcache) {
        xcache = x;
        return ops::conv2d(x, weight.value, has_bias ? &bias.value : nullptr, stride, pad,
                           groups);
    }

    Tensor<T> backward(const Tensor<T>& gy, const Tensor<T>& xcache) {
        return ops::conv2d_backward(gy, xcache, weight.value, stride, pad, groups,
                                    weight.grad, has_bias ? &bias.grad : nullptr);
    }

    void collect_params(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        if (has_bias) out.push_back(&bias);
    }

    size_t param_count() const { return weight.count() + (has_bias ? bias.count() : 0); }

    // multiply-accumulates per image for an (h, w) input
    long long macs(int h, int w) const {
        const long long oh = ops::conv_out_dim(h, k, stride, pad);
        const long long ow = ops::conv_out_dim(w, k, stride, pad);
        return oh * ow * out_ch * (static_cast<long long>(in_ch) / groups) * k * k;
    }
};

template <typename T>
struct Linear {
    int in_dim = 0, out_dim = 0;
    Param<T> weight, bias;  // weight (out, in, 1, 1); bias (1, out, 1, 1)

    Linear() = default;
    Linear(std::string name, int in, int out) : in_dim(in), out_dim(out) {
        weight.init_shape(name + ".weight", out, in, 1, 1);
        bias.init_shape(name + ".bias", 1, out, 1, 1);
    }

    void init(Rng& rng) {
        rng.fill_normal(weight.value, std::sqrt(2.0 / in_dim));
        bias.value.fill(T(0));
    }

    // x: (B, in, 1, 1) -> (B, out, 1, 1)
    Tensor<T> forward(const Tensor<T>& x, Tensor<T>& xcache) {
        if (x.c != in_dim || x.h != 1 || x.w != 1)
            throw std::invalid_argument("Linear " + weight.name + ": bad input " +
                                        x.shape_str());
        xcache = x;
        Tensor<T> y(x.b, out_dim, 1, 1);
        for (int n = 0; n < x.b; ++n)
            for (int o = 0; o < out_dim; ++o) {
                T acc = bias.value.v[o];
                for (int i = 0; i < in_dim; ++i)
                    acc += weight.value.at(o, i, 0, 0) * x.at(n, i, 0, 0);
                y.at(n, o, 0, 0) = acc;
            }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, const Tensor<T>& xcache) {
        Tensor<T> gx = Tensor<T>::zeros_like(xcache);
        for (int n = 0; n < gy.b; ++n)
            for (int o = 0; o < out_dim; ++o) {
                const T g = gy.at(n, o, 0, 0);
                bias.grad.v[o] += g;
                for (int i = 0; i < in_dim; ++i) {
                    weight.grad.at(o, i, 0, 0) += g * xcache.at(n, i, 0, 0);
                    gx.at(n, i, 0, 0) += g * weight.value.at(o, i, 0, 0);
                }
            }
        return gx;
    }

    void collect_params(std::vector<Param<T>*>& out) {
        out.push_back(&weight);
        out.push_back(&bias);
    }

    size_t param_count() const { return weight.count() + bias.count(); }
    long long macs() const { return static_cast<long long>(in_dim) * out_dim; }
};

// Per-channel batch normalization over (B, H, W).
template <typename T>
struct BatchNorm2d {
    int ch = 0;
    T eps = T(1e-5);
    T momentum = T(0.1);
    bool training = true;
    Param<T> gamma, beta;
    Tensor<T> running_mean, running_var;  // buffers, not trained

    struct Cache {
        Tensor<T> xhat;
        std::vector<T> invstd;
        int count = 0;
    };

    BatchNorm2d() = default;
    explicit BatchNorm2d(std::string name, int c) : ch(c) {
        gamma.init_shape(name + ".gamma", 1, c, 1, 1);
        beta.init_shape(name + ".beta", 1, c, 1, 1);
        gamma.value.fill(T(1));
        running_mean = Tensor<T>(1, c, 1, 1);
        running_var = Tensor<T>(1, c, 1, 1);
        running_var.fill(T(1));
    }

    Tensor<T> forward(const Tensor<T>& x, Cache& cache) {
        Tensor<T> y = Tensor<T>::zeros_like(x);
        cache.xhat = Tensor<T>::zeros_like(x);
        cache.invstd.assign(ch, T(0));
        cache.count = x.b * x.h * x.w;
        const T invn = T(1) / static_cast<T>(cache.count);
        for (int c = 0; c < ch; ++c) {
            T mean, var;
            if (training) {
                T s = T(0), s2 = T(0);
                for (int n = 0; n < x.b; ++n)
                    for (int i = 0; i < x.h; ++i)
                        for (int j = 0; j < x.w; ++j) {
                            const T t = x.at(n, c, i, j);
                            s += t;
                            s2 += t * t;
                        }
                mean = s * invn;
                var = s2 * invn - mean * mean;
                if (var < T(0)) var = T(0);
                running_mean.v[c] = (T(1) - momentum) * running_mean.v[c] + momentum * mean;
                running_var.v[c] = (T(1) - momentum) * running_var.v[c] + momentum * var;
            } else {
                mean = running_mean.v[c];
                var = running_var.v[c];
            }
            const T invstd = T(1) / std::sqrt(var + eps);
            cache.invstd[c] = invstd;
            const T g = gamma.value.v[c], b = beta.value.v[c];
            for (int n = 0; n < x.b; ++n)
                for (int i = 0; i < x.h; ++i)
                    for (int j = 0; j < x.w; ++j) {
                        const T xh = (x.at(n, c, i, j) - mean) * invstd;
                        cache.xhat.at(n, c, i, j) = xh;
                        y.at(n, c, i, j) = g * xh + b;
                    }
        }
        return y;
    }

    Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) {
        Tensor<T> gx = Tensor<T>::zeros_like(gy);
        const T invn = T(1) / static_cast<T>(cache.count);
        for (int c = 0; c < ch; ++c) {
            T sg = T(0), sgx = T(0);
            for (int n = 0; n < gy.b; ++n)
                for (int i = 0; i < gy.h; ++i)
                    for (int j = 0; j < gy.w; ++j) {
                        const T g = gy.at(n, c, i, j);
                        sg += g;
                        sgx += g * cache.xhat.at(n, c, i, j);
                    }
            gamma.grad.v[c] += sgx;
            beta.grad.v[c] += sg;
            const T gm = gamma.value.v[c] * cache.invstd[c];
            if (training) {
                for (int n = 0; n < gy.b; ++n)
                    for (int i = 0; i < gy.h; ++i)
                        for (int j = 0; j < gy.w; ++j)
                            gx.at(n, c, i, j) =
                                gm * (gy.at(n, c, i, j) - sg * invn -
                                      cache.xhat.at(n, c, i, j) * sgx * invn);
            } else {
                for (int n = 0; n < gy.b; ++n)
                    for (int i = 0; i < gy.h; ++i)
                        for (int j = 0; j < gy.w; ++j) gx.at(n, c, i, j) = gm * gy.at(n, c, i, j);
            }
        }
        return gx;
    }

    void collect_params(std::vector<Param<T>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }

    size_t param_count() const { return gamma.count() + beta.count(); }
};

}  // namespace gme
