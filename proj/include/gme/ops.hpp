#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "gme/tensor.hpp"

namespace gme::ops {

// ---------------------------------------------------------------------------
// Convolution. Weights are stored as (out_ch, in_ch/groups, k, k); bias as
// (1, out_ch, 1, 1).
// ---------------------------------------------------------------------------

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& wgt, const Tensor<T>* bias,
                 int stride, int pad, int groups) {
    const int out_ch = wgt.b, icg = wgt.c, k = wgt.h;
    if (x.c != icg * groups)
        throw std::invalid_argument("conv2d: input channels " + std::to_string(x.c) +
                                    " do not match weight shape " + wgt.shape_str() +
                                    " with groups " + std::to_string(groups));
    const int ocg = out_ch / groups;
    const int oh = conv_out_dim(x.h, k, stride, pad);
    const int ow = conv_out_dim(x.w, k, stride, pad);
    if (oh < 1 || ow < 1)
        throw std::invalid_argument("conv2d: output would be empty for input " + x.shape_str());
    Tensor<T> y(x.b, out_ch, oh, ow);
    for (int n = 0; n < x.b; ++n)
        for (int g = 0; g < groups; ++g)
            for (int oc = 0; oc < ocg; ++oc) {
                const int ocf = g * ocg + oc;
                const T bv = bias ? bias->v[ocf] : T(0);
                for (int oy = 0; oy < oh; ++oy)
                    for (int ox = 0; ox < ow; ++ox) {
                        T acc = bv;
                        for (int ic = 0; ic < icg; ++ic) {
                            const int icf = g * icg + ic;
                            for (int ky = 0; ky < k; ++ky) {
                                const int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= x.h) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int ix = ox * stride - pad + kx;
                                    if (ix < 0 || ix >= x.w) continue;
                                    acc += wgt.at(ocf, ic, ky, kx) * x.at(n, icf, iy, ix);
                                }
                            }
                        }
                        y.at(n, ocf, oy, ox) = acc;
                    }
            }
    return y;
}

// Accumulates weight/bias gradients into gw/gb; returns input gradient.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& wgt,
                          int stride, int pad, int groups, Tensor<T>& gw, Tensor<T>* gb) {
    const int out_ch = wgt.b, icg = wgt.c, k = wgt.h;
    const int ocg = out_ch / groups;
    Tensor<T> gx = Tensor<T>::zeros_like(x);
    for (int n = 0; n < x.b; ++n)
        for (int g = 0; g < groups; ++g)
            for (int oc = 0; oc < ocg; ++oc) {
                const int ocf = g * ocg + oc;
                for (int oy = 0; oy < gy.h; ++oy)
                    for (int ox = 0; ox < gy.w; ++ox) {
                        const T go = gy.at(n, ocf, oy, ox);
                        if (gb) gb->v[ocf] += go;
                        for (int ic = 0; ic < icg; ++ic) {
                            const int icf = g * icg + ic;
                            for (int ky = 0; ky < k; ++ky) {
                                const int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= x.h) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int ix = ox * stride - pad + kx;
                                    if (ix < 0 || ix >= x.w) continue;
                                    gw.at(ocf, ic, ky, kx) += go * x.at(n, icf, iy, ix);
                                    gx.at(n, icf, iy, ix) += go * wgt.at(ocf, ic, ky, kx);
                                }
                            }
                        }
                    }
            }
    return gx;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (T& t : y.v) t = t > T(0) ? t : T(0);
    return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& gy, const Tensor<T>& x) {
    Tensor<T> gx = gy;
    for (size_t i = 0; i < gx.v.size(); ++i)
        if (x.v[i] <= T(0)) gx.v[i] = T(0);
    return gx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    Tensor<T> y = x;
    for (T& t : y.v) t = T(1) / (T(1) + std::exp(-t));
    return y;
}

// gy through the gate given the cached sigmoid *output*.
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& gy, const Tensor<T>& y) {
    Tensor<T> gx = gy;
    for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= y.v[i] * (T(1) - y.v[i]);
    return gx;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// (B,C,H,W) -> (B,C,1,1), mean over H,W
template <typename T>
Tensor<T> avgpool_hw(const Tensor<T>& x) {
    Tensor<T> y(x.b, x.c, 1, 1);
    const T inv = T(1) / static_cast<T>(x.h * x.w);
    for (int n = 0; n < x.b; ++n)
        for (int ch = 0; ch < x.c; ++ch) {
            T acc = T(0);
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) acc += x.at(n, ch, i, j);
            y.at(n, ch, 0, 0) = acc * inv;
        }
    return y;
}

template <typename T>
Tensor<T> avgpool_hw_backward(const Tensor<T>& gy, int h, int w) {
    Tensor<T> gx(gy.b, gy.c, h, w);
    const T inv = T(1) / static_cast<T>(h * w);
    for (int n = 0; n < gy.b; ++n)
        for (int ch = 0; ch < gy.c; ++ch) {
            const T g = gy.at(n, ch, 0, 0) * inv;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) gx.at(n, ch, i, j) = g;
        }
    return gx;
}

// (B,C,H,W) -> (B,C,1,1), max over H,W; argmax recorded as flat h*w index.
template <typename T>
Tensor<T> maxpool_hw(const Tensor<T>& x, std::vector<int>& argmax) {
    Tensor<T> y(x.b, x.c, 1, 1);
    argmax.assign(static_cast<size_t>(x.b) * x.c, 0);
    for (int n = 0; n < x.b; ++n)
        for (int ch = 0; ch < x.c; ++ch) {
            T best = x.at(n, ch, 0, 0);
            int bi = 0;
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) {
                    const T t = x.at(n, ch, i, j);
                    if (t > best) {
                        best = t;
                        bi = i * x.w + j;
                    }
                }
            y.at(n, ch, 0, 0) = best;
            argmax[static_cast<size_t>(n) * x.c + ch] = bi;
        }
    return y;
}

template <typename T>
Tensor<T> maxpool_hw_backward(const Tensor<T>& gy, const std::vector<int>& argmax,
                              int h, int w) {
    Tensor<T> gx(gy.b, gy.c, h, w);
    for (int n = 0; n < gy.b; ++n)
        for (int ch = 0; ch < gy.c; ++ch) {
            const int f = argmax[static_cast<size_t>(n) * gy.c + ch];
            gx.at(n, ch, f / w, f % w) += gy.at(n, ch, 0, 0);
        }
    return gx;
}

// (B,C,H,W) -> (B,1,H,W), mean over channels
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
    Tensor<T> y(x.b, 1, x.h, x.w);
    const T inv = T(1) / static_cast<T>(x.c);
    for (int n = 0; n < x.b; ++n)
        for (int ch = 0; ch < x.c; ++ch)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) y.at(n, 0, i, j) += x.at(n, ch, i, j) * inv;
    return y;
}

template <typename T>
Tensor<T> channel_mean_backward(const Tensor<T>& gy, int c) {
    Tensor<T> gx(gy.b, c, gy.h, gy.w);
    const T inv = T(1) / static_cast<T>(c);
    for (int n = 0; n < gy.b; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < gy.h; ++i)
                for (int j = 0; j < gy.w; ++j) gx.at(n, ch, i, j) = gy.at(n, 0, i, j) * inv;
    return gx;
}

// (B,C,H,W) -> (B,1,H,W), max over channels; arg channel per (b,h,w).
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x, std::vector<int>& argc) {
    Tensor<T> y(x.b, 1, x.h, x.w);
    argc.assign(static_cast<size_t>(x.b) * x.h * x.w, 0);
    for (int n = 0; n < x.b; ++n)
        for (int i = 0; i < x.h; ++i)
            for (int j = 0; j < x.w; ++j) {
                T best = x.at(n, 0, i, j);
                int bc = 0;
                for (int ch = 1; ch < x.c; ++ch) {
                    const T t = x.at(n, ch, i, j);
                    if (t > best) {
                        best = t;
                        bc = ch;
                    }
                }
                y.at(n, 0, i, j) = best;
                argc[(static_cast<size_t>(n) * x.h + i) * x.w + j] = bc;
            }
    return y;
}

template <typename T>
Tensor<T> channel_max_backward(const Tensor<T>& gy, const std::vector<int>& argc, int c) {
    Tensor<T> gx(gy.b, c, gy.h, gy.w);
    for (int n = 0; n < gy.b; ++n)
        for (int i = 0; i < gy.h; ++i)
            for (int j = 0; j < gy.w; ++j) {
                const int bc = argc[(static_cast<size_t>(n) * gy.h + i) * gy.w + j];
                gx.at(n, bc, i, j) += gy.at(n, 0, i, j);
            }
    return gx;
}

// 2x2 average pooling, stride 2 (trailing odd row/column dropped).
template <typename T>
Tensor<T> avgpool2(const Tensor<T>& x) {
    const int oh = x.h / 2, ow = x.w / 2;
    Tensor<T> y(x.b, x.c, oh, ow);
    for (int n = 0; n < x.b; ++n)
        for (int ch = 0; ch < x.c; ++ch)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j)
                    y.at(n, ch, i, j) =
                        (x.at(n, ch, 2 * i, 2 * j) + x.at(n, ch, 2 * i, 2 * j + 1) +
                         x.at(n, ch, 2 * i + 1, 2 * j) + x.at(n, ch, 2 * i + 1, 2 * j + 1)) *
                        T(0.25);
    return y;
}

template <typename T>
Tensor<T> avgpool2_backward(const Tensor<T>& gy, int h, int w) {
    Tensor<T> gx(gy.b, gy.c, h, w);
    for (int n = 0; n < gy.b; ++n)
        for (int ch = 0; ch < gy.c; ++ch)
            for (int i = 0; i < gy.h; ++i)
                for (int j = 0; j < gy.w; ++j) {
                    const T g = gy.at(n, ch, i, j) * T(0.25);
                    gx.at(n, ch, 2 * i, 2 * j) = g;
                    gx.at(n, ch, 2 * i, 2 * j + 1) = g;
                    gx.at(n, ch, 2 * i + 1, 2 * j) = g;
                    gx.at(n, ch, 2 * i + 1, 2 * j + 1) = g;
                }
    return gx;
}

// Nearest-neighbor resize to an explicit target size.
template <typename T>
Tensor<T> resize_nearest(const Tensor<T>& x, int th, int tw) {
    Tensor<T> y(x.b, x.c, th, tw);
    for (int n = 0; n < x.b; ++n)
        for (int ch = 0; ch < x.c; ++ch)
            for (int i = 0; i < th; ++i) {
                const int si = std::min(x.h - 1, i * x.h / th);
                for (int j = 0; j < tw; ++j) {
                    const int sj = std::min(x.w - 1, j * x.w / tw);
                    y.at(n, ch, i, j) = x.at(n, ch, si, sj);
                }
            }
    return y;
}

template <typename T>
Tensor<T> resize_nearest_backward(const Tensor<T>& gy, int h, int w) {
    Tensor<T> gx(gy.b, gy.c, h, w);
    for (int n = 0; n < gy.b; ++n)
        for (int ch = 0; ch < gy.c; ++ch)
            for (int i = 0; i < gy.h; ++i) {
                const int si = std::min(h - 1, i * h / gy.h);
                for (int j = 0; j < gy.w; ++j) {
                    const int sj = std::min(w - 1, j * w / gy.w);
                    gx.at(n, ch, si, sj) += gy.at(n, ch, i, j);
                }
            }
    return gx;
}

// ---------------------------------------------------------------------------
// Broadcast multiply: g has shape (B,C,1,1) or (B,1,H,W) (each dim equal to
// x's or exactly 1).
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> bmul(const Tensor<T>& x, const Tensor<T>& g) {
    if (g.b != x.b || (g.c != x.c && g.c != 1) || (g.h != x.h && g.h != 1) ||
        (g.w != x.w && g.w != 1))
        throw std::invalid_argument("bmul: cannot broadcast " + g.shape_str() + " over " +
                                    x.shape_str());
    Tensor<T> y = Tensor<T>::zeros_like(x);
    for (int n = 0; n < x.b; ++n)
        for (int ch = 0; ch < x.c; ++ch)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j)
                    y.at(n, ch, i, j) =
                        x.at(n, ch, i, j) *
                        g.at(n, g.c == 1 ? 0 : ch, g.h == 1 ? 0 : i, g.w == 1 ? 0 : j);
    return y;
}

template <typename T>
void bmul_backward(const Tensor<T>& gy, const Tensor<T>& x, const Tensor<T>& g,
                   Tensor<T>& gx, Tensor<T>& gg) {
    gx = Tensor<T>::zeros_like(x);
    gg = Tensor<T>::zeros_like(g);
    for (int n = 0; n < x.b; ++n)
        for (int ch = 0; ch < x.c; ++ch)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) {
                    const int gc = g.c == 1 ? 0 : ch, gh = g.h == 1 ? 0 : i,
                              gw = g.w == 1 ? 0 : j;
                    const T gyv = gy.at(n, ch, i, j);
                    gx.at(n, ch, i, j) = gyv * g.at(n, gc, gh, gw);
                    gg.at(n, gc, gh, gw) += gyv * x.at(n, ch, i, j);
                }
}

// ---------------------------------------------------------------------------
// Channel concat / slice
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> concat_c(const std::vector<const Tensor<T>*>& parts) {
    int ctot = 0;
    for (const auto* p : parts) ctot += p->c;
    Tensor<T> y(parts[0]->b, ctot, parts[0]->h, parts[0]->w);
    int off = 0;
    for (const auto* p : parts) {
        for (int n = 0; n < p->b; ++n)
            for (int ch = 0; ch < p->c; ++ch)
                for (int i = 0; i < p->h; ++i)
                    for (int j = 0; j < p->w; ++j)
                        y.at(n, off + ch, i, j) = p->at(n, ch, i, j);
        off += p->c;
    }
    return y;
}

template <typename T>
Tensor<T> slice_c(const Tensor<T>& x, int from, int count) {
    Tensor<T> y(x.b, count, x.h, x.w);
    for (int n = 0; n < x.b; ++n)
        for (int ch = 0; ch < count; ++ch)
            for (int i = 0; i < x.h; ++i)
                for (int j = 0; j < x.w; ++j) y.at(n, ch, i, j) = x.at(n, from + ch, i, j);
    return y;
}

// Adds src into dst's channel window [from, from+src.c).
template <typename T>
void add_into_slice_c(Tensor<T>& dst, const Tensor<T>& src, int from) {
    for (int n = 0; n < src.b; ++n)
        for (int ch = 0; ch < src.c; ++ch)
            for (int i = 0; i < src.h; ++i)
                for (int j = 0; j < src.w; ++j) dst.at(n, from + ch, i, j) += src.at(n, ch, i, j);
}

}  // namespace gme::ops
