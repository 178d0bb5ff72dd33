#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gme/tensor.hpp"

namespace gme {

// 8-bit interleaved image; 1 (gray) or 3 (rgb) channels.
struct Image {
    int w = 0, h = 0, ch = 0;
    std::vector<uint8_t> pix;

    Image() = default;
    Image(int w_, int h_, int c_) : w(w_), h(h_), ch(c_), pix(size_t(w_) * h_ * c_, 0) {}
    uint8_t& at(int y, int x, int c) { return pix[(size_t(y) * w + x) * ch + c]; }
    uint8_t at(int y, int x, int c) const { return pix[(size_t(y) * w + x) * ch + c]; }
    bool empty() const { return pix.empty(); }
};

// ---------------------------------------------------------------------------
// Binary PNM (P5/P6) I/O. A lossless, byte-deterministic container keeps the
// fabricated datasets bit-reproducible.
// ---------------------------------------------------------------------------

namespace detail {
inline int pnm_token(std::istream& in) {
    // skips whitespace and '#' comments
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw std::runtime_error("pnm: truncated header");
    int val = 0;
    while (c != EOF && std::isdigit(c)) {
        val = val * 10 + (c - '0');
        c = in.get();
    }
    return val;
}
}  // namespace detail

inline Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("pnm: cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw std::runtime_error("pnm: " + path + " is not a binary PGM/PPM file");
    const int ch = m1 == '6' ? 3 : 1;
    const int w = detail::pnm_token(in);
    const int h = detail::pnm_token(in);
    const int maxval = detail::pnm_token(in);
    if (w < 1 || h < 1 || maxval != 255)
        throw std::runtime_error("pnm: unsupported header in " + path);
    Image img(w, h, ch);
    in.read(reinterpret_cast<char*>(img.pix.data()), static_cast<std::streamsize>(img.pix.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pix.size()))
        throw std::runtime_error("pnm: truncated pixel data in " + path);
    return img;
}

inline void write_pnm(const std::string& path, const Image& img) {
    if (img.empty()) throw std::invalid_argument("pnm: refusing to write empty image");
    if (img.ch != 1 && img.ch != 3)
        throw std::invalid_argument("pnm: unsupported channel count");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("pnm: cannot write " + path);
    out << (img.ch == 3 ? "P6\n" : "P5\n") << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pix.data()),
              static_cast<std::streamsize>(img.pix.size()));
    if (!out) throw std::runtime_error("pnm: write failed for " + path);
}

// Planar double view in [0, 255]; gray inputs are replicated to 3 channels on
// request by the loader, not here.
inline Tensor<double> image_to_plane(const Image& img) {
    Tensor<double> t(1, img.ch, img.h, img.w);
    for (int c = 0; c < img.ch; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) t.at(0, c, y, x) = img.at(y, x, c);
    return t;
}

inline Image plane_to_image(const Tensor<double>& t) {
    Image img(t.w, t.h, t.c);
    for (int c = 0; c < t.c; ++c)
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x) {
                double v = std::llround(t.at(0, c, y, x));
                img.at(y, x, c) = static_cast<uint8_t>(v < 0 ? 0 : v > 255 ? 255 : v);
            }
    return img;
}

// ---------------------------------------------------------------------------
// Bicubic resize, Catmull-Rom kernel (a = -0.5). Tap weights are renormalized
// so constant images are preserved exactly.
// ---------------------------------------------------------------------------

namespace detail {
inline double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::fabs(t);
    if (t <= 1.0) return (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0;
    if (t < 2.0) return a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a;
    return 0.0;
}

struct CubicTaps {
    int idx[4];
    double w[4];
};

inline void cubic_taps(int target, int source, std::vector<CubicTaps>& taps) {
    taps.resize(target);
    const double scale = static_cast<double>(source) / target;
    for (int d = 0; d < target; ++d) {
        const double s = (d + 0.5) * scale - 0.5;
        const int base = static_cast<int>(std::floor(s));
        const double f = s - base;
        double sum = 0.0;
        for (int k = 0; k < 4; ++k) {
            int si = base - 1 + k;
            si = si < 0 ? 0 : si >= source ? source - 1 : si;
            taps[d].idx[k] = si;
            taps[d].w[k] = cubic_kernel(f - (k - 1));
            sum += taps[d].w[k];
        }
        for (int k = 0; k < 4; ++k) taps[d].w[k] /= sum;
    }
}
}  // namespace detail

inline Tensor<double> bicubic_resize(const Tensor<double>& src, int th, int tw) {
    if (src.h < 1 || src.w < 1 || src.size() == 0)
        throw std::invalid_argument("bicubic_resize: empty image");
    if (th < 1 || tw < 1) throw std::invalid_argument("bicubic_resize: empty target");
    std::vector<detail::CubicTaps> ty, tx;
    detail::cubic_taps(th, src.h, ty);
    detail::cubic_taps(tw, src.w, tx);
    // horizontal pass then vertical pass, channels independent
    Tensor<double> mid(src.b, src.c, src.h, tw);
    for (int n = 0; n < src.b; ++n)
        for (int c = 0; c < src.c; ++c)
            for (int y = 0; y < src.h; ++y)
                for (int x = 0; x < tw; ++x) {
                    double acc = 0.0;
                    for (int k = 0; k < 4; ++k)
                        acc += tx[x].w[k] * src.at(n, c, y, tx[x].idx[k]);
                    mid.at(n, c, y, x) = acc;
                }
    Tensor<double> dst(src.b, src.c, th, tw);
    for (int n = 0; n < src.b; ++n)
        for (int c = 0; c < src.c; ++c)
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x) {
                    double acc = 0.0;
                    for (int k = 0; k < 4; ++k)
                        acc += ty[y].w[k] * mid.at(n, c, ty[y].idx[k], x);
                    dst.at(n, c, y, x) = acc;
                }
    return dst;
}

// Resize an 8-bit image (values clamped back to [0, 255] and rounded).
inline Image bicubic_resize(const Image& img, int th, int tw) {
    if (img.empty()) throw std::invalid_argument("bicubic_resize: empty image");
    return plane_to_image(bicubic_resize(image_to_plane(img), th, tw));
}

// ---------------------------------------------------------------------------
// Separable Gaussian blur with replicated edges; sigma = 0 is the identity
// (delta kernel). Kernel weights always sum to 1.
// ---------------------------------------------------------------------------

inline std::vector<double> gaussian_kernel(int ksize, double sigma) {
    if (ksize < 1 || ksize % 2 == 0)
        throw std::invalid_argument("gaussian_kernel: kernel size must be odd and positive");
    if (sigma < 0) throw std::invalid_argument("gaussian_kernel: negative sigma");
    std::vector<double> k(ksize, 0.0);
    const int half = ksize / 2;
    if (sigma == 0.0) {
        k[half] = 1.0;
        return k;
    }
    double sum = 0.0;
    for (int i = 0; i < ksize; ++i) {
        const double d = i - half;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (double& x : k) x /= sum;
    return k;
}

inline Tensor<double> gaussian_blur(const Tensor<double>& src, int ksize, double sigma) {
    const std::vector<double> k = gaussian_kernel(ksize, sigma);
    const int half = ksize / 2;
    Tensor<double> mid = Tensor<double>::zeros_like(src);
    for (int n = 0; n < src.b; ++n)
        for (int c = 0; c < src.c; ++c)
            for (int y = 0; y < src.h; ++y)
                for (int x = 0; x < src.w; ++x) {
                    double acc = 0.0;
                    for (int i = 0; i < ksize; ++i) {
                        int sx = x + i - half;
                        sx = sx < 0 ? 0 : sx >= src.w ? src.w - 1 : sx;
                        acc += k[i] * src.at(n, c, y, sx);
                    }
                    mid.at(n, c, y, x) = acc;
                }
    Tensor<double> dst = Tensor<double>::zeros_like(src);
    for (int n = 0; n < src.b; ++n)
        for (int c = 0; c < src.c; ++c)
            for (int y = 0; y < src.h; ++y)
                for (int x = 0; x < src.w; ++x) {
                    double acc = 0.0;
                    for (int i = 0; i < ksize; ++i) {
                        int sy = y + i - half;
                        sy = sy < 0 ? 0 : sy >= src.h ? src.h - 1 : sy;
                        acc += k[i] * mid.at(n, c, sy, x);
                    }
                    dst.at(n, c, y, x) = acc;
                }
    return dst;
}

}  // namespace gme
