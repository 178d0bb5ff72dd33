#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gme/layers.hpp"
#include "gme/ops.hpp"
#include "gme/tensor.hpp"

namespace gme {

// Pre-sigmoid attention maps extracted from one MAB: channel map (B,C,1,1)
// and spatial map (B,1,H,W). This is the distillation currency.
template <typename T>
struct AttentionMapPair {
    Tensor<T> channel;
    Tensor<T> spatial;
};

enum class AttentionKind { none, cbam, dbam };

// Depthwise 3x3 followed by pointwise 1x1, both shape-preserving.
template <typename T>
struct DepthwiseSeparable {
    Conv2d<T> dw, pw;

    DepthwiseSeparable() = default;
    DepthwiseSeparable(const std::string& name, int ch)
        : dw(name + ".dw", ch, ch, 3, 1, 1, ch), pw(name + ".pw", ch, ch, 1, 1, 0, 1) {}

    struct Cache {
        Tensor<T> x, mid;
    };

    void init(Rng& rng) {
        dw.init(rng);
        pw.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Cache& c) {
        Tensor<T> m = dw.forward(x, c.x);
        return pw.forward(m, c.mid);
    }

    Tensor<T> backward(const Tensor<T>& gy, const Cache& c) {
        return dw.backward(pw.backward(gy, c.mid), c.x);
    }

    void collect_params(std::vector<Param<T>*>& out) {
        dw.collect_params(out);
        pw.collect_params(out);
    }

    size_t param_count() const { return dw.param_count() + pw.param_count(); }
    long long macs(int h, int w) const { return dw.macs(h, w) + pw.macs(h, w); }
};

// Two depthwise-separable stacks with a stride-2 average-pool between them
// and a nearest-neighbor resize back to the input size afterwards. The
// pool/resize pair is skipped when H or W < 2. Disabled entirely in CBAM
// mode, where the module degenerates to the identity.
template <typename T>
struct DepthwiseRefiner {
    bool enabled = true;
    DepthwiseSeparable<T> s1, s2;

    DepthwiseRefiner() = default;
    DepthwiseRefiner(const std::string& name, int ch, bool enabled_)
        : enabled(enabled_) {
        if (enabled) {
            s1 = DepthwiseSeparable<T>(name + ".s1", ch);
            s2 = DepthwiseSeparable<T>(name + ".s2", ch);
        }
    }

    struct Cache {
        typename DepthwiseSeparable<T>::Cache c1, c2;
        int h = 0, w = 0;
        bool pooled = false;
    };

    void init(Rng& rng) {
        if (enabled) {
            s1.init(rng);
            s2.init(rng);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, Cache& c) {
        if (!enabled) return x;
        c.h = x.h;
        c.w = x.w;
        c.pooled = x.h >= 2 && x.w >= 2;
        Tensor<T> a = s1.forward(x, c.c1);
        if (c.pooled) a = ops::avgpool2(a);
        Tensor<T> b = s2.forward(a, c.c2);
        if (c.pooled) b = ops::resize_nearest(b, c.h, c.w);
        return b;
    }

    Tensor<T> backward(const Tensor<T>& gy, const Cache& c) {
        if (!enabled) return gy;
        Tensor<T> g = gy;
        if (c.pooled) g = ops::resize_nearest_backward(g, c.h / 2, c.w / 2);
        g = s2.backward(g, c.c2);
        if (c.pooled) g = ops::avgpool2_backward(g, c.h, c.w);
        return s1.backward(g, c.c1);
    }

    void collect_params(std::vector<Param<T>*>& out) {
        if (enabled) {
            s1.collect_params(out);
            s2.collect_params(out);
        }
    }

    size_t param_count() const { return enabled ? s1.param_count() + s2.param_count() : 0; }

    long long macs(int h, int w) const {
        if (!enabled) return 0;
        const bool pooled = h >= 2 && w >= 2;
        return s1.macs(h, w) + s2.macs(pooled ? h / 2 : h, pooled ? w / 2 : w);
    }
};

// Depthwise-Channel Attention Module.
//   F_m    = DWConv(DWConv(x))
//   M_c    = MLP(AvgPool(F_m)) + MLP(MaxPool(F_m))      (shared MLP, C -> C/r -> C)
//   output = sigmoid(M_c) (x) x                          (broadcast over H, W)
template <typename T>
struct Dcam {
    int ch = 0, hidden = 0;
    DepthwiseRefiner<T> refiner;
    Linear<T> fc1, fc2;

    Dcam() = default;
    Dcam(const std::string& name, int c, int reduction, bool with_refiner) : ch(c) {
        const int r = std::min(reduction, c);
        if (c % r != 0)
            throw std::invalid_argument("Dcam " + name + ": channels " + std::to_string(c) +
                                        " not divisible by reduction ratio " +
                                        std::to_string(r));
        hidden = c / r;
        refiner = DepthwiseRefiner<T>(name + ".refiner", c, with_refiner);
        fc1 = Linear<T>(name + ".fc1", c, hidden);
        fc2 = Linear<T>(name + ".fc2", hidden, c);
    }

    struct Cache {
        typename DepthwiseRefiner<T>::Cache ref;
        Tensor<T> x;
        Tensor<T> fc1_in_a, fc1_out_a, fc2_in_a;  // avg path
        Tensor<T> fc1_in_m, fc1_out_m, fc2_in_m;  // max path
        std::vector<int> argmax;
        Tensor<T> logits;  // pre-sigmoid M_c, (B,C,1,1)
        Tensor<T> gate;
        int h = 0, w = 0;
    };

    void init(Rng& rng) {
        refiner.init(rng);
        fc1.init(rng);
        fc2.init(rng);
        fc2.bias.value.fill(T(0));
    }

    Tensor<T> mlp(const Tensor<T>& p, Tensor<T>& in1, Tensor<T>& out1, Tensor<T>& in2) {
        out1 = fc1.forward(p, in1);
        Tensor<T> r = ops::relu(out1);
        return fc2.forward(r, in2);
    }

    Tensor<T> mlp_backward(const Tensor<T>& gy, const Tensor<T>& in1, const Tensor<T>& out1,
                           const Tensor<T>& in2) {
        Tensor<T> g = fc2.backward(gy, in2);
        g = ops::relu_backward(g, out1);
        return fc1.backward(g, in1);
    }

    Tensor<T> forward(const Tensor<T>& x, Cache& c) {
        if (x.c != ch)
            throw std::invalid_argument("Dcam: input channels " + std::to_string(x.c) +
                                        " != " + std::to_string(ch));
        if (!x.all_finite()) throw std::invalid_argument("Dcam: non-finite input");
        c.x = x;
        c.h = x.h;
        c.w = x.w;
        Tensor<T> fm = refiner.forward(x, c.ref);
        Tensor<T> pa = ops::avgpool_hw(fm);
        Tensor<T> pm = ops::maxpool_hw(fm, c.argmax);
        Tensor<T> ma = mlp(pa, c.fc1_in_a, c.fc1_out_a, c.fc2_in_a);
        Tensor<T> mm = mlp(pm, c.fc1_in_m, c.fc1_out_m, c.fc2_in_m);
        c.logits = ma + mm;
        c.gate = ops::sigmoid(c.logits);
        return ops::bmul(x, c.gate);
    }

    // g_map: optional extra gradient injected on the pre-sigmoid map.
    Tensor<T> backward(const Tensor<T>& gy, const Tensor<T>* g_map, const Cache& c) {
        Tensor<T> gx, ggate;
        ops::bmul_backward(gy, c.x, c.gate, gx, ggate);
        Tensor<T> glogits = ops::sigmoid_backward(ggate, c.gate);
        if (g_map) glogits += *g_map;
        Tensor<T> gpa = mlp_backward(glogits, c.fc1_in_a, c.fc1_out_a, c.fc2_in_a);
        Tensor<T> gpm = mlp_backward(glogits, c.fc1_in_m, c.fc1_out_m, c.fc2_in_m);
        Tensor<T> gfm = ops::avgpool_hw_backward(gpa, c.h, c.w);
        gfm += ops::maxpool_hw_backward(gpm, c.argmax, c.h, c.w);
        gx += refiner.backward(gfm, c.ref);
        return gx;
    }

    void collect_params(std::vector<Param<T>*>& out) {
        refiner.collect_params(out);
        fc1.collect_params(out);
        fc2.collect_params(out);
    }

    size_t param_count() const {
        return refiner.param_count() + fc1.param_count() + fc2.param_count();
    }

    long long macs(int h, int w) const {
        return refiner.macs(h, w) + 2 * (fc1.macs() + fc2.macs());
    }
};

// Depthwise-Spatial Attention Module.
//   F_m    = DWConv(DWConv(x))
//   M_s    = Conv3x3(Concat(AvgPool_c(F_m), MaxPool_c(F_m)))
//   output = sigmoid(M_s) (x) x                          (broadcast over C)
template <typename T>
struct Dsam {
    int ch = 0;
    DepthwiseRefiner<T> refiner;
    Conv2d<T> conv;  // 3x3, 2 -> 1

    Dsam() = default;
    Dsam(const std::string& name, int c, bool with_refiner)
        : ch(c),
          refiner(name + ".refiner", c, with_refiner),
          conv(name + ".conv", 2, 1, 3, 1, 1) {}

    struct Cache {
        typename DepthwiseRefiner<T>::Cache ref;
        Tensor<T> x, cat;
        std::vector<int> argc;
        Tensor<T> logits;  // pre-sigmoid M_s, (B,1,H,W)
        Tensor<T> gate;
    };

    void init(Rng& rng) {
        refiner.init(rng);
        conv.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Cache& c) {
        if (x.c != ch)
            throw std::invalid_argument("Dsam: input channels " + std::to_string(x.c) +
                                        " != " + std::to_string(ch));
        if (!x.all_finite()) throw std::invalid_argument("Dsam: non-finite input");
        c.x = x;
        Tensor<T> fm = refiner.forward(x, c.ref);
        Tensor<T> ca = ops::channel_mean(fm);
        Tensor<T> cm = ops::channel_max(fm, c.argc);
        Tensor<T> cat = ops::concat_c<T>({&ca, &cm});
        c.logits = conv.forward(cat, c.cat);
        c.gate = ops::sigmoid(c.logits);
        return ops::bmul(x, c.gate);
    }

    Tensor<T> backward(const Tensor<T>& gy, const Tensor<T>* g_map, const Cache& c) {
        Tensor<T> gx, ggate;
        ops::bmul_backward(gy, c.x, c.gate, gx, ggate);
        Tensor<T> glogits = ops::sigmoid_backward(ggate, c.gate);
        if (g_map) glogits += *g_map;
        Tensor<T> gcat = conv.backward(glogits, c.cat);
        Tensor<T> gfm = ops::channel_mean_backward(ops::slice_c(gcat, 0, 1), ch);
        gfm += ops::channel_max_backward(ops::slice_c(gcat, 1, 1), c.argc, ch);
        gx += refiner.backward(gfm, c.ref);
        return gx;
    }

    void collect_params(std::vector<Param<T>*>& out) {
        refiner.collect_params(out);
        conv.collect_params(out);
    }

    size_t param_count() const { return refiner.param_count() + conv.param_count(); }
    long long macs(int h, int w) const { return refiner.macs(h, w) + conv.macs(h, w); }
};

// Channel-then-spatial attention (DBAM; with refiners disabled it is CBAM).
template <typename T>
struct Dbam {
    Dcam<T> dcam;
    Dsam<T> dsam;

    Dbam() = default;
    Dbam(const std::string& name, int c, int reduction, bool with_refiners)
        : dcam(name + ".dcam", c, reduction, with_refiners),
          dsam(name + ".dsam", c, with_refiners) {}

    struct Cache {
        typename Dcam<T>::Cache dc;
        typename Dsam<T>::Cache ds;
    };

    void init(Rng& rng) {
        dcam.init(rng);
        dsam.init(rng);
    }

    Tensor<T> forward(const Tensor<T>& x, Cache& c) {
        return dsam.forward(dcam.forward(x, c.dc), c.ds);
    }

    AttentionMapPair<T> maps(const Cache& c) const { return {c.dc.logits, c.ds.logits}; }

    Tensor<T> backward(const Tensor<T>& gy, const Tensor<T>* g_cmap, const Tensor<T>* g_smap,
                       const Cache& c) {
        return dcam.backward(dsam.backward(gy, g_smap, c.ds), g_cmap, c.dc);
    }

    void collect_params(std::vector<Param<T>*>& out) {
        dcam.collect_params(out);
        dsam.collect_params(out);
    }

    size_t param_count() const { return dcam.param_count() + dsam.param_count(); }
    long long macs(int h, int w) const { return dcam.macs(h, w) + dsam.macs(h, w); }
};

// Mixed-Attention Block: O = DSAM(DCAM(Conv3x3(Conv3x3(F)))) (+) skip.
// Batch normalization after each conv and ReLU after the first are toggled
// by use_norm; exact-identity tests run with it off. A 1x1 projection aligns
// the skip whenever the block changes channel count or stride.
template <typename T>
struct Mab {
    int in_ch = 0, out_ch = 0, stride = 1;
    bool use_norm = true;
    AttentionKind attention = AttentionKind::dbam;

    Conv2d<T> conv1, conv2;
    BatchNorm2d<T> bn1, bn2;
    std::optional<Dbam<T>> dbam;
    bool has_proj = false;
    Conv2d<T> proj;
    BatchNorm2d<T> bn_proj;

    Mab() = default;
    Mab(const std::string& name, int in, int out, int stride_, AttentionKind kind,
        int reduction, bool norm)
        : in_ch(in), out_ch(out), stride(stride_), use_norm(norm), attention(kind),
          conv1(name + ".conv1", in, out, 3, stride_, 1),
          conv2(name + ".conv2", out, out, 3, 1, 1) {
        if (norm) {
            bn1 = BatchNorm2d<T>(name + ".bn1", out);
            bn2 = BatchNorm2d<T>(name + ".bn2", out);
        }
        if (kind != AttentionKind::none)
            dbam.emplace(name + ".dbam", out, reduction, kind == AttentionKind::dbam);
        has_proj = stride_ != 1 || in != out;
        if (has_proj) {
            proj = Conv2d<T>(name + ".proj", in, out, 1, stride_, 0);
            if (norm) bn_proj = BatchNorm2d<T>(name + ".bn_proj", out);
        }
    }

    struct Cache {
        Tensor<T> x1, x2, xp;  // conv input caches
        typename BatchNorm2d<T>::Cache b1, b2, bp;
        Tensor<T> pre_relu;
        typename Dbam<T>::Cache att;
        bool valid = false;
    };

    void init(Rng& rng) {
        conv1.init(rng);
        conv2.init(rng);
        if (dbam) dbam->init(rng);
        if (has_proj) proj.init(rng);
    }

    void set_training(bool training) {
        bn1.training = training;
        bn2.training = training;
        bn_proj.training = training;
    }

    Tensor<T> forward(const Tensor<T>& x, Cache& c) {
        c.valid = true;
        Tensor<T> t = conv1.forward(x, c.x1);
        if (use_norm) t = bn1.forward(t, c.b1);
        c.pre_relu = t;
        t = ops::relu(t);
        t = conv2.forward(t, c.x2);
        if (use_norm) t = bn2.forward(t, c.b2);
        if (dbam) t = dbam->forward(t, c.att);
        Tensor<T> skip = x;
        if (has_proj) {
            skip = proj.forward(x, c.xp);
            if (use_norm) skip = bn_proj.forward(skip, c.bp);
        }
        return t + skip;
    }

    AttentionMapPair<T> maps(const Cache& c) const {
        if (!dbam) throw std::logic_error("Mab::maps: block has no attention");
        return dbam->maps(c.att);
    }

    Tensor<T> backward(const Tensor<T>& gy, const Tensor<T>* g_cmap, const Tensor<T>* g_smap,
                       const Cache& c) {
        Tensor<T> g = gy;
        if (dbam) g = dbam->backward(g, g_cmap, g_smap, c.att);
        if (use_norm) g = bn2.backward(g, c.b2);
        g = conv2.backward(g, c.x2);
        g = ops::relu_backward(g, c.pre_relu);
        if (use_norm) g = bn1.backward(g, c.b1);
        Tensor<T> gx = conv1.backward(g, c.x1);
        if (has_proj) {
            Tensor<T> gs = gy;
            if (use_norm) gs = bn_proj.backward(gs, c.bp);
            gx += proj.backward(gs, c.xp);
        } else {
            gx += gy;
        }
        return gx;
    }

    void collect_params(std::vector<Param<T>*>& out) {
        conv1.collect_params(out);
        conv2.collect_params(out);
        if (use_norm) {
            bn1.collect_params(out);
            bn2.collect_params(out);
        }
        if (dbam) dbam->collect_params(out);
        if (has_proj) {
            proj.collect_params(out);
            if (use_norm) bn_proj.collect_params(out);
        }
    }

    size_t param_count() const {
        size_t n = conv1.param_count() + conv2.param_count();
        if (use_norm) n += bn1.param_count() + bn2.param_count();
        if (dbam) n += dbam->param_count();
        if (has_proj) {
            n += proj.param_count();
            if (use_norm) n += bn_proj.param_count();
        }
        return n;
    }

    long long macs(int h, int w) const {
        const int oh = ops::conv_out_dim(h, 3, stride, 1);
        const int ow = ops::conv_out_dim(w, 3, stride, 1);
        long long m = conv1.macs(h, w) + conv2.macs(oh, ow);
        if (dbam) m += dbam->macs(oh, ow);
        if (has_proj) m += proj.macs(h, w);
        return m;
    }
};

}  // namespace gme
