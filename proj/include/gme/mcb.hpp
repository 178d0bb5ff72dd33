#pragma once

#include <array>
#include <string>
#include <vector>

#include "gme/attention.hpp"
#include "gme/layers.hpp"
#include "gme/ops.hpp"

namespace gme {

// Mixed-Channel Feature Extraction Block, a quasi-symmetric two-branch
// multi-scale unit:
//   F  = Conv3x3(input)
//   O1 = Concat(F_X1..F_X4)   X_i = four copies of the 1x1-reduced map (C/4)
//   O2 = Concat(F_Y1..F_Y4)   Y_i = contiguous channel quarters of F
//   with the cascade F_1 = relu(DS(X_1)), F_i = relu(DS(F_{i-1})) (+) X_i
//   O  = O1 + O2 + F          (residual switchable to the raw block input)
template <typename T>
struct Mcb {
    int ch = 0, qc = 0;
    bool residual_from_input = false;
    Conv2d<T> entry;                              // 3x3, C -> C
    Conv2d<T> reduce;                             // 1x1, C -> C/4
    std::array<DepthwiseSeparable<T>, 4> b1, b2;  // cascades on C/4 channels

    Mcb() = default;
    Mcb(const std::string& name, int c, bool residual_from_input_ = false)
        : ch(c), qc(c / 4), residual_from_input(residual_from_input_),
          entry(name + ".entry", c, c, 3, 1, 1),
          reduce(name + ".reduce", c, c / 4, 1, 1, 0) {
        if (c % 4 != 0)
            throw std::invalid_argument("Mcb " + name + ": channel count " +
                                        std::to_string(c) + " not divisible by 4");
        for (int i = 0; i < 4; ++i) {
            b1[i] = DepthwiseSeparable<T>(name + ".b1." + std::to_string(i), qc);
            b2[i] = DepthwiseSeparable<T>(name + ".b2." + std::to_string(i), qc);
        }
    }

    struct BranchCache {
        std::array<typename DepthwiseSeparable<T>::Cache, 4> ds;
        std::array<Tensor<T>, 4> pre_relu;  // DS outputs before the ReLU
        std::array<Tensor<T>, 4> fx;        // cascade values F_1..F_4
        Tensor<T> reduced;                  // branch 1 only
        Tensor<T> reduce_in;                // branch 1 only
    };

    struct Cache {
        Tensor<T> entry_in;
        Tensor<T> f;  // entry-conv output
        BranchCache c1, c2;
        bool valid = false;
    };

    void init(Rng& rng) {
        entry.init(rng);
        reduce.init(rng);
        for (int i = 0; i < 4; ++i) {
            b1[i].init(rng);
            b2[i].init(rng);
        }
    }

    // Branch 1: reduce to C/4, replicate into X_1..X_4, run the cascade.
    Tensor<T> branch_replicate(const Tensor<T>& f, BranchCache& c) {
        c.reduced = reduce.forward(f, c.reduce_in);
        return cascade(b1, c.reduced, c.reduced, c.reduced, c.reduced, c);
    }

    // Branch 2: split channels into contiguous quarters Y_1..Y_4, same cascade.
    Tensor<T> branch_split(const Tensor<T>& f, BranchCache& c) {
        Tensor<T> y1 = ops::slice_c(f, 0, qc), y2 = ops::slice_c(f, qc, qc);
        Tensor<T> y3 = ops::slice_c(f, 2 * qc, qc), y4 = ops::slice_c(f, 3 * qc, qc);
        return cascade(b2, y1, y2, y3, y4, c);
    }

    Tensor<T> forward(const Tensor<T>& x, Cache& c) {
        if (x.c != ch)
            throw std::invalid_argument("Mcb: input channels " + std::to_string(x.c) +
                                        " != " + std::to_string(ch));
        c.valid = true;
        c.f = entry.forward(x, c.entry_in);
        Tensor<T> o1 = branch_replicate(c.f, c.c1);
        Tensor<T> o2 = branch_split(c.f, c.c2);
        Tensor<T> out = o1 + o2;
        out += residual_from_input ? x : c.f;
        return out;
    }

    Tensor<T> backward(const Tensor<T>& gy, const Cache& c) {
        // Branch 1: the reduced map feeds all four cascade positions.
        std::array<Tensor<T>, 4> gx1;
        cascade_backward(b1, gy, c.c1, gx1);
        Tensor<T> greduced = gx1[0] + gx1[1] + gx1[2] + gx1[3];
        Tensor<T> gf = reduce.backward(greduced, c.c1.reduce_in);
        // Branch 2: quarters map back to channel windows of F.
        std::array<Tensor<T>, 4> gx2;
        cascade_backward(b2, gy, c.c2, gx2);
        for (int i = 0; i < 4; ++i) ops::add_into_slice_c(gf, gx2[i], i * qc);
        Tensor<T> gx(gy.b, ch, c.entry_in.h, c.entry_in.w);
        if (residual_from_input)
            gx += gy;
        else
            gf += gy;
        gx += entry.backward(gf, c.entry_in);
        return gx;
    }

    void collect_params(std::vector<Param<T>*>& out) {
        entry.collect_params(out);
        reduce.collect_params(out);
        for (int i = 0; i < 4; ++i) b1[i].collect_params(out);
        for (int i = 0; i < 4; ++i) b2[i].collect_params(out);
    }

    size_t param_count() const {
        size_t n = entry.param_count() + reduce.param_count();
        for (int i = 0; i < 4; ++i) n += b1[i].param_count() + b2[i].param_count();
        return n;
    }

    long long macs(int h, int w) const {
        long long m = entry.macs(h, w) + reduce.macs(h, w);
        for (int i = 0; i < 4; ++i) m += b1[i].macs(h, w) + b2[i].macs(h, w);
        return m;
    }

private:
    Tensor<T> cascade(std::array<DepthwiseSeparable<T>, 4>& ds, const Tensor<T>& x1,
                      const Tensor<T>& x2, const Tensor<T>& x3, const Tensor<T>& x4,
                      BranchCache& c) {
        const Tensor<T>* xs[4] = {&x1, &x2, &x3, &x4};
        for (int i = 0; i < 4; ++i) {
            const Tensor<T>& in = i == 0 ? *xs[0] : c.fx[i - 1];
            c.pre_relu[i] = ds[i].forward(in, c.ds[i]);
            c.fx[i] = ops::relu(c.pre_relu[i]);
            if (i > 0) c.fx[i] += *xs[i];
        }
        return ops::concat_c<T>({&c.fx[0], &c.fx[1], &c.fx[2], &c.fx[3]});
    }

    // Fills gx[i] = d(loss)/d(X_i); gy is the gradient on the concatenation.
    void cascade_backward(std::array<DepthwiseSeparable<T>, 4>& ds, const Tensor<T>& gy,
                          const BranchCache& c, std::array<Tensor<T>, 4>& gx) {
        std::array<Tensor<T>, 4> gfx;
        for (int i = 0; i < 4; ++i) gfx[i] = ops::slice_c(gy, i * qc, qc);
        for (int i = 3; i >= 1; --i) {
            gx[i] = gfx[i];  // identity path of the (+) X_i
            Tensor<T> g = ops::relu_backward(gfx[i], c.pre_relu[i]);
            gfx[i - 1] += ds[i].backward(g, c.ds[i]);
        }
        gx[0] = ds[0].backward(ops::relu_backward(gfx[0], c.pre_relu[0]), c.ds[0]);
    }
};

}  // namespace gme
