#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gme/attention.hpp"
#include "gme/layers.hpp"
#include "gme/mcb.hpp"

namespace gme {

struct NetworkConfig {
    int initial_channels = 32;
    std::vector<int> stage_widths = {32, 64, 128, 256};
    std::vector<int> blocks_per_stage = {3, 4, 6, 3};
    int num_classes = 7;
    int reduction_ratio = 16;
    int input_h = 112, input_w = 112;
    bool use_dbam = true;
    bool use_cbam = false;
    bool use_global_branch = true;
    bool use_norm = true;
    bool mcb_residual_from_input = false;

    AttentionKind attention_kind() const {
        if (use_dbam && use_cbam)
            throw std::invalid_argument("NetworkConfig: use_dbam and use_cbam are exclusive");
        if (use_dbam) return AttentionKind::dbam;
        if (use_cbam) return AttentionKind::cbam;
        return AttentionKind::none;
    }

    void validate() const {
        if (stage_widths.size() != blocks_per_stage.size())
            throw std::invalid_argument(
                "NetworkConfig: stage_widths and blocks_per_stage differ in length");
        if (stage_widths.empty() && initial_channels % 4 != 0)
            throw std::invalid_argument("NetworkConfig: initial_channels not divisible by 4");
        for (size_t s = 0; s < stage_widths.size(); ++s) {
            const int w = stage_widths[s];
            const int r = std::min(reduction_ratio, w);
            if (w < 4 || w % 4 != 0)
                throw std::invalid_argument("NetworkConfig: stage " + std::to_string(s) +
                                            " width " + std::to_string(w) +
                                            " is not divisible by 4");
            if (w % r != 0)
                throw std::invalid_argument("NetworkConfig: stage " + std::to_string(s) +
                                            " width " + std::to_string(w) +
                                            " not divisible by clamped reduction ratio " +
                                            std::to_string(r));
        }
        if (num_classes < 2) throw std::invalid_argument("NetworkConfig: num_classes < 2");
        if (input_h < 1 || input_w < 1)
            throw std::invalid_argument("NetworkConfig: invalid input size");
        if (reduction_ratio < 1)
            throw std::invalid_argument("NetworkConfig: reduction_ratio < 1");
        attention_kind();
    }
};

template <typename T>
struct ForwardOutput {
    Tensor<T> logits;                          // (B, num_classes, 1, 1)
    std::vector<AttentionMapPair<T>> attention_maps;  // one per MAB, network order
};

// GME-Net: stem -> stages of parallel MAB / MCB stacks fused by point-wise
// addition -> global average pool -> fully-connected head. The same class is
// instantiated twice as HR-Net (teacher) and LR-Net (student).
template <typename T>
class Network {
public:
    struct Stage {
        std::vector<Mab<T>> mabs;
        bool has_global = false;
        Conv2d<T> proj;  // stride-matched 1x1 entry for the MCB stack
        std::vector<Mcb<T>> mcbs;
    };

    struct Cache {
        Tensor<T> stem_in;
        typename BatchNorm2d<T>::Cache stem_bn;
        Tensor<T> stem_pre_relu;
        struct StageCache {
            std::vector<typename Mab<T>::Cache> mab;
            Tensor<T> proj_in;
            std::vector<typename Mcb<T>::Cache> mcb;
            Tensor<T> input;  // fused input to the stage (for shape bookkeeping)
        };
        std::vector<StageCache> stages;
        Tensor<T> gap_in;    // head input feature map
        Tensor<T> head_in;   // pooled (B,C,1,1)
    };

    explicit Network(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg) {
        cfg.validate();
        Rng rng(seed);
        stem_ = Conv2d<T>("stem.conv", 3, cfg.initial_channels, 3, 1, 1);
        if (cfg.use_norm) stem_bn_ = BatchNorm2d<T>("stem.bn", cfg.initial_channels);
        const AttentionKind kind = cfg.attention_kind();
        int in = cfg.initial_channels;
        for (size_t s = 0; s < cfg.stage_widths.size(); ++s) {
            Stage st;
            const int width = cfg.stage_widths[s];
            const std::string sn = "stage" + std::to_string(s);
            for (int b = 0; b < cfg.blocks_per_stage[s]; ++b)
                st.mabs.emplace_back(sn + ".mab" + std::to_string(b), b == 0 ? in : width,
                                     width, b == 0 ? 2 : 1, kind, cfg.reduction_ratio,
                                     cfg.use_norm);
            st.has_global = cfg.use_global_branch;
            if (st.has_global) {
                st.proj = Conv2d<T>(sn + ".proj", in, width, 1, 2, 0);
                for (int b = 0; b < cfg.blocks_per_stage[s]; ++b)
                    st.mcbs.emplace_back(sn + ".mcb" + std::to_string(b), width,
                                         cfg.mcb_residual_from_input);
            }
            stages_.push_back(std::move(st));
            in = width;
        }
        head_ = Linear<T>("head.fc", in, cfg.num_classes);

        stem_.init(rng);
        for (auto& st : stages_) {
            for (auto& m : st.mabs) m.init(rng);
            if (st.has_global) {
                st.proj.init(rng);
                for (auto& m : st.mcbs) m.init(rng);
            }
        }
        head_.init(rng);
    }

    const NetworkConfig& config() const { return cfg_; }

    void set_training(bool training) {
        training_ = training;
        stem_bn_.training = training;
        for (auto& st : stages_)
            for (auto& m : st.mabs) m.set_training(training);
    }
    bool training() const { return training_; }

    int mab_count() const {
        int n = 0;
        for (const auto& st : stages_) n += static_cast<int>(st.mabs.size());
        return n;
    }

    ForwardOutput<T> forward(const Tensor<T>& images, Cache& cache) {
        if (images.c != 3 || images.h != cfg_.input_h || images.w != cfg_.input_w)
            throw std::invalid_argument("Network::forward: expected input (B,3," +
                                        std::to_string(cfg_.input_h) + "," +
                                        std::to_string(cfg_.input_w) + "), got " +
                                        images.shape_str());
        ForwardOutput<T> out;
        Tensor<T> t = stem_.forward(images, cache.stem_in);
        if (cfg_.use_norm) t = stem_bn_.forward(t, cache.stem_bn);
        cache.stem_pre_relu = t;
        t = ops::relu(t);
        cache.stages.assign(stages_.size(), {});
        for (size_t s = 0; s < stages_.size(); ++s) {
            auto& st = stages_[s];
            auto& sc = cache.stages[s];
            sc.input = t;
            sc.mab.assign(st.mabs.size(), {});
            Tensor<T> a = t;
            for (size_t b = 0; b < st.mabs.size(); ++b) {
                a = st.mabs[b].forward(a, sc.mab[b]);
                if (st.mabs[b].dbam) out.attention_maps.push_back(st.mabs[b].maps(sc.mab[b]));
            }
            if (st.has_global) {
                Tensor<T> g = st.proj.forward(t, sc.proj_in);
                sc.mcb.assign(st.mcbs.size(), {});
                for (size_t b = 0; b < st.mcbs.size(); ++b)
                    g = st.mcbs[b].forward(g, sc.mcb[b]);
                a += g;  // point-wise fusion of the two branches
            }
            t = a;
        }
        cache.gap_in = t;
        Tensor<T> pooled = ops::avgpool_hw(t);
        out.logits = head_.forward(pooled, cache.head_in);
        return out;
    }

    ForwardOutput<T> forward(const Tensor<T>& images) {
        Cache cache;
        return forward(images, cache);
    }

    // map_grads, when nonempty, carries one gradient pair per MAB (same order
    // as ForwardOutput::attention_maps) injected on the pre-sigmoid maps.
    void backward(const Tensor<T>& grad_logits,
                  const std::vector<AttentionMapPair<T>>& map_grads, Cache& cache) {
        Tensor<T> g = head_.backward(grad_logits, cache.head_in);
        g = ops::avgpool_hw_backward(g, cache.gap_in.h, cache.gap_in.w);
        int map_idx = static_cast<int>(map_grads.size()) - 1;
        for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
            auto& st = stages_[s];
            auto& sc = cache.stages[s];
            Tensor<T> g_in(g.b, sc.input.c, sc.input.h, sc.input.w);
            if (st.has_global) {
                Tensor<T> gg = g;
                for (int b = static_cast<int>(st.mcbs.size()) - 1; b >= 0; --b)
                    gg = st.mcbs[b].backward(gg, sc.mcb[b]);
                g_in += st.proj.backward(gg, sc.proj_in);
            }
            for (int b = static_cast<int>(st.mabs.size()) - 1; b >= 0; --b) {
                const Tensor<T>*gc = nullptr, *gs = nullptr;
                if (!map_grads.empty() && st.mabs[b].dbam) {
                    gc = &map_grads[map_idx].channel;
                    gs = &map_grads[map_idx].spatial;
                    --map_idx;
                }
                g = st.mabs[b].backward(g, gc, gs, sc.mab[b]);
            }
            g_in += g;
            g = g_in;
        }
        g = ops::relu_backward(g, cache.stem_pre_relu);
        if (cfg_.use_norm) g = stem_bn_.backward(g, cache.stem_bn);
        stem_.backward(g, cache.stem_in);
    }

    std::vector<Param<T>*> parameters() {
        std::vector<Param<T>*> out;
        stem_.collect_params(out);
        if (cfg_.use_norm) stem_bn_.collect_params(out);
        for (auto& st : stages_) {
            for (auto& m : st.mabs) m.collect_params(out);
            if (st.has_global) {
                st.proj.collect_params(out);
                for (auto& m : st.mcbs) m.collect_params(out);
            }
        }
        head_.collect_params(out);
        return out;
    }

    void zero_grad() {
        for (Param<T>* p : parameters()) p->zero_grad();
    }

    size_t count_parameters() {
        size_t n = 0;
        for (Param<T>* p : parameters()) n += p->count();
        return n;
    }

    // Analytic multiply-accumulate count per image at the configured input
    // size (conv: out_elems * in_ch/groups * k^2; linear: in * out).
    long long count_multiply_accumulates() const {
        long long m = stem_.macs(cfg_.input_h, cfg_.input_w);
        int h = cfg_.input_h, w = cfg_.input_w;
        for (const auto& st : stages_) {
            const int oh = ops::conv_out_dim(h, 3, 2, 1);
            const int ow = ops::conv_out_dim(w, 3, 2, 1);
            for (size_t b = 0; b < st.mabs.size(); ++b)
                m += st.mabs[b].macs(b == 0 ? h : oh, b == 0 ? w : ow);
            if (st.has_global) {
                m += st.proj.macs(h, w);
                for (const auto& mc : st.mcbs) m += mc.macs(oh, ow);
            }
            h = oh;
            w = ow;
        }
        m += head_.macs();
        return m;
    }

    Conv2d<T>& stem() { return stem_; }
    Linear<T>& head() { return head_; }
    std::vector<Stage>& stages() { return stages_; }

private:
    NetworkConfig cfg_;
    bool training_ = true;
    Conv2d<T> stem_;
    BatchNorm2d<T> stem_bn_;
    std::vector<Stage> stages_;
    Linear<T> head_;
};

}  // namespace gme
