#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "gme/attention.hpp"
#include "gme/tensor.hpp"

namespace gme {

constexpr double kNormFloor = 1e-12;  // below this a map is degenerate, similarity 0

// Batch-averaged cosine similarity of two attention maps, each flattened per
// sample. Identical samples score exactly 1; otherwise a sample whose norm
// falls below kNormFloor contributes 0.
template <typename T>
T cosine_similarity(const Tensor<T>& t, const Tensor<T>& s, int* degenerate = nullptr) {
    if (!t.same_shape(s))
        throw std::invalid_argument("cosine_similarity: shape mismatch " + t.shape_str() +
                                    " vs " + s.shape_str());
    const size_t n = t.size() / t.b;
    T acc = T(0);
    for (int i = 0; i < t.b; ++i) {
        const T* tv = t.v.data() + i * n;
        const T* sv = s.v.data() + i * n;
        T dot = T(0), nt2 = T(0), ns2 = T(0);
        for (size_t j = 0; j < n; ++j) {
            dot += tv[j] * sv[j];
            nt2 += tv[j] * tv[j];
            ns2 += sv[j] * sv[j];
        }
        // identical samples must score exactly 1 — even all-zero ones — so
        // that self-distillation loss is exactly zero, unclouded by sqrt
        // rounding or the degenerate-norm rule below
        if (dot == nt2 && nt2 == ns2) {
            acc += T(1);
            continue;
        }
        const T nt = std::sqrt(nt2);
        const T ns = std::sqrt(ns2);
        if (nt < T(kNormFloor) || ns < T(kNormFloor)) {
            if (degenerate) ++*degenerate;
            continue;
        }
        acc += dot / (nt * ns);
    }
    return acc / static_cast<T>(t.b);
}

// d(similarity)/d(student map) scaled by `upstream`. The teacher map is a
// constant. Degenerate samples get zero gradient.
template <typename T>
Tensor<T> cosine_similarity_backward_student(const Tensor<T>& t, const Tensor<T>& s,
                                             T upstream) {
    Tensor<T> gs = Tensor<T>::zeros_like(s);
    const size_t n = t.size() / t.b;
    const T scale = upstream / static_cast<T>(t.b);
    for (int i = 0; i < t.b; ++i) {
        const T* tv = t.v.data() + i * n;
        const T* sv = s.v.data() + i * n;
        T* gv = gs.v.data() + i * n;
        T dot = T(0), nt2 = T(0), ns2 = T(0);
        for (size_t j = 0; j < n; ++j) {
            dot += tv[j] * sv[j];
            nt2 += tv[j] * tv[j];
            ns2 += sv[j] * sv[j];
        }
        const T nt = std::sqrt(nt2), ns = std::sqrt(ns2);
        if (nt < T(kNormFloor) || ns < T(kNormFloor)) continue;
        const T inv = T(1) / (nt * ns);
        const T proj = dot / (nt * ns2 * ns);
        for (size_t j = 0; j < n; ++j) gv[j] = scale * (tv[j] * inv - sv[j] * proj);
    }
    return gs;
}

template <typename T>
struct KdResult {
    T l_kd = T(0);
    std::vector<T> per_block;
    int degenerate_samples = 0;
};

// Per block: ((1 - Sim_c) + (1 - Sim_s)) / 2; aggregated by unweighted mean.
template <typename T>
KdResult<T> kd_loss(const std::vector<AttentionMapPair<T>>& teacher,
                    const std::vector<AttentionMapPair<T>>& student) {
    if (teacher.size() != student.size())
        throw std::invalid_argument("kd_loss: " + std::to_string(teacher.size()) +
                                    " teacher blocks vs " + std::to_string(student.size()) +
                                    " student blocks");
    KdResult<T> r;
    for (size_t b = 0; b < teacher.size(); ++b) {
        if (!teacher[b].channel.same_shape(student[b].channel) ||
            !teacher[b].spatial.same_shape(student[b].spatial))
            throw std::invalid_argument("kd_loss: attention map shape mismatch at block " +
                                        std::to_string(b));
        const T sc = cosine_similarity(teacher[b].channel, student[b].channel,
                                       &r.degenerate_samples);
        const T ss = cosine_similarity(teacher[b].spatial, student[b].spatial,
                                       &r.degenerate_samples);
        r.per_block.push_back(((T(1) - sc) + (T(1) - ss)) / T(2));
    }
    for (T x : r.per_block) r.l_kd += x;
    if (!r.per_block.empty()) r.l_kd /= static_cast<T>(r.per_block.size());
    return r;
}

// d(l_kd)/d(student maps), scaled by `upstream` (typically lambda_kd).
template <typename T>
std::vector<AttentionMapPair<T>> kd_loss_backward(
    const std::vector<AttentionMapPair<T>>& teacher,
    const std::vector<AttentionMapPair<T>>& student, T upstream) {
    std::vector<AttentionMapPair<T>> grads;
    const T per_sim = -upstream / (T(2) * static_cast<T>(teacher.size()));
    for (size_t b = 0; b < teacher.size(); ++b)
        grads.push_back(
            {cosine_similarity_backward_student(teacher[b].channel, student[b].channel,
                                                per_sim),
             cosine_similarity_backward_student(teacher[b].spatial, student[b].spatial,
                                                per_sim)});
    return grads;
}

// Mean cross-entropy with hard labels, log-sum-exp stabilized.
// logits: (N, C, 1, 1).
template <typename T>
T cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
    if (static_cast<int>(labels.size()) != logits.b)
        throw std::invalid_argument("cross_entropy: label count mismatch");
    if (logits.c < 2) throw std::invalid_argument("cross_entropy: need at least 2 classes");
    T loss = T(0);
    for (int i = 0; i < logits.b; ++i) {
        if (labels[i] < 0 || labels[i] >= logits.c)
            throw std::invalid_argument("cross_entropy: label " + std::to_string(labels[i]) +
                                        " out of range [0," + std::to_string(logits.c) + ")");
        T mx = logits.at(i, 0, 0, 0);
        for (int j = 1; j < logits.c; ++j) mx = std::max(mx, logits.at(i, j, 0, 0));
        T lse = T(0);
        for (int j = 0; j < logits.c; ++j) lse += std::exp(logits.at(i, j, 0, 0) - mx);
        lse = mx + std::log(lse);
        loss += lse - logits.at(i, labels[i], 0, 0);
    }
    return loss / static_cast<T>(logits.b);
}

// (softmax - onehot) / N, scaled by upstream.
template <typename T>
Tensor<T> cross_entropy_backward(const Tensor<T>& logits, const std::vector<int>& labels,
                                 T upstream) {
    Tensor<T> g = Tensor<T>::zeros_like(logits);
    const T scale = upstream / static_cast<T>(logits.b);
    for (int i = 0; i < logits.b; ++i) {
        T mx = logits.at(i, 0, 0, 0);
        for (int j = 1; j < logits.c; ++j) mx = std::max(mx, logits.at(i, j, 0, 0));
        T denom = T(0);
        for (int j = 0; j < logits.c; ++j) denom += std::exp(logits.at(i, j, 0, 0) - mx);
        for (int j = 0; j < logits.c; ++j)
            g.at(i, j, 0, 0) = scale * (std::exp(logits.at(i, j, 0, 0) - mx) / denom -
                                        (j == labels[i] ? T(1) : T(0)));
    }
    return g;
}

// L = L_ce + lambda_kd * L_kd plus the per-block terms that produced L_kd.
template <typename T>
struct LossBreakdown {
    T l_ce = T(0);
    std::vector<T> per_block_kd;
    T l_kd = T(0);
    T lambda_kd = T(0);
    T total = T(0);
};

template <typename T>
LossBreakdown<T> total_loss(T l_ce, const KdResult<T>& kd, T lambda_kd) {
    if (lambda_kd < T(0)) throw std::invalid_argument("total_loss: negative lambda_kd");
    LossBreakdown<T> lb;
    lb.l_ce = l_ce;
    lb.per_block_kd = kd.per_block;
    lb.l_kd = kd.l_kd;
    lb.lambda_kd = lambda_kd;
    lb.total = l_ce + lambda_kd * kd.l_kd;
    return lb;
}

}  // namespace gme
