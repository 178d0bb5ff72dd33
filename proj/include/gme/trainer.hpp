#pragma once

#include <algorithm>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gme/data.hpp"
#include "gme/losses.hpp"
#include "gme/network.hpp"
#include "gme/optimizer.hpp"

namespace gme {

struct EvaluationReport {
    double overall_accuracy = 0.0;  // fraction in [0,1]
    std::vector<double> per_class_accuracy;
    std::vector<long long> confusion;  // row = true class, col = predicted
    int num_classes = 0;
    long long sample_count = 0;

    long long& cm(int truth, int pred) { return confusion[truth * num_classes + pred]; }
    long long cm(int truth, int pred) const { return confusion[truth * num_classes + pred]; }

    nlohmann::json to_json() const {
        return {{"schema_version", 1},
                {"overall_accuracy", overall_accuracy},
                {"per_class_accuracy", per_class_accuracy},
                {"confusion_matrix", confusion},
                {"num_classes", num_classes},
                {"sample_count", sample_count}};
    }
};

enum class EvalInput { hr, lr };

// Deterministic single-pass top-1 accuracy and confusion matrix over a split.
template <typename T>
EvaluationReport evaluate(Network<T>& net, const PairedLoader<T>& loader,
                          const std::vector<int>& indices, EvalInput input,
                          int eval_batch = 32) {
    const int nc = net.config().num_classes;
    if (static_cast<int>(loader.manifest().class_names.size()) != nc)
        throw std::runtime_error("evaluate: checkpoint expects " + std::to_string(nc) +
                                 " classes but manifest has " +
                                 std::to_string(loader.manifest().class_names.size()));
    EvaluationReport rep;
    rep.num_classes = nc;
    rep.confusion.assign(static_cast<size_t>(nc) * nc, 0);
    const bool was_training = net.training();
    net.set_training(false);
    for (size_t from = 0; from < indices.size(); from += eval_batch) {
        const BatchPlan plan = loader.plan_eval(indices, from, eval_batch);
        const DistillationBatch<T> batch = loader.load(plan);
        const Tensor<T>& in = input == EvalInput::hr ? batch.hr_images : batch.lr_images;
        ForwardOutput<T> out = net.forward(in);
        for (int i = 0; i < out.logits.b; ++i) {
            int pred = 0;
            for (int j = 1; j < nc; ++j)
                if (out.logits.at(i, j, 0, 0) > out.logits.at(i, pred, 0, 0)) pred = j;
            ++rep.cm(batch.labels[i], pred);
            ++rep.sample_count;
        }
    }
    net.set_training(was_training);
    long long correct = 0;
    rep.per_class_accuracy.assign(nc, 0.0);
    for (int t = 0; t < nc; ++t) {
        long long row = 0;
        for (int p = 0; p < nc; ++p) row += rep.cm(t, p);
        correct += rep.cm(t, t);
        rep.per_class_accuracy[t] = row > 0 ? static_cast<double>(rep.cm(t, t)) / row : 0.0;
    }
    rep.overall_accuracy =
        rep.sample_count > 0 ? static_cast<double>(correct) / rep.sample_count : 0.0;
    return rep;
}

struct TrainOptions {
    int epochs = 100;
    LrSchedule schedule;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double lambda_kd = 5.0;
    bool train_on_hr = false;      // teacher phase feeds HR images
    std::ostream* metrics = nullptr;  // NDJSON, one record per step
    std::ostream* log = nullptr;      // human-readable epoch summaries
    bool eval_each_epoch = true;
    int eval_batch = 32;
};

struct StepRecord {
    int epoch = 0, step = 0;
    double l_ce = 0, l_kd = 0, total = 0, lr = 0;
};

template <typename T>
struct TrainResult {
    std::vector<StepRecord> steps;
    std::vector<EvaluationReport> epoch_reports;
    double best_accuracy = -1.0;
    int best_epoch = -1;
    std::vector<Tensor<T>> best_state;  // parameter snapshot at best accuracy
};

namespace detail {
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <typename T>
uint64_t param_digest(std::vector<Param<T>*> params) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const Param<T>* p : params)
        h = fnv1a(p->value.v.data(), p->value.size() * sizeof(T), h);
    return h;
}
}  // namespace detail

// One training loop serves both phases. With `teacher == nullptr` the loop is
// plain supervised training (cross-entropy only). With a teacher, each step
// feeds HR images to the frozen teacher and LR images to the student and adds
// lambda_kd * L_kd on the per-MAB attention maps. The teacher is verified
// byte-identical at the end of training.
template <typename T>
TrainResult<T> train_network(Network<T>& net, Network<T>* teacher,
                             const PairedLoader<T>& loader, const TrainOptions& opts) {
    if (loader.train_indices().empty())
        throw std::invalid_argument("train_network: empty training split");
    if (opts.lambda_kd < 0) throw std::invalid_argument("train_network: negative lambda_kd");
    if (teacher && teacher->mab_count() != net.mab_count())
        throw std::invalid_argument(
            "train_network: teacher/student architecture mismatch (" +
            std::to_string(teacher->mab_count()) + " vs " +
            std::to_string(net.mab_count()) + " attention blocks)");

    uint64_t teacher_digest = 0;
    if (teacher) {
        teacher->set_training(false);
        teacher_digest = detail::param_digest<T>(teacher->parameters());
    }

    SgdMomentum<T> opt(net.parameters());
    opt.momentum = static_cast<T>(opts.momentum);
    opt.weight_decay = static_cast<T>(opts.weight_decay);

    TrainResult<T> result;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        opt.lr = static_cast<T>(opts.schedule.lr_at(epoch));
        net.set_training(true);
        const std::vector<BatchPlan> plans = loader.plan_epoch(epoch);
        double epoch_ce = 0.0, epoch_kd = 0.0;
        for (size_t step = 0; step < plans.size(); ++step) {
            const DistillationBatch<T> batch = loader.load(plans[step]);
            const Tensor<T>& inputs = opts.train_on_hr ? batch.hr_images : batch.lr_images;

            typename Network<T>::Cache cache;
            ForwardOutput<T> out = net.forward(inputs, cache);
            const T l_ce = cross_entropy(out.logits, batch.labels);

            KdResult<T> kd;
            std::vector<AttentionMapPair<T>> teacher_maps;
            if (teacher) {
                ForwardOutput<T> tout = teacher->forward(batch.hr_images);
                teacher_maps = std::move(tout.attention_maps);
                kd = kd_loss(teacher_maps, out.attention_maps);
            }
            const LossBreakdown<T> lb = total_loss(l_ce, kd, static_cast<T>(opts.lambda_kd));
            if (!std::isfinite(static_cast<double>(lb.total)))
                throw std::runtime_error("train_network: non-finite loss at epoch " +
                                         std::to_string(epoch) + " batch " +
                                         std::to_string(step));

            opt.zero_grad();
            const Tensor<T> glogits = cross_entropy_backward(out.logits, batch.labels, T(1));
            std::vector<AttentionMapPair<T>> map_grads;
            if (teacher && opts.lambda_kd > 0)
                map_grads = kd_loss_backward(teacher_maps, out.attention_maps,
                                             static_cast<T>(opts.lambda_kd));
            net.backward(glogits, map_grads, cache);
            opt.step();

            StepRecord rec{epoch, static_cast<int>(step), static_cast<double>(lb.l_ce),
                           static_cast<double>(lb.l_kd), static_cast<double>(lb.total),
                           static_cast<double>(opt.lr)};
            result.steps.push_back(rec);
            epoch_ce += rec.l_ce;
            epoch_kd += rec.l_kd;
            if (opts.metrics)
                *opts.metrics << nlohmann::json({{"schema_version", 1},
                                                 {"epoch", rec.epoch},
                                                 {"step", rec.step},
                                                 {"l_ce", rec.l_ce},
                                                 {"l_kd", rec.l_kd},
                                                 {"total", rec.total},
                                                 {"lr", rec.lr}})
                                    .dump()
                             << "\n";
        }
        if (opts.eval_each_epoch && !loader.test_indices().empty()) {
            EvaluationReport rep = evaluate(net, loader, loader.test_indices(),
                                            opts.train_on_hr ? EvalInput::hr : EvalInput::lr,
                                            opts.eval_batch);
            result.epoch_reports.push_back(rep);
            if (rep.overall_accuracy > result.best_accuracy) {
                result.best_accuracy = rep.overall_accuracy;
                result.best_epoch = epoch;
                result.best_state.clear();
                for (Param<T>* p : net.parameters()) result.best_state.push_back(p->value);
            }
            if (opts.log)
                *opts.log << "epoch " << epoch << ": mean l_ce "
                          << epoch_ce / std::max<size_t>(1, plans.size()) << ", mean l_kd "
                          << epoch_kd / std::max<size_t>(1, plans.size()) << ", test acc "
                          << rep.overall_accuracy << "\n";
        } else if (opts.log) {
            *opts.log << "epoch " << epoch << ": mean l_ce "
                      << epoch_ce / std::max<size_t>(1, plans.size()) << "\n";
        }
    }

    if (teacher && detail::param_digest<T>(teacher->parameters()) != teacher_digest)
        throw std::logic_error("train_network: frozen teacher parameters changed");
    return result;
}

template <typename T>
TrainResult<T> train_teacher(Network<T>& net, const PairedLoader<T>& loader,
                             TrainOptions opts) {
    opts.train_on_hr = true;
    opts.lambda_kd = 0.0;
    return train_network<T>(net, nullptr, loader, opts);
}

template <typename T>
TrainResult<T> train_student(Network<T>& net, Network<T>& frozen_teacher,
                             const PairedLoader<T>& loader, TrainOptions opts) {
    opts.train_on_hr = false;
    return train_network<T>(net, &frozen_teacher, loader, opts);
}

}  // namespace gme
