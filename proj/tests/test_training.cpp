#include <doctest.h>

#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "gme/data.hpp"
#include "gme/trainer.hpp"
#include "oracle.hpp"

using gme::Network;
using gme::NetworkConfig;
using gme::Rng;
using gme::Tensor;
using D = Tensor<double>;
namespace fs = std::filesystem;

namespace {

NetworkConfig toy_net_config() {
    NetworkConfig cfg;
    cfg.initial_channels = 4;
    cfg.stage_widths = {8};
    cfg.blocks_per_stage = {1};
    cfg.num_classes = 7;
    cfg.reduction_ratio = 4;
    cfg.input_h = 16;
    cfg.input_w = 16;
    return cfg;
}

// One shared fabricated dataset for the whole suite.
const gme::PairedLoader<double>& toy_loader() {
    static const gme::PairedLoader<double> loader = [] {
        const fs::path src = fs::temp_directory_path() / "gme-tests" / "train_src";
        const fs::path out = fs::temp_directory_path() / "gme-tests" / "train_lr";
        fs::remove_all(src);
        fs::remove_all(out);
        gme::generate_toy_dataset(src.string(), 10, 32, 99);
        gme::DegradationSpec spec;
        spec.target_size = 8;
        auto res = gme::generate_lr_dataset(src.string(), spec, out.string(), 5);
        gme::LoaderOptions opts;
        opts.batch = 8;
        opts.seed = 321;
        opts.input_h = 16;
        opts.input_w = 16;
        return gme::PairedLoader<double>(res.manifest, opts);
    }();
    return loader;
}

gme::TrainOptions quick_opts(int epochs) {
    gme::TrainOptions opts;
    opts.epochs = epochs;
    opts.schedule.lr0 = 0.01;
    opts.schedule.decay = 0.5;
    opts.schedule.decay_every = 5;
    opts.eval_each_epoch = false;
    return opts;
}

}  // namespace

TEST_CASE("a cloned network yields exactly zero distillation loss") {
    const NetworkConfig cfg = toy_net_config();
    Network<double> teacher(cfg, 7), student(cfg, 7);  // identical initialization
    teacher.set_training(false);
    student.set_training(false);
    Rng rng(8);
    D x(2, 3, 16, 16);
    oracle::fill_random(x, rng);
    auto t = teacher.forward(x);
    auto s = student.forward(x);
    auto kd = gme::kd_loss(t.attention_maps, s.attention_maps);
    CHECK(kd.l_kd == 0.0);
    for (double v : kd.per_block) CHECK(v == 0.0);
}

TEST_CASE("the teacher is byte-identical after a distillation run") {
    const NetworkConfig cfg = toy_net_config();
    Network<double> teacher(cfg, 11), student(cfg, 12);
    std::vector<D> before;
    for (auto* p : teacher.parameters()) before.push_back(p->value);
    auto opts = quick_opts(1);
    CHECK_NOTHROW(gme::train_student(student, teacher, toy_loader(), opts));
    auto params = teacher.parameters();
    REQUIRE(params.size() == before.size());
    for (size_t i = 0; i < params.size(); ++i)
        for (size_t j = 0; j < before[i].size(); ++j)
            CHECK(params[i]->value.v[j] == before[i].v[j]);
}

TEST_CASE("lambda zero distillation is bit-equal to plain supervised training") {
    const NetworkConfig cfg = toy_net_config();
    Network<double> teacher(cfg, 21);
    Network<double> plain(cfg, 22), distilled(cfg, 22);

    auto opts = quick_opts(2);
    opts.lambda_kd = 0.0;
    auto rp = gme::train_network<double>(plain, nullptr, toy_loader(), opts);
    auto rd = gme::train_network<double>(distilled, &teacher, toy_loader(), opts);

    REQUIRE(rp.steps.size() == rd.steps.size());
    for (size_t i = 0; i < rp.steps.size(); ++i) {
        CHECK(rp.steps[i].l_ce == rd.steps[i].l_ce);      // bitwise
        CHECK(rd.steps[i].total == rd.steps[i].l_ce);     // exact combination identity
    }
    auto pp = plain.parameters();
    auto pd = distilled.parameters();
    REQUIRE(pp.size() == pd.size());
    for (size_t i = 0; i < pp.size(); ++i)
        for (size_t j = 0; j < pp[i]->value.size(); ++j)
            CHECK(pp[i]->value.v[j] == pd[i]->value.v[j]);
}

TEST_CASE("identically seeded training runs are bitwise reproducible") {
    const NetworkConfig cfg = toy_net_config();
    Network<double> a(cfg, 31), b(cfg, 31);
    auto opts = quick_opts(2);
    auto ra = gme::train_teacher(a, toy_loader(), opts);
    auto rb = gme::train_teacher(b, toy_loader(), opts);
    REQUIRE(ra.steps.size() == rb.steps.size());
    for (size_t i = 0; i < ra.steps.size(); ++i) {
        CHECK(ra.steps[i].l_ce == rb.steps[i].l_ce);
        CHECK(ra.steps[i].total == rb.steps[i].total);
    }
}

TEST_CASE("supervised loss decreases on the toy data") {
    const NetworkConfig cfg = toy_net_config();
    Network<double> net(cfg, 41);
    auto opts = quick_opts(4);
    auto r = gme::train_teacher(net, toy_loader(), opts);
    const size_t per_epoch = r.steps.size() / 4;
    double first = 0, last = 0;
    for (size_t i = 0; i < per_epoch; ++i) {
        first += r.steps[i].l_ce;
        last += r.steps[r.steps.size() - per_epoch + i].l_ce;
    }
    CHECK(last < first);
}

TEST_CASE("distillation records a positive, finite kd loss component") {
    const NetworkConfig cfg = toy_net_config();
    Network<double> teacher(cfg, 51), student(cfg, 52);
    auto opts = quick_opts(1);
    opts.lambda_kd = 5.0;
    std::ostringstream metrics;
    opts.metrics = &metrics;
    auto r = gme::train_student(student, teacher, toy_loader(), opts);
    REQUIRE(!r.steps.empty());
    for (const auto& s : r.steps) {
        CHECK(s.l_kd > 0.0);
        CHECK(s.l_kd <= 2.0);
        CHECK(std::isfinite(s.total));
        CHECK(s.total == doctest::Approx(s.l_ce + 5.0 * s.l_kd).epsilon(1e-12));
    }
    // metrics stream is valid NDJSON with the expected keys
    std::istringstream in(metrics.str());
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line);
        CHECK(j.contains("epoch"));
        CHECK(j.contains("step"));
        CHECK(j.contains("l_ce"));
        CHECK(j.contains("l_kd"));
        CHECK(j.contains("total"));
        CHECK(j.contains("lr"));
        ++lines;
    }
    CHECK(lines == static_cast<int>(r.steps.size()));
}

TEST_CASE("teacher/student attention-block mismatch is rejected") {
    NetworkConfig big = toy_net_config();
    big.blocks_per_stage = {2};
    Network<double> teacher(big, 61);
    Network<double> student(toy_net_config(), 62);
    auto opts = quick_opts(1);
    CHECK_THROWS_AS(gme::train_student(student, teacher, toy_loader(), opts),
                    std::invalid_argument);
}

TEST_CASE("evaluation satisfies the confusion-matrix identities and is deterministic") {
    const NetworkConfig cfg = toy_net_config();
    Network<double> net(cfg, 71);
    const auto& loader = toy_loader();
    auto rep1 = gme::evaluate(net, loader, loader.test_indices(), gme::EvalInput::lr, 4);
    auto rep2 = gme::evaluate(net, loader, loader.test_indices(), gme::EvalInput::lr, 4);
    CHECK(rep1.sample_count == static_cast<long long>(loader.test_indices().size()));
    CHECK(rep1.confusion == rep2.confusion);
    long long total = 0, diag = 0;
    for (int t = 0; t < rep1.num_classes; ++t)
        for (int p = 0; p < rep1.num_classes; ++p) {
            total += rep1.cm(t, p);
            if (t == p) diag += rep1.cm(t, p);
        }
    CHECK(total == rep1.sample_count);
    CHECK(rep1.overall_accuracy ==
          doctest::Approx(static_cast<double>(diag) / total).epsilon(1e-15));
    // per-class accuracy re-derives from the rows
    for (int t = 0; t < rep1.num_classes; ++t) {
        long long row = 0;
        for (int p = 0; p < rep1.num_classes; ++p) row += rep1.cm(t, p);
        if (row > 0)
            CHECK(rep1.per_class_accuracy[t] ==
                  doctest::Approx(static_cast<double>(rep1.cm(t, t)) / row).epsilon(1e-15));
    }
    // evaluation must not leave the network in eval mode
    net.set_training(true);
    gme::evaluate(net, loader, loader.test_indices(), gme::EvalInput::lr, 4);
    CHECK(net.training());
}

TEST_CASE("checkpointed best state tracks the best epoch") {
    const NetworkConfig cfg = toy_net_config();
    Network<double> net(cfg, 81);
    auto opts = quick_opts(2);
    opts.eval_each_epoch = true;
    auto r = gme::train_teacher(net, toy_loader(), opts);
    if (!toy_loader().test_indices().empty()) {
        CHECK(r.best_epoch >= 0);
        CHECK(r.best_accuracy >= 0.0);
        CHECK(r.best_state.size() == net.parameters().size());
    }
}
