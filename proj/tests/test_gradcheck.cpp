#include <doctest.h>

#include <cmath>
#include <functional>

#include "gme/attention.hpp"
#include "gme/losses.hpp"
#include "gme/mcb.hpp"
#include "gme/network.hpp"
#include "gme/optimizer.hpp"
#include "oracle.hpp"

using gme::AttentionKind;
using gme::AttentionMapPair;
using gme::Rng;
using gme::Tensor;
using D = Tensor<double>;

namespace {

double rel_err(double got, double want) {
    const double d = std::fabs(got - want);
    return d / std::max(1e-8, std::max(std::fabs(got), std::fabs(want)));
}

double central_diff(double& slot, const std::function<double()>& loss, double h) {
    const double keep = slot;
    slot = keep + h;
    const double up = loss();
    slot = keep - h;
    const double dn = loss();
    slot = keep;
    return (up - dn) / (2 * h);
}

// Checks one analytic derivative against central differences. Entries where
// the difference quotient itself is unstable across step sizes sit on a ReLU
// or max-pool kink and are skipped; everything else must agree.
bool grad_matches(double& slot, double analytic, const std::function<double()>& loss,
                  double h, double tol) {
    const double fd = central_diff(slot, loss, h);
    if (std::fabs(fd - analytic) < 1e-6) return true;
    if (rel_err(analytic, fd) < tol) return true;
    const double fd2 = central_diff(slot, loss, h / 8);
    if (rel_err(fd, fd2) > 1e-3) return true;  // non-differentiable point
    return rel_err(analytic, fd2) < tol || std::fabs(fd2 - analytic) < 1e-6;
}

// Central-difference check of every parameter of a block against the
// analytic gradients accumulated by one backward pass.
void check_param_grads(std::vector<gme::Param<double>*> params,
                       const std::function<double()>& loss, double h, double tol) {
    for (auto* p : params)
        for (size_t j = 0; j < p->value.size(); ++j)
            CHECK_MESSAGE(grad_matches(p->value.v[j], p->grad.v[j], loss, h, tol),
                          p->name << "[" << j << "]: analytic " << p->grad.v[j]);
}

// Nudges every parameter off its initialization point. Zero-initialized
// biases otherwise leave pre-ReLU activations *exactly* at the kink (a ReLU
// zero flowing through a zero-bias conv stays exactly zero), where central
// differences measure the one-sided average slope at every step size and the
// instability heuristic in grad_matches cannot flag it.
void jitter_params(const std::vector<gme::Param<double>*>& params, uint64_t seed) {
    Rng rng(seed);
    for (auto* p : params)
        for (double& v : p->value.v) v += 0.05 * rng.normal();
}

double dot(const D& a, const D& b) {
    double s = 0;
    for (size_t i = 0; i < a.v.size(); ++i) s += a.v[i] * b.v[i];
    return s;
}

}  // namespace

TEST_CASE("attention block gradients match finite differences") {
    for (bool norm : {false, true}) {
        gme::Mab<double> mab("t.mab", 4, 4, 1, AttentionKind::dbam, 4, norm);
        Rng rng(31);
        mab.init(rng);
        {
            std::vector<gme::Param<double>*> ps;
            mab.collect_params(ps);
            jitter_params(ps, 32);
        }
        D x(2, 4, 5, 5), gy(2, 4, 5, 5), gc(2, 4, 1, 1), gs(2, 1, 5, 5);
        oracle::fill_random(x, rng);
        oracle::fill_random(gy, rng);
        oracle::fill_random(gc, rng);
        oracle::fill_random(gs, rng);

        // loss = <out, gy> + <channel map, gc> + <spatial map, gs> so the
        // injected pre-sigmoid map gradients get exercised too
        auto loss = [&] {
            typename gme::Mab<double>::Cache c;
            D y = mab.forward(x, c);
            auto maps = mab.maps(c);
            return dot(y, gy) + dot(maps.channel, gc) + dot(maps.spatial, gs);
        };

        typename gme::Mab<double>::Cache c;
        D y = mab.forward(x, c);
        D gx = mab.backward(gy, &gc, &gs, c);

        std::vector<gme::Param<double>*> params;
        mab.collect_params(params);
        check_param_grads(params, loss, 1e-5, 1e-4);

        // input gradient
        for (size_t i = 0; i < x.v.size(); i += 7)
            CHECK(grad_matches(x.v[i], gx.v[i], loss, 1e-5, 1e-4));
    }
}

TEST_CASE("multi-scale block gradients match finite differences") {
    for (bool from_input : {false, true}) {
        gme::Mcb<double> mcb("t.mcb", 8, from_input);
        Rng rng(41);
        mcb.init(rng);
        {
            std::vector<gme::Param<double>*> ps;
            mcb.collect_params(ps);
            jitter_params(ps, 42);
        }
        D x(1, 8, 4, 4), gy(1, 8, 4, 4);
        oracle::fill_random(x, rng);
        oracle::fill_random(gy, rng);

        auto loss = [&] {
            typename gme::Mcb<double>::Cache c;
            return dot(mcb.forward(x, c), gy);
        };

        typename gme::Mcb<double>::Cache c;
        mcb.forward(x, c);
        D gx = mcb.backward(gy, c);

        std::vector<gme::Param<double>*> params;
        mcb.collect_params(params);
        check_param_grads(params, loss, 1e-5, 1e-4);

        for (size_t i = 0; i < x.v.size(); i += 5)
            CHECK(grad_matches(x.v[i], gx.v[i], loss, 1e-5, 1e-4));
    }
}

TEST_CASE("distillation loss gradient matches finite differences") {
    Rng rng(51);
    std::vector<AttentionMapPair<double>> t, s;
    for (int b = 0; b < 3; ++b) {
        AttentionMapPair<double> pt{D(2, 4, 1, 1), D(2, 1, 3, 3)};
        AttentionMapPair<double> ps{D(2, 4, 1, 1), D(2, 1, 3, 3)};
        oracle::fill_random(pt.channel, rng);
        oracle::fill_random(pt.spatial, rng);
        oracle::fill_random(ps.channel, rng);
        oracle::fill_random(ps.spatial, rng);
        t.push_back(pt);
        s.push_back(ps);
    }
    const double upstream = 1.7;
    auto grads = gme::kd_loss_backward(t, s, upstream);
    const double h = 1e-6;
    for (size_t b = 0; b < s.size(); ++b) {
        for (D* map : {&s[b].channel, &s[b].spatial}) {
            D& g = map == &s[b].channel ? grads[b].channel : grads[b].spatial;
            for (size_t i = 0; i < map->v.size(); ++i) {
                const double keep = map->v[i];
                map->v[i] = keep + h;
                const double up = upstream * gme::kd_loss(t, s).l_kd;
                map->v[i] = keep - h;
                const double dn = upstream * gme::kd_loss(t, s).l_kd;
                map->v[i] = keep;
                CHECK(rel_err(g.v[i], (up - dn) / (2 * h)) < 1e-4);
            }
        }
    }
}

TEST_CASE("cross-entropy gradient matches finite differences") {
    Rng rng(61);
    D logits(3, 5, 1, 1);
    oracle::fill_random(logits, rng, 3.0);
    std::vector<int> labels = {4, 0, 2};
    D g = gme::cross_entropy_backward(logits, labels, 1.0);
    const double h = 1e-6;
    for (size_t i = 0; i < logits.v.size(); ++i) {
        const double keep = logits.v[i];
        logits.v[i] = keep + h;
        const double up = gme::cross_entropy(logits, labels);
        logits.v[i] = keep - h;
        const double dn = gme::cross_entropy(logits, labels);
        logits.v[i] = keep;
        CHECK(rel_err(g.v[i], (up - dn) / (2 * h)) < 1e-5);
    }
}

TEST_CASE("two-stage network gradient matches finite differences end to end") {
    gme::NetworkConfig cfg;
    cfg.initial_channels = 4;
    cfg.stage_widths = {4, 8};
    cfg.blocks_per_stage = {1, 1};
    cfg.num_classes = 3;
    cfg.reduction_ratio = 4;
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.use_norm = false;
    gme::Network<double> net(cfg, 71);
    jitter_params(net.parameters(), 74);
    Rng rng(72);
    D x(2, 3, 8, 8);
    oracle::fill_random(x, rng);
    std::vector<int> labels = {1, 2};

    // fixed pseudo-teacher maps drive the distillation half of the loss
    std::vector<AttentionMapPair<double>> teacher;
    {
        auto probe = net.forward(x);
        for (auto& m : probe.attention_maps) {
            AttentionMapPair<double> p{D::zeros_like(m.channel), D::zeros_like(m.spatial)};
            oracle::fill_random(p.channel, rng);
            oracle::fill_random(p.spatial, rng);
            teacher.push_back(p);
        }
    }
    const double lambda = 2.0;

    auto loss = [&] {
        auto out = net.forward(x);
        const double ce = gme::cross_entropy(out.logits, labels);
        const double kd = gme::kd_loss(teacher, out.attention_maps).l_kd;
        return ce + lambda * kd;
    };

    typename gme::Network<double>::Cache cache;
    auto out = net.forward(x, cache);
    net.zero_grad();
    D glog = gme::cross_entropy_backward(out.logits, labels, 1.0);
    auto map_grads = gme::kd_loss_backward(teacher, out.attention_maps, lambda);
    net.backward(glog, map_grads, cache);

    // sampled parameter entries across every tensor
    Rng pick(73);
    int checked = 0;
    for (auto* p : net.parameters()) {
        const size_t n = p->value.size();
        for (int trial = 0; trial < 3; ++trial) {
            const size_t j = pick.uniform_int(static_cast<int>(n));
            CHECK_MESSAGE(grad_matches(p->value.v[j], p->grad.v[j], loss, 1e-4, 1e-3),
                          p->name << "[" << j << "]: analytic " << p->grad.v[j]);
            ++checked;
        }
    }
    CHECK(checked > 50);
}

TEST_CASE("momentum SGD follows its closed-form two-step update") {
    gme::Param<double> p;
    p.init_shape("t.p", 1, 1, 1, 1);
    p.value.v[0] = 2.0;
    gme::SgdMomentum<double> opt({&p});
    opt.lr = 0.1;
    opt.momentum = 0.9;
    opt.weight_decay = 0.01;

    const double g1 = 0.5, g2 = -0.25;
    double theta = 2.0, v = 0.0;
    // step 1
    p.grad.v[0] = g1;
    opt.step();
    v = 0.9 * v + (g1 + 0.01 * theta);
    theta -= 0.1 * v;
    CHECK(p.value.v[0] == doctest::Approx(theta).epsilon(1e-12));
    // step 2
    p.grad.v[0] = g2;
    opt.step();
    v = 0.9 * v + (g2 + 0.01 * theta);
    theta -= 0.1 * v;
    CHECK(p.value.v[0] == doctest::Approx(theta).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule decays stepwise") {
    gme::LrSchedule s;
    CHECK(s.lr_at(0) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.lr_at(19) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.lr_at(20) == doctest::Approx(0.04).epsilon(1e-12));
    CHECK(s.lr_at(40) == doctest::Approx(0.016).epsilon(1e-12));
    CHECK_THROWS_AS(s.lr_at(-1), std::invalid_argument);
}
