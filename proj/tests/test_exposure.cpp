#include "hdrhex/decoder.hpp"
#include "hdrhex/error.hpp"
#include "hdrhex/exposure.hpp"

#include <doctest.h>

#include <cmath>

using namespace hdrhex;

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void zero_all(Mlp& m) {
    for (auto* p : m.parameters()) std::fill(p->values.begin(), p->values.end(), 0.0);
}

}  // namespace

TEST_CASE("exposure table lookups") {
    SeededRng rng(1);
    ExposureTable t(4, ExposureConfig{}, rng);
    auto& emb = t.embeddings().values;
    for (double& v : emb) v = rng.uniform(-1, 1);
    std::copy(emb.begin(), emb.begin() + 8, emb.begin() + 16);  // row 2 = row 0
    CHECK(t.log_exposure(0) == t.log_exposure(2));
    CHECK(t.log_exposure(0) != t.log_exposure(1));
    const auto all = t.log_exposures();
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(all[j] - t.log_exposure(j)) < 1e-15);
    CHECK_THROWS_AS(t.log_exposure(4), IndexError);
    CHECK_THROWS_AS(t.backward(9, 1.0), IndexError);

    zero_all(t.mlp());
    t.mlp().bias(t.mlp().layers() - 1).values[0] = -0.35;
    for (std::size_t j = 0; j < 4; ++j) CHECK(t.log_exposure(j) == -0.35);
}

TEST_CASE("exposure table: hand-specified single layer") {
    ExposureConfig cfg;
    cfg.embed_dim = 2;
    cfg.hidden = {};
    SeededRng rng(1);
    ExposureTable t(2, cfg, rng);
    t.mlp().weight(0).values = {0.5, -2.0};
    t.mlp().bias(0).values = {0.25};
    t.embeddings().values = {1.0, 0.5, -1.0, 3.0};
    CHECK(std::abs(t.log_exposure(0) - (0.5 - 1.0 + 0.25)) < 1e-12);
    CHECK(std::abs(t.log_exposure(1) - (-0.5 - 6.0 + 0.25)) < 1e-12);
}

TEST_CASE("exposure table: direct mode") {
    ExposureConfig cfg;
    cfg.use_mlp = false;
    SeededRng rng(1);
    ExposureTable t(3, cfg, rng);
    t.embeddings().values = {0.1, -0.2, 0.3};
    CHECK(t.log_exposure(1) == -0.2);
    CHECK(t.network_parameters().empty());
}

TEST_CASE("fixed sigmoid crf") {
    const Crf g = Crf::fixed_sigmoid();
    CHECK(g(0.0) == 0.5);
    CHECK(std::abs(g(0.5) - 0.6224593312018546) < 1e-15);
    SeededRng rng(2);
    double prev = g(-39.9);
    for (double x = -39.8; x < 40.0; x += 0.1) {
        CHECK(std::abs(g(x) + g(-x) - 1.0) < 1e-15);
        const double cur = g(x);
        // the logistic rounds to 1 in double precision well before the clamp
        if (x < 30.0) CHECK(cur > prev);
        CHECK(cur >= prev);
        prev = cur;
    }
    CHECK(g(1e6) == g(40.0));
    CHECK(std::isfinite(g(-1e300)));
    CHECK(g.zero_point_loss() == 0.0);
    CHECK(g.parameters().empty());
}

TEST_CASE("ldr_color") {
    const Crf g = Crf::fixed_sigmoid();
    const Vec3 a = ldr_color(g, Vec3::Zero(), 0.0);
    CHECK(a == Vec3::Constant(0.5));
    const Vec3 b = ldr_color(g, Vec3::Ones(), -1.0);
    CHECK(b == Vec3::Constant(0.5));
    const Vec3 c = ldr_color(g, Vec3(0.3, 0.0, -0.3), 0.2);
    CHECK(std::abs(c[0] - logistic(0.5)) < 1e-15);
    CHECK(std::abs(c[1] - logistic(0.2)) < 1e-15);
    CHECK(std::abs(c[2] - logistic(-0.1)) < 1e-15);
    CHECK(std::abs(c[0] - 0.62246) < 1e-5);
    CHECK(std::abs(c[1] - 0.54983) < 1e-5);
    CHECK(std::abs(c[2] - 0.47502) < 1e-5);

    SeededRng rng(3);
    Crf m = Crf::trainable(rng);
    for (int k = 0; k < 200; ++k) {
        const Vec3 e(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5));
        const double ep = rng.uniform(-3, 3);
        const double delta = rng.uniform(-2, 2);
        const Vec3 x = ldr_color(g, e, ep);
        const Vec3 y = ldr_color(g, (e.array() + delta).matrix(), ep - delta);
        CHECK((x - y).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((x.array() > 0.0).all());
        CHECK((x.array() < 1.0).all());
        const Vec3 xm = ldr_color(m, e, ep);
        CHECK((xm.array() > 0.0).all());
        CHECK((xm.array() < 1.0).all());
    }
}

TEST_CASE("zero point loss") {
    SeededRng rng(4);
    Crf m = Crf::trainable(rng, {4}, 0.5, 0.1);
    double manual = 0;
    for (int c = 0; c < 3; ++c) manual += std::abs(m(0.0, c) - 0.5);
    CHECK(std::abs(m.zero_point_loss() - manual) < 1e-15);

    // force g_c(0) = C0 by zeroing the output layer
    for (auto& mlp : m.mlps()) {
        const int last = mlp.layers() - 1;
        std::fill(mlp.weight(last).values.begin(), mlp.weight(last).values.end(), 0.0);
        mlp.bias(last).values[0] = 0.0;
    }
    CHECK(m.zero_point_loss() == 0.0);

    // g_0(0) = 0.7 on one channel, exact C0 on the others
    m.mlps()[0].bias(m.mlps()[0].layers() - 1).values[0] = std::log(0.7 / 0.3);
    CHECK(std::abs(m.zero_point_loss() - 0.2) < 1e-12);
}

TEST_CASE("exposure and crf gradients match finite differences") {
    SeededRng rng(6);
    ExposureConfig cfg;
    cfg.embed_dim = 3;
    cfg.hidden = {4, 4};
    ExposureTable t(3, cfg, rng);
    for (double& v : t.embeddings().values) v = rng.uniform(-1, 1);
    auto params = t.network_parameters();
    params.push_back(&t.embeddings());
    const double w[] = {0.3, -1.2, 0.8};
    auto r = grad_check(
        [&] {
            double f = 0;
            for (std::size_t j = 0; j < 3; ++j) {
                f += w[j] * t.log_exposure(j);
                t.backward(j, w[j]);
            }
            return f;
        },
        params);
    CHECK(r.max_rel_error < 1e-4);

    Crf m = Crf::trainable(rng, {5, 4});
    auto cp = m.parameters();
    ParamTensor xs("x", {4});
    xs.values = {-1.3, 0.4, 2.2, -0.1};
    cp.push_back(&xs);
    r = grad_check(
        [&] {
            auto grads = m.make_grads();
            double f = 0;
            for (int c = 0; c < 3; ++c) {
                for (std::size_t i = 0; i < 4; ++i) {
                    f += (c + 1) * m(xs.values[i], c);
                    xs.grad[i] += m.backward(xs.values[i], c, c + 1.0, &grads);
                }
            }
            m.accumulate(grads);
            f += 0.7 * m.zero_point_loss();
            m.zero_point_backward(0.7);
            return f;
        },
        cp);
    CHECK(r.max_rel_error < 1e-4);
}
