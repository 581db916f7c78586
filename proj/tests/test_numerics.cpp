#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "m3fas/adam.hpp"
#include "m3fas/ops.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace m3fas;

namespace {

Tensor random_tensor(std::mt19937_64& gen, const Shape& shape, double scale = 1.0) {
    Eigen::ArrayXd data(shape_numel(shape));
    for (Eigen::Index i = 0; i < data.size(); ++i)
        data[i] = scale * (2.0 * double(gen() >> 11) * 0x1.0p-53 - 1.0);
    return Tensor::from_array(shape, std::move(data));
}

constexpr double kGradTol = 1e-4;

}  // namespace

TEST_CASE("elementwise ops and their gradients") {
    std::mt19937_64 gen(1);
    Tensor a = random_tensor(gen, {3, 4});
    Tensor b = random_tensor(gen, {3, 4});

    CHECK((add(a, b).value() == a.value() + b.value()).all());
    CHECK((mul(a, b).value() == a.value() * b.value()).all());
    CHECK_THROWS_AS(add(a, random_tensor(gen, {4, 3})), InvalidInputError);

    CHECK(oracles::gradcheck([&] { return sum(mul(a, b)); }, {a, b}, gen) < kGradTol);
    CHECK(oracles::gradcheck([&] { return mean(add(a, scalar_mul(b, 2.5))); }, {a, b}, gen) <
          kGradTol);
    CHECK(oracles::gradcheck([&] { return sum(relu(sub(a, b))); }, {a, b}, gen) < kGradTol);
    CHECK(oracles::gradcheck([&] { return sum(sigmoid(a)); }, {a}, gen) < kGradTol);
}

TEST_CASE("backward basics") {
    std::mt19937_64 gen(2);
    Tensor x = random_tensor(gen, {5});
    x.set_requires_grad(true);

    SUBCASE("sum gives all-ones gradient") {
        Tape tape;
        TapeScope scope(tape);
        backward(sum(x));
        CHECK((x.grad() == 1.0).all());
    }
    SUBCASE("sum of squares gives 2x") {
        Tape tape;
        TapeScope scope(tape);
        backward(sum(mul(x, x)));
        CHECK((x.grad() - 2.0 * x.value()).abs().maxCoeff() < 1e-14);
    }
    SUBCASE("reusing a tensor accumulates additively") {
        Tape tape;
        TapeScope scope(tape);
        backward(sum(add(x, x)));
        CHECK((x.grad() == 2.0).all());
    }
    SUBCASE("no active tape is an error") {
        CHECK_THROWS_AS(backward(sum(x)), InvalidInputError);
    }
}

TEST_CASE("softmax") {
    std::mt19937_64 gen(3);
    Tensor x = random_tensor(gen, {4, 7}, 10.0);
    Tensor y = softmax(x, 1);
    for (Eigen::Index r = 0; r < 4; ++r) {
        double row = 0.0;
        for (Eigen::Index c = 0; c < 7; ++c) row += y.value()[r * 7 + c];
        CHECK(std::abs(row - 1.0) <= 1e-12);
    }
    // gradient through a weighted sum so the softmax Jacobian matters
    Tensor w = random_tensor(gen, {4, 7});
    CHECK(oracles::gradcheck([&] { return sum(mul(softmax(x, 1), w)); }, {x}, gen) < kGradTol);
    // axis 0 as well
    CHECK(oracles::gradcheck([&] { return sum(mul(softmax(x, 0), w)); }, {x}, gen) < kGradTol);
}

TEST_CASE("matmul against naive loops, all transpose combinations") {
    std::mt19937_64 gen(4);
    const Eigen::Index m = 3, k = 4, n = 5;
    for (bool ta : {false, true})
        for (bool tb : {false, true}) {
            Tensor a = ta ? random_tensor(gen, {k, m}) : random_tensor(gen, {m, k});
            Tensor b = tb ? random_tensor(gen, {n, k}) : random_tensor(gen, {k, n});
            Tensor c = matmul(a, b, ta, tb);
            for (Eigen::Index i = 0; i < m; ++i)
                for (Eigen::Index j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (Eigen::Index p = 0; p < k; ++p) {
                        const double av = ta ? a.value()[p * m + i] : a.value()[i * k + p];
                        const double bv = tb ? b.value()[j * k + p] : b.value()[p * n + j];
                        acc += av * bv;
                    }
                    CHECK(c.value()[i * n + j] == doctest::Approx(acc).epsilon(1e-12));
                }
            Tensor w = random_tensor(gen, {m, n});
            CHECK(oracles::gradcheck([&] { return sum(mul(matmul(a, b, ta, tb), w)); }, {a, b},
                                     gen) < kGradTol);
        }
    SUBCASE("batched matmul matches per-batch 2-d matmul") {
        Tensor a = random_tensor(gen, {2, 3, 4});
        Tensor b = random_tensor(gen, {2, 4, 5});
        Tensor c = matmul(a, b);
        for (Eigen::Index batch = 0; batch < 2; ++batch) {
            Tensor a2 = Tensor::from_array({3, 4}, a.value().segment(batch * 12, 12));
            Tensor b2 = Tensor::from_array({4, 5}, b.value().segment(batch * 20, 20));
            Tensor c2 = matmul(a2, b2);
            CHECK((c.value().segment(batch * 15, 15) - c2.value()).abs().maxCoeff() < 1e-14);
        }
        CHECK(oracles::gradcheck([&] { return sum(matmul(a, b)); }, {a, b}, gen) < kGradTol);
    }
    SUBCASE("inner dimension mismatch reports shapes") {
        Tensor a = random_tensor(gen, {3, 4});
        Tensor b = random_tensor(gen, {5, 6});
        CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[3x4]"), InvalidInputError);
    }
}

TEST_CASE("linear") {
    std::mt19937_64 gen(5);
    Tensor x = random_tensor(gen, {4, 6});
    Tensor w = random_tensor(gen, {6, 3});
    Tensor b = random_tensor(gen, {3});
    Tensor out = linear(x, w, b);
    CHECK(out.shape() == Shape{4, 3});
    CHECK(oracles::gradcheck([&] { return sum(mul(linear(x, w, b), linear(x, w, b))); },
                             {x, w, b}, gen) < kGradTol);
}

TEST_CASE("conv2d") {
    std::mt19937_64 gen(6);

    SUBCASE("1x1x3x3 input with 1x1x3x3 kernel and no padding is a dot product") {
        Tensor x = random_tensor(gen, {1, 1, 3, 3});
        Tensor w = random_tensor(gen, {1, 1, 3, 3});
        Tensor out = conv2d(x, w, Tensor(), 1, 0);
        CHECK(out.shape() == Shape{1, 1, 1, 1});
        CHECK(out.value()[0] ==
              doctest::Approx((x.value() * w.value()).sum()).epsilon(1e-12));
    }
    SUBCASE("padding preserves spatial size with 3x3 kernels") {
        Tensor x = random_tensor(gen, {2, 3, 8, 7});
        Tensor w = random_tensor(gen, {4, 3, 3, 3});
        Tensor b = random_tensor(gen, {4});
        CHECK(conv2d(x, w, b, 1, 1).shape() == Shape{2, 4, 8, 7});
    }
    SUBCASE("gradients") {
        Tensor x = random_tensor(gen, {2, 2, 5, 4});
        Tensor w = random_tensor(gen, {3, 2, 3, 3});
        Tensor b = random_tensor(gen, {3});
        CHECK(oracles::gradcheck([&] { return sum(mul(conv2d(x, w, b, 1, 1),
                                                      conv2d(x, w, b, 1, 1))); },
                                 {x, w, b}, gen) < kGradTol);
        CHECK(oracles::gradcheck([&] { return sum(conv2d(x, w, b, 2, 1)); }, {x, w, b}, gen) <
              kGradTol);
    }
    SUBCASE("channel mismatch reports shapes") {
        Tensor x = random_tensor(gen, {1, 2, 5, 5});
        Tensor w = random_tensor(gen, {3, 4, 3, 3});
        CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor(), 1, 1), doctest::Contains("[3x4x3x3]"),
                             InvalidInputError);
    }
}

TEST_CASE("pooling") {
    std::mt19937_64 gen(7);
    Tensor x = random_tensor(gen, {2, 3, 7, 6});

    SUBCASE("maxpool2d floors odd sizes") {
        Tensor out = maxpool2d(x, 2);
        CHECK(out.shape() == Shape{2, 3, 3, 3});
        CHECK(oracles::gradcheck([&] { return sum(mul(maxpool2d(x, 2), maxpool2d(x, 2))); }, {x},
                                 gen) < kGradTol);
    }
    SUBCASE("adaptive maxpool hits an exact target size") {
        Tensor out = adaptive_maxpool2d(x, 4, 3);
        CHECK(out.shape() == Shape{2, 3, 4, 3});
        CHECK(oracles::gradcheck([&] { return sum(mul(adaptive_maxpool2d(x, 4, 3),
                                                      adaptive_maxpool2d(x, 4, 3))); },
                                 {x}, gen) < kGradTol);
    }
    SUBCASE("global average pool") {
        Tensor out = global_avgpool(x);
        CHECK(out.shape() == Shape{2, 3});
        CHECK(out.value()[0] == doctest::Approx(x.value().segment(0, 42).mean()).epsilon(1e-12));
        CHECK(oracles::gradcheck([&] { return sum(mul(global_avgpool(x), global_avgpool(x))); },
                                 {x}, gen) < kGradTol);
    }
}

TEST_CASE("batchnorm2d") {
    std::mt19937_64 gen(8);
    Tensor x = random_tensor(gen, {4, 3, 5, 5});
    Tensor gamma = Tensor::full({3}, 1.3, false);
    Tensor beta = Tensor::full({3}, -0.2, false);

    SUBCASE("training mode normalizes per channel") {
        Tensor rm = Tensor::zeros({3});
        Tensor rv = Tensor::full({3}, 1.0);
        Tensor y = batchnorm2d(x, gamma, beta, rm, rv, true);
        for (Eigen::Index c = 0; c < 3; ++c) {
            double mean = 0.0, var = 0.0;
            long n = 0;
            for (Eigen::Index b = 0; b < 4; ++b)
                for (Eigen::Index i = 0; i < 25; ++i) {
                    mean += y.value()[(b * 3 + c) * 25 + i];
                    ++n;
                }
            mean /= double(n);
            for (Eigen::Index b = 0; b < 4; ++b)
                for (Eigen::Index i = 0; i < 25; ++i)
                    var += std::pow(y.value()[(b * 3 + c) * 25 + i] - mean, 2.0);
            var /= double(n);
            CHECK(mean == doctest::Approx(-0.2).epsilon(1e-9));
            CHECK(std::sqrt(var) == doctest::Approx(1.3).epsilon(1e-3));
        }
        // running stats moved toward the batch statistics
        CHECK(rm.value().abs().maxCoeff() > 0.0);
    }
    SUBCASE("inference mode is a pure affine map, batch-size independent") {
        Tensor rm = random_tensor(gen, {3});
        Tensor rv = Tensor::from_array({3}, random_tensor(gen, {3}).value().abs() + 0.5);
        Tensor y1 = batchnorm2d(x, gamma, beta, rm, rv, false);
        Tensor y2 = batchnorm2d(x, gamma, beta, rm, rv, false);
        CHECK((y1.value() == y2.value()).all());
        // single sample in isolation equals that sample inside the batch
        Tensor x0 = Tensor::from_array({1, 3, 5, 5}, x.value().segment(0, 75));
        Tensor y0 = batchnorm2d(x0, gamma, beta, rm, rv, false);
        CHECK((y0.value() == y1.value().segment(0, 75)).all());
    }
    SUBCASE("gradients, training and inference") {
        Tensor g = Tensor::from_array({3}, gamma.value());
        Tensor be = Tensor::from_array({3}, beta.value());
        Tensor rm = Tensor::zeros({3});
        Tensor rv = Tensor::full({3}, 1.0);
        Tensor w = random_tensor(gen, {4, 3, 5, 5});
        auto loss_train = [&] {
            Tensor rm2 = Tensor::from_array({3}, rm.value());
            Tensor rv2 = Tensor::from_array({3}, rv.value());
            return sum(mul(batchnorm2d(x, g, be, rm2, rv2, true), w));
        };
        CHECK(oracles::gradcheck(loss_train, {x, g, be}, gen) < kGradTol);
        Tensor rm3 = random_tensor(gen, {3});
        Tensor rv3 = Tensor::from_array({3}, random_tensor(gen, {3}).value().abs() + 0.5);
        auto loss_eval = [&] { return sum(mul(batchnorm2d(x, g, be, rm3, rv3, false), w)); };
        CHECK(oracles::gradcheck(loss_eval, {x, g, be}, gen) < kGradTol);
    }
}

TEST_CASE("layernorm2d normalizes per sample and differentiates") {
    std::mt19937_64 gen(9);
    Tensor x = random_tensor(gen, {3, 2, 4, 4});
    Tensor y = layernorm2d(x);
    for (Eigen::Index b = 0; b < 3; ++b) {
        const auto seg = y.value().segment(b * 32, 32);
        CHECK(seg.mean() == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(seg.square().mean() == doctest::Approx(1.0).epsilon(1e-3));
    }
    Tensor w = random_tensor(gen, {3, 2, 4, 4});
    CHECK(oracles::gradcheck([&] { return sum(mul(layernorm2d(x), w)); }, {x}, gen) < kGradTol);
}

TEST_CASE("concat, slice, reshape") {
    std::mt19937_64 gen(10);
    Tensor a = random_tensor(gen, {2, 3, 4});
    Tensor b = random_tensor(gen, {2, 5, 4});

    Tensor cat = concat({a, b}, 1);
    CHECK(cat.shape() == Shape{2, 8, 4});
    SUBCASE("concat then split returns the originals exactly") {
        Tensor a2 = slice(cat, 1, 0, 3);
        Tensor b2 = slice(cat, 1, 3, 5);
        CHECK((a2.value() == a.value()).all());
        CHECK((b2.value() == b.value()).all());
    }
    SUBCASE("gradients flow through concat and slice") {
        CHECK(oracles::gradcheck([&] { return sum(mul(concat({a, b}, 1), concat({a, b}, 1))); },
                                 {a, b}, gen) < kGradTol);
        CHECK(oracles::gradcheck([&] { return sum(slice(a, 2, 1, 2)); }, {a}, gen) < kGradTol);
    }
    SUBCASE("reshape keeps data and differentiates") {
        Tensor r = reshape(a, {6, 4});
        CHECK((r.value() == a.value()).all());
        CHECK(oracles::gradcheck([&] { return sum(mul(reshape(a, {24}), reshape(a, {24}))); },
                                 {a}, gen) < kGradTol);
    }
    SUBCASE("token layout round trip") {
        Tensor x = random_tensor(gen, {2, 3, 4, 5});
        Tensor tok = nchw_to_tokens(x);
        CHECK(tok.shape() == Shape{2, 20, 3});
        Tensor back = tokens_to_nchw(tok, 3, 4, 5);
        CHECK((back.value() == x.value()).all());
        Tensor w = random_tensor(gen, {2, 20, 3});
        CHECK(oracles::gradcheck([&] { return sum(mul(nchw_to_tokens(x), w)); }, {x}, gen) <
              kGradTol);
    }
}

TEST_CASE("scale_param and lerp_param") {
    std::mt19937_64 gen(11);
    Tensor x = random_tensor(gen, {3, 4});
    Tensor y = random_tensor(gen, {3, 4});
    Tensor gamma = Tensor::scalar(0.7);
    Tensor theta = Tensor::scalar(0.3);
    CHECK((scale_param(x, Tensor::scalar(0.0)).value() == 0.0).all());
    CHECK(oracles::gradcheck([&] { return sum(scale_param(x, gamma)); }, {x, gamma}, gen) <
          kGradTol);
    CHECK((lerp_param(x, y, Tensor::scalar(0.0)).value() == x.value()).all());
    CHECK((lerp_param(x, y, Tensor::scalar(1.0)).value() == y.value()).all());
    CHECK(oracles::gradcheck([&] { return sum(mul(lerp_param(x, y, theta),
                                                  lerp_param(x, y, theta))); },
                             {x, y, theta}, gen) < kGradTol);
}

TEST_CASE("bce_loss") {
    SUBCASE("logit 0 with label 1 gives ln 2") {
        Tensor z = Tensor::zeros({1});
        Eigen::ArrayXd y = Eigen::ArrayXd::Constant(1, 1.0);
        CHECK(bce_loss(z, y).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("large logits stay finite") {
        Tensor z = Tensor::full({1}, 20.0);
        Eigen::ArrayXd y = Eigen::ArrayXd::Constant(1, 1.0);
        const double loss = bce_loss(z, y).item();
        CHECK(std::isfinite(loss));
        CHECK(loss == doctest::Approx(std::log1p(std::exp(-20.0))).epsilon(1e-12));
        Tensor z2 = Tensor::full({1}, -30.0);
        CHECK(std::isfinite(bce_loss(z2, y).item()));
    }
    SUBCASE("gradient matches finite differences") {
        std::mt19937_64 gen(12);
        Tensor z = random_tensor(gen, {16}, 3.0);
        Eigen::ArrayXd y(16);
        for (Eigen::Index i = 0; i < 16; ++i) y[i] = double(gen() % 2);
        CHECK(oracles::gradcheck([&] { return bce_loss(z, y); }, {z}, gen) < kGradTol);
    }
    SUBCASE("labels must be binary and lengths must match") {
        Tensor z = Tensor::zeros({4});
        Eigen::ArrayXd bad = Eigen::ArrayXd::Constant(4, 0.5);
        CHECK_THROWS_AS(bce_loss(z, bad), InvalidInputError);
        Eigen::ArrayXd short_y = Eigen::ArrayXd::Zero(3);
        CHECK_THROWS_AS(bce_loss(z, short_y), InvalidInputError);
    }
}

TEST_CASE("adam") {
    SUBCASE("single step with unit gradient moves by ~lr") {
        Tensor w = Tensor::full({1}, 1.0, true);
        AdamConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.0;
        Adam adam({w}, cfg);
        w.ensure_grad();
        w.grad()[0] = 1.0;
        adam.step();
        CHECK(w.value()[0] == doctest::Approx(0.9).epsilon(1e-6));
        CHECK(w.grad()[0] == 0.0);  // zeroed after the step
    }
    SUBCASE("zero gradient and zero weight decay leave the parameter unchanged") {
        Tensor w = Tensor::full({3}, 2.0, true);
        AdamConfig cfg;
        cfg.weight_decay = 0.0;
        Adam adam({w}, cfg);
        w.ensure_grad();
        adam.step();
        CHECK((w.value() == 2.0).all());
    }
    SUBCASE("stepping without any gradient is an error") {
        Tensor w = Tensor::full({3}, 2.0, true);
        Adam adam({w}, {});
        CHECK_THROWS_AS(adam.step(), InvalidInputError);
    }
    SUBCASE("two identical runs produce bitwise-identical parameters") {
        auto run = [] {
            std::mt19937_64 gen(77);
            Tensor w = random_tensor(gen, {8});
            w.set_requires_grad(true);
            Adam adam({w}, {});
            for (int step = 0; step < 5; ++step) {
                Tape tape;
                TapeScope scope(tape);
                backward(sum(mul(w, w)));
                adam.step();
            }
            return w.value();
        };
        const Eigen::ArrayXd a = run();
        const Eigen::ArrayXd b = run();
        CHECK((a == b).all());
    }
    SUBCASE("decoupled weight decay shrinks before the moment update") {
        Tensor w = Tensor::full({1}, 1.0, true);
        AdamConfig cfg;
        cfg.lr = 0.1;
        cfg.weight_decay = 0.5;
        Adam adam({w}, cfg);
        w.ensure_grad();
        w.grad()[0] = 1.0;
        adam.step();
        // decay: 1 - 0.1*0.5*1 = 0.95, then the unit-magnitude Adam step
        CHECK(w.value()[0] == doctest::Approx(0.95 - 0.1).epsilon(1e-6));
    }
}
