#include <catch2/catch_amalgamated.hpp>

#include "nof1/adam.hpp"
#include "nof1/rng.hpp"
#include "nof1/tensor.hpp"
#include "test_support.hpp"

using namespace nof1;
using testsup::finite_diff_grad;
using testsup::grads_match;
using testsup::random_tensor;

TEST_CASE("Tensor construction and invariants") {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.size() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), UsageError);
    CHECK_THROWS_AS(Tensor::from({1}, {std::nan("")}), NumericError);
    CHECK_THROWS_AS(Tensor::scalar(2).item() + Tensor::from({2}, {1, 2}).item(), UsageError);

    Tensor c = t.clone();
    CHECK_FALSE(c.same_buffer(t));
    c.data()[0] = 99;
    CHECK(t.data()[0] == 1.0);
}

TEST_CASE("conv2d forward examples") {
    SECTION("1x1 identity kernel passes input through") {
        Tensor x = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
        Tensor k = Tensor::from({1, 1, 1, 1}, {1});
        Tensor b = Tensor::zeros({1});
        Tensor y = conv2d(x, k, b, 1, 0);
        CHECK(y.shape() == Shape{1, 1, 3, 3});
        CHECK(y.data() == x.data());
    }
    SECTION("2x2 ones kernel sums the window") {
        Tensor x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
        Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
        Tensor b = Tensor::zeros({1});
        Tensor y = conv2d(x, k, b, 1, 0);
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y.item() == 10.0);
    }
    SECTION("output geometry follows floor((H + 2p - k)/s) + 1") {
        Rng rng(7);
        Tensor x = random_tensor({2, 3, 9, 7}, rng);
        Tensor k = random_tensor({4, 3, 3, 3}, rng);
        Tensor b = random_tensor({4}, rng);
        Tensor y = conv2d(x, k, b, 2, 1);
        CHECK(y.shape() == Shape{2, 4, 5, 4});
    }
    SECTION("shape mismatches are configuration errors") {
        Tensor x = Tensor::zeros({1, 2, 4, 4});
        Tensor k = Tensor::zeros({1, 3, 3, 3});
        Tensor b = Tensor::zeros({1});
        CHECK_THROWS_AS(conv2d(x, k, b, 1, 0), ConfigError);
        Tensor k2 = Tensor::zeros({1, 2, 6, 6});
        CHECK_THROWS_AS(conv2d(x, k2, b, 1, 0), ConfigError);
    }
}

TEST_CASE("conv_transpose2d forward examples") {
    SECTION("single pixel broadcasts through a ones kernel") {
        Tensor x = Tensor::from({1, 1, 1, 1}, {5});
        Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
        Tensor b = Tensor::zeros({1});
        Tensor y = conv_transpose2d(x, k, b, 1, 0);
        CHECK(y.shape() == Shape{1, 1, 2, 2});
        for (double v : y.data()) CHECK(v == 5.0);
    }
    SECTION("stride-2 4x4-kernel pad-1 doubles the resolution") {
        Rng rng(3);
        Tensor x = random_tensor({1, 2, 5, 5}, rng);
        Tensor k = random_tensor({2, 3, 4, 4}, rng);
        Tensor b = random_tensor({3}, rng);
        Tensor y = conv_transpose2d(x, k, b, 2, 1);
        CHECK(y.shape() == Shape{1, 3, 10, 10});
    }
}

namespace {

// <conv2d(x,K), y> must equal <x, conv_transpose2d(y,K)> for any geometry:
// the transposed convolution is the linear adjoint of the convolution.
void check_adjoint(Shape xs, Shape ks, int stride, int padding, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = random_tensor(xs, rng);
    Tensor k = random_tensor(ks, rng);
    Tensor zb_f = Tensor::zeros({ks[0]});
    Tensor y_shape_probe = conv2d(x, k, zb_f, stride, padding);
    Tensor y = random_tensor(y_shape_probe.shape(), rng);

    // conv_transpose kernel layout is [Cin,Cout,kH,kW]; the adjoint of
    // conv with kernel [Cout,Cin,kH,kW] uses the same coefficients with
    // the first two axes swapped.
    const std::size_t Cout = ks[0], Cin = ks[1], kH = ks[2], kW = ks[3];
    Tensor kt = Tensor::zeros({Cout, Cin, kH, kW});
    kt = Tensor::from({Cout, Cin, kH, kW}, k.data());

    Tensor zb_b = Tensor::zeros({Cin});
    Tensor xt = conv_transpose2d(y, kt, zb_b, stride, padding);
    REQUIRE(xt.shape() == x.shape());

    const double lhs = testsup::dot(conv2d(x, k, zb_f, stride, padding).data(), y.data());
    const double rhs = testsup::dot(x.data(), xt.data());
    const double scale = std::max({1.0, std::fabs(lhs), std::fabs(rhs)});
    CHECK(std::fabs(lhs - rhs) <= 1e-9 * scale);
}

double mse_head_loss(const Tensor& pred, const Tensor& target) {
    return mse_loss(pred, target).item();
}

}  // namespace

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    // geometries where the strided conv consumes its input exactly, so the
    // transposed map lands back on the original shape
    check_adjoint({1, 1, 4, 4}, {1, 1, 2, 2}, 1, 0, 11);
    check_adjoint({2, 3, 8, 8}, {4, 3, 3, 3}, 1, 1, 12);
    check_adjoint({1, 2, 9, 9}, {3, 2, 3, 3}, 2, 1, 13);
    check_adjoint({2, 2, 6, 6}, {2, 2, 4, 4}, 2, 1, 14);
    check_adjoint({1, 4, 5, 9}, {2, 4, 2, 3}, 3, 0, 15);
}

TEST_CASE("conv2d gradients match central finite differences") {
    Rng rng(21);
    Tensor x = random_tensor({2, 3, 8, 8}, rng);
    Tensor k = random_tensor({4, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    Tensor target = random_tensor({2, 4, 6, 6}, rng);
    x.set_tracked();
    k.set_tracked();
    b.set_tracked();

    Tape tape;
    Tensor loss = mse_loss(conv2d(x, k, b, 1, 0, &tape), target, &tape);
    tape.backward(loss);

    auto loss_fn = [&]() { return mse_head_loss(conv2d(x, k, b, 1, 0), target); };
    CHECK(grads_match(x.grad(), finite_diff_grad(x, loss_fn)));
    CHECK(grads_match(k.grad(), finite_diff_grad(k, loss_fn)));
    CHECK(grads_match(b.grad(), finite_diff_grad(b, loss_fn)));
}

TEST_CASE("conv_transpose2d gradients match central finite differences") {
    Rng rng(22);
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor k = random_tensor({3, 2, 4, 4}, rng);
    Tensor b = random_tensor({2}, rng);
    Tensor target = random_tensor({2, 2, 8, 8}, rng);
    x.set_tracked();
    k.set_tracked();
    b.set_tracked();

    Tape tape;
    Tensor loss = mse_loss(conv_transpose2d(x, k, b, 2, 1, &tape), target, &tape);
    tape.backward(loss);

    auto loss_fn = [&]() { return mse_head_loss(conv_transpose2d(x, k, b, 2, 1), target); };
    CHECK(grads_match(x.grad(), finite_diff_grad(x, loss_fn)));
    CHECK(grads_match(k.grad(), finite_diff_grad(k, loss_fn)));
    CHECK(grads_match(b.grad(), finite_diff_grad(b, loss_fn)));
}

TEST_CASE("linear forward examples and gradients") {
    SECTION("identity weight, zero bias") {
        Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
        Tensor w = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
        Tensor b = Tensor::zeros({3});
        CHECK(linear(x, w, b).data() == x.data());
    }
    SECTION("hand arithmetic") {
        Tensor x = Tensor::from({1, 2}, {1, 2});
        Tensor w = Tensor::from({1, 2}, {3, 4});
        Tensor b = Tensor::from({1}, {5});
        CHECK(linear(x, w, b).item() == 16.0);
    }
    SECTION("gradient check") {
        Rng rng(23);
        Tensor x = random_tensor({4, 5}, rng);
        Tensor w = random_tensor({3, 5}, rng);
        Tensor b = random_tensor({3}, rng);
        Tensor target = random_tensor({4, 3}, rng);
        x.set_tracked();
        w.set_tracked();
        b.set_tracked();
        Tape tape;
        Tensor loss = mse_loss(linear(x, w, b, &tape), target, &tape);
        tape.backward(loss);
        auto loss_fn = [&]() { return mse_head_loss(linear(x, w, b), target); };
        CHECK(grads_match(x.grad(), finite_diff_grad(x, loss_fn)));
        CHECK(grads_match(w.grad(), finite_diff_grad(w, loss_fn)));
        CHECK(grads_match(b.grad(), finite_diff_grad(b, loss_fn)));
    }
    SECTION("inner dimension mismatch") {
        CHECK_THROWS_AS(linear(Tensor::zeros({1, 2}), Tensor::zeros({1, 3}), Tensor::zeros({1})), ConfigError);
    }
}

TEST_CASE("activation and loss examples") {
    SECTION("relu clamps negatives") {
        Tensor y = relu(Tensor::from({3}, {-1, 0, 2}));
        CHECK(y.data() == std::vector<double>{0, 0, 2});
    }
    SECTION("sigmoid(0) = 0.5 with slope 1/4") {
        Tensor x = Tensor::from({1}, {0});
        x.set_tracked();
        Tape tape;
        Tensor s = sigmoid(x, &tape);
        CHECK(s.item() == 0.5);
        Tensor l = sum(s, &tape);
        tape.backward(l);
        CHECK(x.grad()[0] == Catch::Approx(0.25).margin(1e-15));
    }
    SECTION("sigmoid stays in (0,1) for extreme inputs") {
        Tensor y = sigmoid(Tensor::from({2}, {-800, 800}));
        CHECK(y.data()[0] >= 0.0);
        CHECK(y.data()[0] < 1e-300);
        CHECK(y.data()[1] == 1.0);  // saturates to 1.0 in double precision but stays finite
    }
    SECTION("mse of identical inputs is zero") {
        Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
        CHECK(mse_loss(x, x).item() == 0.0);
    }
    SECTION("mse shape mismatch") {
        CHECK_THROWS_AS(mse_loss(Tensor::zeros({2}), Tensor::zeros({3})), ConfigError);
    }
}

TEST_CASE("backward semantics") {
    SECTION("loss = sum(x) gives all-ones gradient") {
        Tensor x = Tensor::from({4}, {1, 2, 3, 4});
        x.set_tracked();
        Tape tape;
        Tensor l = sum(x, &tape);
        tape.backward(l);
        CHECK(x.grad() == std::vector<double>{1, 1, 1, 1});
    }
    SECTION("mse derivative is 2(x - t)/n") {
        Tensor x = Tensor::from({1}, {2});
        x.set_tracked();
        Tape tape;
        Tensor l = mse_loss(x, Tensor::zeros({1}), &tape);
        tape.backward(l);
        CHECK(x.grad()[0] == Catch::Approx(4.0).margin(1e-15));
    }
    SECTION("repeated backward accumulates into leaves") {
        Tensor x = Tensor::from({2}, {1, 2});
        x.set_tracked();
        Tape tape;
        Tensor l = sum(x, &tape);
        tape.backward(l);
        tape.backward(l);
        CHECK(x.grad() == std::vector<double>{2, 2});
    }
    SECTION("fan-out sums gradients") {
        // x feeds both sides of the loss; its gradient must be the sum of
        // the two branch contributions. Checked against finite differences.
        Tensor x = Tensor::from({2}, {0.3, -0.7});
        x.set_tracked();
        auto forward = [&](Tape* tape) { return mse_loss(relu(x, tape), sigmoid(x, tape), tape); };
        Tape tape;
        Tensor l = forward(&tape);
        tape.backward(l);
        auto loss_fn = [&]() { return forward(nullptr).item(); };
        CHECK(grads_match(x.grad(), finite_diff_grad(x, loss_fn)));
    }
    SECTION("non-scalar loss is a usage error") {
        Tensor x = Tensor::from({2}, {1, 2});
        x.set_tracked();
        Tape tape;
        Tensor y = relu(x, &tape);
        CHECK_THROWS_AS(tape.backward(y), UsageError);
    }
    SECTION("loss from a different tape is rejected") {
        Tensor x = Tensor::from({1}, {1});
        x.set_tracked();
        Tape t1, t2;
        Tensor l = sum(x, &t1);
        CHECK_THROWS_AS(t2.backward(l), UsageError);
    }
    SECTION("composite conv -> relu -> linear -> mse matches finite differences") {
        Rng rng(31);
        Tensor x = random_tensor({2, 2, 5, 5}, rng);
        Tensor k = random_tensor({3, 2, 3, 3}, rng);
        Tensor kb = random_tensor({3}, rng);
        Tensor w = random_tensor({2, 27}, rng);
        Tensor wb = random_tensor({2}, rng);
        Tensor target = random_tensor({2, 2}, rng);
        for (Tensor* t : {&x, &k, &kb, &w, &wb}) t->set_tracked();

        auto forward = [&](Tape* tape) {
            Tensor h = conv2d(x, k, kb, 1, 0, tape);          // [2,3,3,3]
            Tensor a = relu(h, tape);
            Tensor f = reshape(a, {2, 27}, tape);
            Tensor y = linear(f, w, wb, tape);
            return mse_loss(y, target, tape);
        };
        Tape tape;
        Tensor loss = forward(&tape);
        tape.backward(loss);
        auto loss_fn = [&]() { return forward(nullptr).item(); };
        CHECK(grads_match(x.grad(), finite_diff_grad(x, loss_fn)));
        CHECK(grads_match(k.grad(), finite_diff_grad(k, loss_fn)));
        CHECK(grads_match(kb.grad(), finite_diff_grad(kb, loss_fn)));
        CHECK(grads_match(w.grad(), finite_diff_grad(w, loss_fn)));
        CHECK(grads_match(wb.grad(), finite_diff_grad(wb, loss_fn)));
    }
}

TEST_CASE("gradient checks hold across distinct shapes") {
    // conv2d on three geometries (stride/pad variations), per the invariant
    // that every differentiable op passes on at least 3 random shapes.
    struct Geo {
        Shape x, k;
        int stride, pad;
    };
    const Geo geos[] = {
        {{1, 1, 6, 6}, {2, 1, 3, 3}, 1, 0},
        {{2, 3, 8, 8}, {4, 3, 3, 3}, 2, 1},
        {{1, 2, 7, 5}, {3, 2, 2, 2}, 1, 1},
    };
    int idx = 0;
    for (const Geo& g : geos) {
        Rng rng(100 + idx++);
        Tensor x = random_tensor(g.x, rng);
        Tensor k = random_tensor(g.k, rng);
        Tensor b = random_tensor({g.k[0]}, rng);
        x.set_tracked();
        k.set_tracked();
        b.set_tracked();
        auto forward = [&](Tape* tape) {
            Tensor y = conv2d(x, k, b, g.stride, g.pad, tape);
            return mse_loss(y, Tensor::zeros(y.shape()), tape);
        };
        Tape tape;
        Tensor loss = forward(&tape);
        tape.backward(loss);
        auto loss_fn = [&]() { return forward(nullptr).item(); };
        CHECK(grads_match(x.grad(), finite_diff_grad(x, loss_fn)));
        CHECK(grads_match(k.grad(), finite_diff_grad(k, loss_fn)));
        CHECK(grads_match(b.grad(), finite_diff_grad(b, loss_fn)));
    }
}

TEST_CASE("forward passes are deterministic and reject non-finite values") {
    SECTION("two identical forward passes agree bitwise") {
        Rng rng1(5), rng2(5);
        Tensor x1 = random_tensor({2, 3, 8, 8}, rng1);
        Tensor x2 = random_tensor({2, 3, 8, 8}, rng2);
        Tensor k1 = random_tensor({4, 3, 3, 3}, rng1);
        Tensor k2 = random_tensor({4, 3, 3, 3}, rng2);
        Tensor b1 = random_tensor({4}, rng1);
        Tensor b2 = random_tensor({4}, rng2);
        CHECK(conv2d(x1, k1, b1, 1, 1).data() == conv2d(x2, k2, b2, 1, 1).data());
    }
    SECTION("overflow to infinity raises a numeric error") {
        Tensor x = Tensor::full({1, 1, 2, 2}, 1e308);
        Tensor k = Tensor::full({1, 1, 2, 2}, 10.0);
        Tensor b = Tensor::zeros({1});
        CHECK_THROWS_AS(conv2d(x, k, b, 1, 0), NumericError);
    }
}

TEST_CASE("adam optimizer") {
    SECTION("first step moves a zero parameter by about -lr") {
        Tensor p = Tensor::zeros({1});
        p.set_tracked();
        p.grad()[0] = 1.0;
        std::vector<Tensor> params{p};
        AdamState st;
        st.lr = 0.001;
        adam_step(params, st);
        CHECK(p.data()[0] == Catch::Approx(-0.001).margin(1e-10));
        CHECK(st.step == 1);
    }
    SECTION("zero gradient leaves the parameter unchanged") {
        Tensor p = Tensor::from({2}, {1.5, -2.5});
        p.set_tracked();
        std::vector<Tensor> params{p};
        AdamState st;
        adam_step(params, st);
        adam_step(params, st);
        CHECK(p.data() == std::vector<double>{1.5, -2.5});
        CHECK(st.step == 2);
    }
    SECTION("identical seeds give bitwise-equal parameters after k steps") {
        auto run = [](std::uint64_t seed) {
            Rng rng(seed);
            Tensor p = random_tensor({8}, rng);
            p.set_tracked();
            std::vector<Tensor> params{p};
            AdamState st;
            for (int step = 0; step < 25; ++step) {
                zero_grads(params);
                for (std::size_t i = 0; i < p.size(); ++i) p.grad()[i] = rng.normal();
                adam_step(params, st);
            }
            return p.data();
        };
        CHECK(run(77) == run(77));
    }
    SECTION("missing gradient is a usage error") {
        Tensor p = Tensor::zeros({1});
        std::vector<Tensor> params{p};
        AdamState st;
        CHECK_THROWS_AS(adam_step(params, st), UsageError);
    }
}

TEST_CASE("rng determinism and distribution transforms") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.uniform() == b.uniform());
        CHECK(a.normal() == b.normal());
    }
    Rng c(9);
    double mean = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) mean += c.poisson(4.0);
    mean /= n;
    CHECK(mean == Catch::Approx(4.0).margin(0.1));
}
