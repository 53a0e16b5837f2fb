#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "flowlens/core/image_ops.hpp"
#include "flowlens/core/nn.hpp"
#include "flowlens/core/ops.hpp"
#include "flowlens/core/optim.hpp"
#include "flowlens/core/serialize.hpp"
#include "test_util.hpp"

#include <cstdio>

using namespace flowlens;
using fl_test::fd_grad;
using fl_test::rel_err;

namespace {

Tensor randt(Shape s, Rng& rng, float lo = -1.f, float hi = 1.f) {
    return Tensor::rand_uniform(std::move(s), rng, lo, hi);
}

// Checks one leaf's analytic gradient against central differences.
double check_grad(Tensor& leaf, const std::function<Tensor()>& forward) {
    leaf.zero_grad();
    Tensor loss = forward();
    loss.backward();
    auto analytic = leaf.grad();
    auto fd = fd_grad(leaf, [&] {
        NoGradGuard ng;
        return double(forward().item());
    });
    return rel_err(analytic, fd);
}

} // namespace

TEST_CASE("broadcast arithmetic values") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor b({3}, {10, 20, 30});
    Tensor c = add(a, b);
    CHECK(c.at({0, 0}) == 11.f);
    CHECK(c.at({1, 2}) == 36.f);
    Tensor d = mul(a, b);
    CHECK(d.at({1, 1}) == 100.f);
    Tensor s = sub(a, Tensor::scalar(1.f));
    CHECK(s.at({0, 0}) == 0.f);
}

TEST_CASE("elementwise gradient checks") {
    Rng rng(7);
    Tensor x = randt({2, 3, 4}, rng, -0.8f, 0.8f);
    x.set_requires_grad(true);
    Tensor y = randt({4}, rng, 0.5f, 1.5f);
    y.set_requires_grad(true);

    CHECK(check_grad(x, [&] { return mean(mul(x, x)); }) < 1e-3);
    CHECK(check_grad(x, [&] { return mean(gelu(x)); }) < 1e-3);
    CHECK(check_grad(x, [&] { return mean(tanh_op(x)); }) < 1e-3);
    CHECK(check_grad(x, [&] { return mean(sigmoid(x)); }) < 1e-3);
    CHECK(check_grad(x, [&] { return mean(divide(x, y)); }) < 1e-3);
    CHECK(check_grad(y, [&] { return mean(divide(x, y)); }) < 1e-3);
    CHECK(check_grad(x, [&] { return mean(leaky_relu(add(mul(x, y), y))); }) < 2e-3);
    CHECK(check_grad(x, [&] { return sum(abs_op(x)); }) < 2e-3);
}

TEST_CASE("matmul gradient and batching") {
    Rng rng(11);
    Tensor a = randt({2, 3, 4}, rng);
    Tensor b = randt({4, 5}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor out = matmul(a, b);
    CHECK(out.shape() == Shape{2, 3, 5});

    // value check against a hand loop
    double acc = 0;
    for (int k = 0; k < 4; ++k) acc += double(a.at({1, 2, k})) * b.at({k, 3});
    CHECK(std::fabs(out.at({1, 2, 3}) - acc) < 1e-5);

    CHECK(check_grad(a, [&] { return mean(matmul(a, b)); }) < 1e-3);
    CHECK(check_grad(b, [&] { return mean(matmul(a, b)); }) < 1e-3);

    Tensor ab = randt({2, 4, 5}, rng);
    ab.set_requires_grad(true);
    CHECK(check_grad(ab, [&] { return mean(matmul(a, ab)); }) < 1e-3);
}

TEST_CASE("softmax rows sum to one and gradient") {
    Rng rng(3);
    Tensor x = randt({3, 6}, rng, -2.f, 2.f);
    x.set_requires_grad(true);
    Tensor y = softmax_lastdim(x);
    for (int r = 0; r < 3; ++r) {
        double s = 0;
        for (int c = 0; c < 6; ++c) s += y.at({r, c});
        CHECK(std::fabs(s - 1.0) < 1e-6);
    }
    Tensor probe = randt({3, 6}, rng);
    CHECK(check_grad(x, [&] { return mean(mul(softmax_lastdim(x), probe)); }) < 1e-3);
}

TEST_CASE("layer norm gradient") {
    Rng rng(5);
    Tensor x = randt({4, 8}, rng);
    Tensor g = randt({8}, rng, 0.5f, 1.5f);
    Tensor b = randt({8}, rng, -0.2f, 0.2f);
    x.set_requires_grad(true);
    g.set_requires_grad(true);
    b.set_requires_grad(true);
    Tensor probe = randt({4, 8}, rng);
    auto fwd = [&] { return mean(mul(layer_norm(x, g, b), probe)); };
    CHECK(check_grad(x, fwd) < 2e-3);
    CHECK(check_grad(g, fwd) < 1e-3);
    CHECK(check_grad(b, fwd) < 1e-3);
}

TEST_CASE("shape ops gradients") {
    Rng rng(9);
    Tensor x = randt({2, 3, 4}, rng);
    x.set_requires_grad(true);
    Tensor probe = randt({4, 6}, rng);
    CHECK(check_grad(x, [&] { return mean(mul(reshape(x, {4, 6}), probe)); }) < 1e-3);
    Tensor probe2 = randt({4, 2, 3}, rng);
    CHECK(check_grad(x, [&] { return mean(mul(permute(x, {2, 0, 1}), probe2)); }) < 1e-3);
    Tensor probe3 = randt({2, 2, 4}, rng);
    CHECK(check_grad(x, [&] { return mean(mul(slice(x, 1, 1, 2), probe3)); }) < 1e-3);
    CHECK(check_grad(x, [&] { return mean(cat({x, mul_scalar(x, 2.f)}, 1)); }) < 1e-3);
    Tensor probe4 = randt({2, 3, 4}, rng);
    CHECK(check_grad(x, [&] { return mean(mul(flip(x, 2), probe4)); }) < 2e-3);
}

TEST_CASE("conv2d matches direct stencil and gradients") {
    Rng rng(13);
    Tensor x = randt({2, 3, 6, 7}, rng);
    Tensor w = randt({4, 3, 3, 3}, rng, -0.4f, 0.4f);
    Tensor b = randt({4}, rng, -0.1f, 0.1f);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    b.set_requires_grad(true);

    Tensor y = conv2d(x, w, b, 1, 1);
    CHECK(y.shape() == Shape{2, 4, 6, 7});

    // direct stencil at an interior point
    double acc = b.at({2});
    for (int ci = 0; ci < 3; ++ci)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                acc += double(x.at({1, ci, 2 + i, 3 + j})) * w.at({2, ci, i, j});
    CHECK(std::fabs(y.at({1, 2, 3, 4}) - acc) < 1e-5);

    auto fwd = [&] { return mean(square(conv2d(x, w, b, 2, 1))); };
    CHECK(check_grad(x, fwd) < 2e-3);
    CHECK(check_grad(w, fwd) < 2e-3);
    CHECK(check_grad(b, fwd) < 1e-3);
}

TEST_CASE("depthwise and grouped conv gradient") {
    Rng rng(17);
    Tensor x = randt({1, 4, 5, 5}, rng);
    Tensor w = randt({4, 1, 3, 3}, rng, -0.5f, 0.5f);
    Tensor b = randt({4}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    auto fwd = [&] { return mean(square(conv2d(x, w, b, 1, 1, 4))); };
    CHECK(check_grad(x, fwd) < 2e-3);
    CHECK(check_grad(w, fwd) < 2e-3);
}

TEST_CASE("conv_transpose2d shapes and gradient") {
    Rng rng(19);
    Tensor x = randt({1, 3, 4, 5}, rng);
    Tensor w = randt({3, 2, 4, 4}, rng, -0.4f, 0.4f);
    Tensor b = randt({2}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    Tensor y = conv_transpose2d(x, w, b, 2, 1);
    CHECK(y.shape() == Shape{1, 2, 8, 10});
    auto fwd = [&] { return mean(square(conv_transpose2d(x, w, b, 2, 1))); };
    CHECK(check_grad(x, fwd) < 2e-3);
    CHECK(check_grad(w, fwd) < 2e-3);
}

TEST_CASE("conv3d gradient") {
    Rng rng(23);
    Tensor x = randt({1, 2, 3, 5, 5}, rng);
    Tensor w = randt({3, 2, 2, 3, 3}, rng, -0.4f, 0.4f);
    Tensor b = randt({3}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    auto fwd = [&] { return mean(square(conv3d(x, w, b, 1, 2, 2, 0, 1, 1))); };
    CHECK(check_grad(x, fwd) < 2e-3);
    CHECK(check_grad(w, fwd) < 2e-3);
}

TEST_CASE("pool, resize, pad gradients") {
    Rng rng(29);
    Tensor x = randt({1, 2, 6, 8}, rng);
    x.set_requires_grad(true);
    CHECK(check_grad(x, [&] { return mean(square(avg_pool2d(x, 2, 4))); }) < 1e-3);
    CHECK(check_grad(x, [&] { return mean(square(resize_bilinear(x, 12, 16))); }) < 2e-3);
    CHECK(check_grad(x, [&] { return mean(square(resize_bilinear(x, 3, 4))); }) < 2e-3);
    Tensor pad_probe = randt({1, 2, 9, 11}, rng);
    CHECK(check_grad(x, [&] { return mean(mul(pad2d(x, 1, 2, 3, 0, 0.5f), pad_probe)); }) < 1e-3);
}

TEST_CASE("warp: zero flow is identity; gradients away from grid points") {
    Rng rng(31);
    Tensor feat = randt({1, 3, 6, 7}, rng);
    Tensor zero_flow({1, 2, 6, 7}, 0.f);
    Tensor out = warp_bilinear(feat, zero_flow);
    CHECK(fl_test::max_abs_diff(out, feat) == 0.0);

    // keep sampling points away from integers so FD does not cross a kink
    Tensor flow = randt({1, 2, 6, 7}, rng, 0.2f, 0.45f);
    feat.set_requires_grad(true);
    flow.set_requires_grad(true);
    Tensor probe = randt({1, 3, 6, 7}, rng);
    auto fwd = [&] { return mean(mul(warp_bilinear(feat, flow), probe)); };
    CHECK(check_grad(feat, fwd) < 1e-3);
    CHECK(check_grad(flow, fwd) < 1e-3);
}

TEST_CASE("deform_unfold gradients") {
    Rng rng(37);
    int k = 3, g = 2, C = 4;
    Tensor x = randt({1, C, 5, 5}, rng);
    Tensor off = randt({1, 2 * k * k * g, 5, 5}, rng, 0.1f, 0.4f);
    Tensor mod = randt({1, k * k * g, 5, 5}, rng, 0.2f, 0.8f);
    x.set_requires_grad(true);
    off.set_requires_grad(true);
    mod.set_requires_grad(true);
    Tensor probe = randt({1, C * k * k, 5, 5}, rng);
    auto fwd = [&] { return mean(mul(deform_unfold(x, off, mod, k, g), probe)); };
    CHECK(check_grad(x, fwd) < 2e-3);
    CHECK(check_grad(off, fwd) < 2e-3);
    CHECK(check_grad(mod, fwd) < 1e-3);
}

TEST_CASE("unfold/fold adjoint pair gradients") {
    Rng rng(41);
    Tensor x = randt({1, 2, 9, 9}, rng);
    x.set_requires_grad(true);
    Tensor probe = randt({1, 9, 2 * 49}, rng);
    CHECK(check_grad(x, [&] { return mean(mul(unfold_tokens(x, 7, 3, 2), probe)); }) < 1e-3);

    Tensor tok = randt({1, 9, 2 * 49}, rng);
    tok.set_requires_grad(true);
    Tensor probe2 = randt({1, 2, 9, 9}, rng);
    CHECK(check_grad(tok, [&] { return mean(mul(fold_tokens(tok, 2, 9, 9, 7, 3, 2), probe2)); }) <
          1e-3);
}

TEST_CASE("detach blocks gradient flow") {
    Tensor x({2}, {1.f, 2.f});
    x.set_requires_grad(true);
    Tensor y = mul(x, x);
    Tensor z = mean(mul(y.detach(), x));
    z.backward();
    // d/dx of mean(detach(x^2) * x) = x^2 / 2 only (no 2x * x term)
    CHECK(x.grad()[0] == doctest::Approx(1.f / 2.f));
    CHECK(x.grad()[1] == doctest::Approx(4.f / 2.f));
}

TEST_CASE("backward twice accumulates deterministically") {
    Rng rng(43);
    Tensor x = randt({3, 3}, rng);
    x.set_requires_grad(true);
    auto run = [&] {
        x.zero_grad();
        Tensor l = mean(square(matmul(x, x)));
        l.backward();
        return x.grad();
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(g1 == g2);
}

TEST_CASE("adam determinism and parameter archive round-trip") {
    auto build = [](Rng& rng) {
        Linear l(4, 3, rng);
        return l;
    };
    Rng r1(100), r2(100);
    Linear a = build(r1), b = build(r2);
    ParamList pa, pb;
    a.params("lin", pa);
    b.params("lin", pb);
    Adam oa(pa, 1e-2f), ob(pb, 1e-2f);

    Rng data_rng(5);
    Tensor x = randt({8, 4}, data_rng);
    for (int step = 0; step < 10; ++step) {
        oa.zero_grad();
        Tensor la = mean(square(a.forward(x)));
        la.backward();
        oa.step();
        ob.zero_grad();
        Tensor lb = mean(square(b.forward(x)));
        lb.backward();
        ob.step();
    }
    CHECK(a.w.raw() == b.w.raw());
    CHECK(a.b.raw() == b.b.raw());

    std::string path = "/tmp/fl_test_params.bin";
    save_params(path, pa, "kind=test\n");
    Rng r3(999);
    Linear c = build(r3);
    ParamList pc;
    c.params("lin", pc);
    std::string cfg = load_params(path, pc);
    CHECK(cfg == "kind=test\n");
    CHECK(c.w.raw() == a.w.raw());
    std::remove(path.c_str());
}
