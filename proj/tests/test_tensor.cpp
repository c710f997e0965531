#include <cmath>
#include <vector>

#include "doctest.h"
#include "td/tensor.hpp"

using namespace td;

TEST_CASE("matmul identity leaves the operand unchanged") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {3.5f, -1.0f, 2.0f, 0.25f});
    Tensor out = matmul(eye, a);
    for (size_t i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(a.data()[i]));
}

TEST_CASE("matmul rejects mismatched inner dims with a descriptive message") {
    Tensor a({2, 3});
    Tensor b({2, 3});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
    }
}

TEST_CASE("layer_norm output has zero mean and unit variance") {
    Tensor x({1, 3}, {1, 2, 3});
    Tensor y = layer_norm(x);
    float mean = (y.data()[0] + y.data()[1] + y.data()[2]) / 3.0f;
    float var = 0;
    for (int i = 0; i < 3; ++i) var += (y.data()[i] - mean) * (y.data()[i] - mean);
    var /= 3.0f;
    CHECK(std::fabs(mean) < 1e-6f);
    CHECK(var == doctest::Approx(1.0f).epsilon(1e-3));  // eps=1e-5 stabilizer
}

TEST_CASE("conv2d all-ones 3x3 kernel with padding 1 counts neighbors") {
    // Hand convolution oracle: interior pixels see 9 ones, corners 4.
    Tensor x = Tensor::full({1, 1, 4, 4}, 1.0f);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
    Tensor out = conv2d(x, w, Tensor(), 1, 1);
    REQUIRE(out.shape() == Shape{1, 1, 4, 4});
    auto at = [&](size_t y, size_t xx) { return out.data()[y * 4 + xx]; };
    CHECK(at(0, 0) == doctest::Approx(4));
    CHECK(at(0, 3) == doctest::Approx(4));
    CHECK(at(3, 0) == doctest::Approx(4));
    CHECK(at(3, 3) == doctest::Approx(4));
    CHECK(at(1, 1) == doctest::Approx(9));
    CHECK(at(2, 2) == doctest::Approx(9));
    CHECK(at(0, 1) == doctest::Approx(6));  // edges
}

TEST_CASE("transposed_conv2d doubles spatial dims with k=4 s=2 p=1") {
    Tensor x = random_normal({1, 3, 5, 5}, 99);
    Tensor w = random_normal({3, 2, 4, 4}, 100);
    Tensor out = transposed_conv2d(x, w, Tensor(), 2, 1);
    CHECK(out.shape() == Shape{1, 2, 10, 10});
}

TEST_CASE("softmax rows sum to one on any axis") {
    Tensor x = random_normal({3, 4, 5}, 1);
    for (size_t axis : {0ul, 1ul, 2ul}) {
        Tensor y = softmax(x, axis);
        // sum over `axis` must be 1 for every lane
        size_t outer = 1, inner = 1, len = x.shape()[axis];
        for (size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
        for (size_t d = axis + 1; d < 3; ++d) inner *= x.shape()[d];
        for (size_t o = 0; o < outer; ++o)
            for (size_t i = 0; i < inner; ++i) {
                float s = 0;
                for (size_t l = 0; l < len; ++l) s += y.data()[(o * len + l) * inner + i];
                CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
            }
    }
}

TEST_CASE("movement ops round-trip exactly") {
    Tensor x = random_normal({2, 3, 4}, 7);

    Tensor r = reshape(reshape(x, {4, 6}), {2, 3, 4});
    CHECK(r.vec() == x.vec());

    Tensor t = transpose(transpose(x, {2, 0, 1}), {1, 2, 0});
    CHECK(t.vec() == x.vec());

    Tensor a = slice(x, 1, 0, 2);
    Tensor b = slice(x, 1, 2, 3);
    std::vector<Tensor> parts = {a, b};
    Tensor c = concat(std::span<const Tensor>(parts), 1);
    CHECK(c.vec() == x.vec());
}

TEST_CASE("slice and concat shape handling") {
    Tensor x = random_normal({4, 6}, 3);
    CHECK(slice(x, 1, 2, 5).shape() == Shape{4, 3});
    CHECK_THROWS_AS(slice(x, 1, 5, 5), ShapeError);
    CHECK_THROWS_AS(slice(x, 2, 0, 1), ShapeError);
    Tensor y({3, 6});
    std::vector<Tensor> parts = {x, y};
    CHECK(concat(std::span<const Tensor>(parts), 0).shape() == Shape{7, 6});
    Tensor bad({3, 5});
    std::vector<Tensor> bad_parts = {x, bad};
    CHECK_THROWS_AS(concat(std::span<const Tensor>(bad_parts), 0), ShapeError);
}

TEST_CASE("tile and repeat_rows lay rows out as documented") {
    Tensor x({2, 2}, {1, 2, 3, 4});
    Tensor t = tile(x, 2);
    CHECK(t.shape() == Shape{4, 2});
    CHECK(t.vec() == std::vector<float>{1, 2, 3, 4, 1, 2, 3, 4});
    Tensor r = repeat_rows(x, 2);
    CHECK(r.shape() == Shape{4, 2});
    CHECK(r.vec() == std::vector<float>{1, 2, 1, 2, 3, 4, 3, 4});
}

TEST_CASE("backward: d/dx sum(x*x) = 2x") {
    Tensor x({1}, {3.0f});
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0f));
}

TEST_CASE("backward: unreachable leaf reads zero grad") {
    Tensor x({2}, {1.0f, 2.0f});
    Tensor p({2}, {5.0f, 5.0f});
    x.set_requires_grad(true);
    p.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(mul(x, x));
    tape.backward(loss);
    CHECK(p.grad()[0] == 0.0f);
    CHECK(p.grad()[1] == 0.0f);
}

TEST_CASE("backward rejects non-scalar loss and empty tape") {
    Tensor x({2}, {1.0f, 2.0f});
    x.set_requires_grad(true);
    {
        Tape tape;
        Tensor y = mul(x, x);
        CHECK_THROWS_AS(tape.backward(y), ValidationError);
    }
    {
        Tape tape;
        Tensor s = Tensor::scalar(1.0f);
        CHECK_THROWS_AS(tape.backward(s), ValidationError);
    }
}

TEST_CASE("gradients accumulate additively into shared inputs") {
    Tensor x({2}, {1.0f, 2.0f});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = add(mul(x, x), mul(x, x));  // 2x^2
    tape.backward(sum(y));
    CHECK(x.grad()[0] == doctest::Approx(4.0f));
    CHECK(x.grad()[1] == doctest::Approx(8.0f));
}

TEST_CASE("chain rule through a 3-primitive chain matches the hand Jacobian") {
    // loss = sum(scalar_scale(mul(x, x), 3)) => d/dx = 6x
    Tensor x({3}, {0.5f, -1.0f, 2.0f});
    x.set_requires_grad(true);
    Tape tape;
    Tensor loss = sum(scalar_scale(mul(x, x), 3.0f));
    tape.backward(loss);
    for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(6.0f * x.data()[i]));
}

TEST_CASE("non-finite outputs are rejected, never silent") {
    Tensor big = Tensor::full({4}, 1e30f);
    CHECK_THROWS_AS(mul(big, big), NumericError);
    Tensor x = Tensor::full({4}, 200.0f);
    CHECK_THROWS_AS(td::exp(x), NumericError);
}

TEST_CASE("elementwise ops demand exact shape agreement") {
    Tensor a({2, 3});
    Tensor b({3, 2});
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(mul(a, b), ShapeError);
    CHECK_THROWS_AS(mse_loss(a, b), ShapeError);
}

TEST_CASE("tensor invariants: shape/data length and positive dims") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0f, 2.0f}), ValidationError);
    CHECK_THROWS_AS(Tensor(Shape{0, 3}), ValidationError);
}

TEST_CASE("random_normal is deterministic per (shape, seed) and seed-sensitive") {
    Tensor a = random_normal({16, 16}, 42);
    Tensor b = random_normal({16, 16}, 42);
    Tensor c = random_normal({16, 16}, 43);
    CHECK(a.vec() == b.vec());
    CHECK(a.vec() != c.vec());
}

TEST_CASE("clamp saturates and blocks gradient outside the range") {
    Tensor x({4}, {-2.0f, -0.5f, 0.5f, 2.0f});
    x.set_requires_grad(true);
    Tape tape;
    Tensor y = clamp(x, -1.0f, 1.0f);
    CHECK(y.vec() == std::vector<float>{-1.0f, -0.5f, 0.5f, 1.0f});
    tape.backward(sum(y));
    CHECK(x.grad() == std::vector<float>{0.0f, 1.0f, 1.0f, 0.0f});
}

TEST_CASE("batched matmul multiplies each slice independently") {
    Tensor a = random_normal({2, 3, 4}, 1);
    Tensor b = random_normal({2, 4, 5}, 2);
    Tensor out = matmul(a, b);
    REQUIRE(out.shape() == Shape{2, 3, 5});
    for (size_t bi = 0; bi < 2; ++bi) {
        Tensor as = slice(a, 0, bi, bi + 1);
        Tensor bs = slice(b, 0, bi, bi + 1);
        Tensor single = matmul(reshape(as, {3, 4}), reshape(bs, {4, 5}));
        for (size_t i = 0; i < 15; ++i)
            CHECK(out.data()[bi * 15 + i] == doctest::Approx(single.data()[i]));
    }
}
