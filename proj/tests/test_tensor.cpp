#include <catch2/catch_amalgamated.hpp>

#include "mltp/random.hpp"
#include "mltp/tensor.hpp"

#include "oracles.hpp"

using namespace mltp;

TEST_CASE("shape bookkeeping") {
    Tensor<double> t(Shape{2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.rank() == 2);
    CHECK_THROWS_AS(Tensor<double>(Shape{2, 2}, std::vector<double>{1.0}), InvalidArgument);
    CHECK(Tensor<float>::precision_bits == 32);
    CHECK(Tensor<double>::precision_bits == 64);
}

TEST_CASE("broadcasting rules") {
    CHECK(broadcast_shape({2, 3}, {3}) == Shape{2, 3});
    CHECK(broadcast_shape({4, 1, 5}, {2, 1}) == Shape{4, 2, 5});
    CHECK(broadcast_shape({1}, {7, 2}) == Shape{7, 2});
    CHECK_THROWS_AS(broadcast_shape({2, 3}, {2, 4}), InvalidArgument);

    Tensor<double> a(Shape{2, 2}, {1, 2, 3, 4});
    Tensor<double> b(Shape{2}, {10, 20});
    auto s = broadcast_binary(a, b, [](double x, double y) { return x + y; });
    CHECK(s.data == std::vector<double>{11, 22, 13, 24});

    auto back = reduce_to_value(s, Shape{2});
    CHECK(back.data == std::vector<double>{24, 46});

    auto up = broadcast_to_value(b, Shape{2, 2});
    CHECK(up.data == std::vector<double>{10, 20, 10, 20});
}

TEST_CASE("reduce_to is the adjoint of broadcast_to") {
    // <broadcast(x), y> == <x, reduce(y)> for random pairs
    RandomStream rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor<double> x(Shape{3, 1});
        Tensor<double> y(Shape{2, 3, 4});
        for (auto& v : x.data) v = rng.normal();
        for (auto& v : y.data) v = rng.normal();
        auto bx = broadcast_to_value(x, y.shape);
        auto ry = reduce_to_value(y, x.shape);
        double lhs = 0, rhs = 0;
        for (std::size_t i = 0; i < y.numel(); ++i) lhs += bx.data[i] * y.data[i];
        for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data[i] * ry.data[i];
        CHECK(lhs == Catch::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("matmul against naive oracle") {
    SECTION("identity") {
        Tensor<double> a(Shape{2, 2}, {1, 2, 3, 4});
        Tensor<double> eye(Shape{2, 2}, {1, 0, 0, 1});
        CHECK(matmul_value(a, eye).data == a.data);
    }
    SECTION("row sums") {
        Tensor<double> a(Shape{2, 2}, {1, 2, 3, 4});
        Tensor<double> ones(Shape{2, 1}, {1, 1});
        CHECK(matmul_value(a, ones).data == std::vector<double>{3, 7});
    }
    SECTION("random vs oracle") {
        RandomStream rng(3);
        Tensor<double> a(Shape{4, 6}), b(Shape{6, 5});
        for (auto& v : a.data) v = rng.normal();
        for (auto& v : b.data) v = rng.normal();
        CHECK(oracles::max_rel_err(matmul_value(a, b), oracles::naive_matmul(a, b)) < 1e-12);
    }
    SECTION("shape mismatch rejected") {
        Tensor<double> a(Shape{2, 3}), b(Shape{2, 3});
        CHECK_THROWS_AS(matmul_value(a, b), InvalidArgument);
    }
}

TEST_CASE("conv2d against naive oracle") {
    SECTION("all ones") {
        Tensor<double> x = Tensor<double>::ones(Shape{1, 1, 3, 3});
        Tensor<double> k = Tensor<double>::ones(Shape{1, 1, 2, 2});
        auto y = conv2d_value(x, k, 1, 0);
        CHECK(y.shape == Shape{1, 1, 2, 2});
        for (double v : y.data) CHECK(v == 4.0);
    }
    SECTION("1x1 kernel scales") {
        Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
        Tensor<double> k(Shape{1, 1, 1, 1}, {2});
        CHECK(conv2d_value(x, k, 1, 0).data == std::vector<double>{2, 4, 6, 8});
    }
    SECTION("random multi-channel vs oracle") {
        RandomStream rng(11);
        Tensor<double> x(Shape{1, 2, 5, 5}), k(Shape{3, 2, 3, 3});
        for (auto& v : x.data) v = rng.normal();
        for (auto& v : k.data) v = rng.normal();
        for (int pad : {0, 1})
            for (int stride : {1, 2}) {
                if ((5 + 2 * pad - 3) % stride != 0) continue;
                auto got = conv2d_value(x, k, stride, pad);
                auto want = oracles::naive_conv2d(x, k, stride, pad);
                CHECK(oracles::max_rel_err(got, want) < 1e-6);
            }
    }
    SECTION("non-integral output rejected") {
        Tensor<double> x(Shape{1, 1, 5, 5}), k(Shape{1, 1, 2, 2});
        CHECK_THROWS_AS(conv2d_value(x, k, 2, 0), InvalidArgument);
    }
}

TEST_CASE("max pool") {
    SECTION("window 2") {
        Tensor<double> x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
        auto [y, idx] = maxpool2d_value(x, 2, 2);
        CHECK(y.data == std::vector<double>{4});
        CHECK(idx == std::vector<std::int64_t>{3});
    }
    SECTION("ties route to first element") {
        Tensor<double> x = Tensor<double>::ones(Shape{1, 1, 4, 4});
        auto [y, idx] = maxpool2d_value(x, 2, 2);
        CHECK(y.data == std::vector<double>(4, 1.0));
        CHECK(idx == std::vector<std::int64_t>{0, 2, 8, 10});
    }
    SECTION("random 4x4 vs oracle") {
        RandomStream rng(5);
        Tensor<double> x(Shape{2, 3, 4, 4});
        for (auto& v : x.data) v = rng.normal();
        auto [y, idx] = maxpool2d_value(x, 2, 2);
        auto want = oracles::naive_maxpool(x, 2, 2);
        CHECK(y.data == want.data);
    }
    SECTION("uneven window rejected") {
        Tensor<double> x(Shape{1, 1, 5, 5});
        CHECK_THROWS_AS(maxpool2d_value(x, 2, 2), InvalidArgument);
    }
}

TEST_CASE("deterministic random streams") {
    RandomStream a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.uniform01() == b.uniform01());
        CHECK(a.normal() == b.normal());
        CHECK(a.uniform_int(17) == b.uniform_int(17));
    }
    CHECK(derive_seed(1, "init") != derive_seed(1, "shuffle"));
    CHECK(derive_seed(1, "init", 0) != derive_seed(1, "init", 1));
    CHECK(derive_seed(1, "init", 3) == derive_seed(1, "init", 3));
}

TEST_CASE("permutation visits every index") {
    RandomStream rng(9);
    auto p = permutation(100, rng);
    std::vector<bool> seen(100, false);
    for (auto i : p) seen[i] = true;
    for (bool s : seen) CHECK(s);
}
