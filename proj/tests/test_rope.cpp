#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ropedit/rope.hpp"

using namespace ropedit;
using namespace ropedit::rope;
using ropedit_tests::random_tensor;

TEST_CASE("build_table closed forms") {
    RotaryTable t4 = build_table(4, 10000.0);
    REQUIRE(t4.freqs.size() == 1);
    CHECK(t4.freqs[0] == 1.0);

    RotaryTable t8 = build_table(8, 10000.0);
    REQUIRE(t8.freqs.size() == 2);
    CHECK(t8.freqs[0] == 1.0);
    CHECK(t8.freqs[1] == Catch::Approx(std::pow(10000.0, -0.5)).epsilon(1e-12));
    CHECK(t8.freqs[0] > t8.freqs[1]);
}

TEST_CASE("build_table rejects bad parameters") {
    CHECK_THROWS_AS(build_table(6, 10000.0), ConfigError);
    CHECK_THROWS_AS(build_table(2, 10000.0), ConfigError);
    CHECK_THROWS_AS(build_table(8, 1.0), ConfigError);
}

TEST_CASE("grid_positions enumerates row-major") {
    PositionGrid g = grid_positions(2, 2);
    REQUIRE(g.tokens() == 4);
    CHECK(g.coords[0] == Coord{0, 0});
    CHECK(g.coords[1] == Coord{0, 1});
    CHECK(g.coords[2] == Coord{1, 0});
    CHECK(g.coords[3] == Coord{1, 1});

    PositionGrid full = grid_positions(64, 64);
    CHECK(full.tokens() == 4096);
    CHECK(full.coords.back() == Coord{63, 63});

    PositionGrid one = grid_positions(1, 1);
    CHECK(one.coords == std::vector<Coord>{{0, 0}});

    CHECK_THROWS_AS(grid_positions(0, 4), ConfigError);
}

TEST_CASE("apply_rope identity at the origin") {
    std::mt19937 gen(3);
    RotaryTable table = build_table(8, 10000.0);
    PositionGrid g = grid_positions(1, 1);
    Tensor x = random_tensor(gen, {1, 8});
    Tensor y = apply_rope(x, g, table);
    CHECK(ropedit_tests::tensors_equal_bits(x, y));
}

TEST_CASE("apply_rope matches the complex-rotation oracle") {
    std::mt19937 gen(4);
    RotaryTable table = build_table(16, 10000.0);
    PositionGrid g = grid_positions(5, 3);
    Tensor x = random_tensor(gen, {15, 16});
    Tensor y = apply_rope(x, g, table);
    const auto want = ropedit_tests::complex_rope(x, g, table);
    for (std::size_t i = 0; i < y.size(); ++i)
        CHECK(std::fabs(y.flat()[i] - want[i]) < 1e-6);
}

TEST_CASE("single pair closed form") {
    RotaryTable table = build_table(4, 10000.0);
    PositionGrid g;
    g.rows = 1;
    g.cols = 1;
    g.coords = {{3, 0}};
    Tensor x({1, 4}, {0.8f, -0.2f, 0.5f, 0.4f});
    Tensor y = apply_rope(x, g, table);
    const double f = table.freqs[0];
    CHECK(y.at(0, 0) == Catch::Approx(0.8 * std::cos(3 * f) + 0.2 * std::sin(3 * f)).margin(1e-6));
    CHECK(y.at(0, 1) == Catch::Approx(0.8 * std::sin(3 * f) - 0.2 * std::cos(3 * f)).margin(1e-6));
    // col = 0: second half untouched
    CHECK(y.at(0, 2) == 0.5f);
    CHECK(y.at(0, 3) == 0.4f);
}

TEST_CASE("apply_rope preserves pair norms") {
    std::mt19937 gen(5);
    RotaryTable table = build_table(16, 10000.0);
    PositionGrid g = grid_positions(8, 8);
    Tensor x = random_tensor(gen, {64, 16});
    Tensor y = apply_rope(x, g, table);
    for (int i = 0; i < 64; ++i) {
        for (int p = 0; p < 8; ++p) {
            const double n0 = std::hypot(x.at(i, 2 * p), x.at(i, 2 * p + 1));
            const double n1 = std::hypot(y.at(i, 2 * p), y.at(i, 2 * p + 1));
            CHECK(std::fabs(n0 - n1) < 1e-6);
        }
    }
}

TEST_CASE("apply_rope shape validation") {
    RotaryTable table = build_table(8, 10000.0);
    PositionGrid g = grid_positions(2, 2);
    Tensor bad({3, 8});
    CHECK_THROWS_AS(apply_rope(bad, g, table), DimensionError);
    Tensor bad2({4, 12});
    CHECK_THROWS_AS(apply_rope(bad2, g, table), DimensionError);
}

TEST_CASE("manipulations") {
    PositionGrid g = grid_positions(64, 64);

    SECTION("shift translates the span") {
        KeyPositions kp = manipulate_positions(g, Manipulation::shift(10, 10));
        REQUIRE(kp.rotate);
        CHECK(kp.grid.coords.front() == Coord{10, 10});
        CHECK(kp.grid.coords.back() == Coord{73, 73});
    }
    SECTION("shift(64,0) spans (64,0)..(127,63)") {
        KeyPositions kp = manipulate_positions(g, Manipulation::shift(64, 0));
        CHECK(kp.grid.coords.front() == Coord{64, 0});
        CHECK(kp.grid.coords.back() == Coord{127, 63});
    }
    SECTION("zero shift is bit-identical to keep") {
        KeyPositions kp = manipulate_positions(g, Manipulation::shift(0, 0));
        REQUIRE(kp.rotate);
        CHECK(kp.grid == g);
    }
    SECTION("remove sets the flag") {
        KeyPositions kp = manipulate_positions(g, Manipulation::remove());
        CHECK_FALSE(kp.rotate);
    }
}

TEST_CASE("manipulation labels round-trip") {
    CHECK(to_string(Manipulation::remove()) == "remove");
    CHECK(to_string(Manipulation::shift(0, 20)) == "shift(0,20)");
    CHECK(manipulation_from_string("shift(-3,7)") == Manipulation::shift(-3, 7));
    CHECK(manipulation_from_string("remove") == Manipulation::remove());
    CHECK(manipulation_from_string("keep") == Manipulation::keep());
    CHECK_THROWS_AS(manipulation_from_string("rotate(1)"), InputError);
}

TEST_CASE("relative-position identity") {
    std::mt19937 gen(11);
    RotaryTable table = build_table(16, 10000.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::uniform_int_distribution<int> coord(0, 20);
        const Coord p{coord(gen), coord(gen)};
        const Coord q{coord(gen), coord(gen)};
        Tensor qv = random_tensor(gen, {1, 16});
        Tensor kv = random_tensor(gen, {1, 16});

        PositionGrid gp, gq, gd;
        gp.rows = gp.cols = 1;
        gp.coords = {p};
        gq.rows = gq.cols = 1;
        gq.coords = {q};
        gd.rows = gd.cols = 1;
        gd.coords = {{q.row - p.row, q.col - p.col}};

        auto dot = [](const Tensor& a, const Tensor& b) {
            double s = 0.0;
            for (int j = 0; j < a.cols(); ++j)
                s += static_cast<double>(a.at(0, j)) * b.at(0, j);
            return s;
        };
        const double lhs = dot(apply_rope(qv, gp, table), apply_rope(kv, gq, table));
        const double rhs = dot(qv, apply_rope(kv, gd, table));
        CHECK(std::fabs(lhs - rhs) < 1e-5);
    }
}

TEST_CASE("equal shifts leave logits unchanged") {
    std::mt19937 gen(12);
    RotaryTable table = build_table(8, 10000.0);
    PositionGrid g = grid_positions(4, 4);
    Tensor q = random_tensor(gen, {16, 8});
    Tensor k = random_tensor(gen, {16, 8});
    Tensor logits0 = matmul_nt(apply_rope(q, g, table), apply_rope(k, g, table));

    const KeyPositions shifted = manipulate_positions(g, Manipulation::shift(5, -2));
    Tensor logits1 =
        matmul_nt(apply_rope(q, shifted.grid, table), apply_rope(k, shifted.grid, table));
    for (std::size_t i = 0; i < logits0.size(); ++i)
        CHECK(std::fabs(logits0.flat()[i] - logits1.flat()[i]) < 1e-5);
}
