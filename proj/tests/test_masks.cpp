#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "oracles.hpp"
#include "ropedit/masks.hpp"

using namespace ropedit;
using namespace ropedit::masks;

namespace {

BinaryMask mask_from_bits(int h, int w, std::initializer_list<int> bits) {
    BinaryMask m = BinaryMask::filled(h, w, false);
    int i = 0;
    for (int b : bits) m.bits[static_cast<std::size_t>(i++)] = b != 0;
    return m;
}

Tensor uniform_attention(int heads, int total) {
    Tensor t({heads, total, total});
    const float w = 1.0f / static_cast<float>(total);
    for (float& v : t.flat()) v = w;
    return t;
}

}  // namespace

TEST_CASE("heatmap from uniform attention normalizes to zeros") {
    const int text_len = 2, h = 2, w = 2, total = text_len + h * w;
    std::map<int, Tensor> attn;
    attn.emplace(0, uniform_attention(2, total));
    AttentionHeatmap hm = extract_token_heatmap(attn, 0, {0}, true, text_len, h, w);
    for (float v : hm.values) CHECK(v == 0.0f);
}

TEST_CASE("single layer single head passthrough") {
    const int text_len = 2, h = 2, w = 2, total = text_len + 4;
    Tensor a({1, total, total});
    // image token i attends to text token 1 with weight (i+1)/10
    for (int i = 0; i < 4; ++i) a.flat()[static_cast<std::size_t>(text_len + i) * total + 1] =
        static_cast<float>(i + 1) / 10.0f;
    std::map<int, Tensor> attn;
    attn.emplace(3, std::move(a));
    AttentionHeatmap hm = extract_token_heatmap(attn, 1, {3}, true, text_len, h, w);
    // min-max normalized raw column [0.1, 0.2, 0.3, 0.4]
    CHECK(hm.values[0] == Catch::Approx(0.0).margin(1e-7));
    CHECK(hm.values[1] == Catch::Approx(1.0 / 3).margin(1e-6));
    CHECK(hm.values[2] == Catch::Approx(2.0 / 3).margin(1e-6));
    CHECK(hm.values[3] == Catch::Approx(1.0).margin(1e-7));
}

TEST_CASE("heatmap argmax lands on the concentrated cell") {
    const int text_len = 1, h = 2, w = 2, total = text_len + 4;
    Tensor a({2, total, total});
    // both heads put most mass from image cell (1,0) (token index 2) on token 0
    for (int hd = 0; hd < 2; ++hd) {
        for (int i = 0; i < 4; ++i) {
            a.flat()[(static_cast<std::size_t>(hd) * total + text_len + i) * total + 0] =
                i == 2 ? 0.9f : 0.05f;
        }
    }
    std::map<int, Tensor> attn;
    attn.emplace(0, std::move(a));
    AttentionHeatmap hm = extract_token_heatmap(attn, 0, {0}, true, text_len, h, w);
    CHECK(hm.values[2] == 1.0f);
    CHECK(hm.values[0] < 1.0f);
    CHECK(hm.values[1] < 1.0f);
    CHECK(hm.values[3] < 1.0f);
}

TEST_CASE("heatmap rejects bad arguments") {
    std::map<int, Tensor> attn;
    attn.emplace(0, uniform_attention(1, 6));
    CHECK_THROWS_AS(extract_token_heatmap(attn, 0, {}, true, 2, 2, 2), ConfigError);
    CHECK_THROWS_AS(extract_token_heatmap(attn, 5, {0}, true, 2, 2, 2), ConfigError);
    CHECK_THROWS_AS(extract_token_heatmap(attn, 0, {1}, true, 2, 2, 2), ConfigError);
}

TEST_CASE("binarize boundary is inclusive at 0.3") {
    AttentionHeatmap hm;
    hm.h = 1;
    hm.w = 3;
    hm.values = {0.29f, 0.30f, 0.31f};
    BinaryMask m = binarize(hm, 0.3);
    CHECK_FALSE(m.at(0, 0));
    CHECK(m.at(0, 1));
    CHECK(m.at(0, 2));

    hm.values = {0.0f, 0.0f, 0.0f};
    CHECK(binarize(hm).count() == 0);
    hm.values = {1.0f, 1.0f, 1.0f};
    CHECK(binarize(hm).count() == 3);

    CHECK_THROWS_AS(binarize(hm, 0.0), ConfigError);
    CHECK_THROWS_AS(binarize(hm, 1.0), ConfigError);
}

TEST_CASE("binarize is monotone in the threshold") {
    std::mt19937 gen(41);
    AttentionHeatmap hm;
    hm.h = 6;
    hm.w = 6;
    hm.values.resize(36);
    std::uniform_real_distribution<float> dist(0.0f, 1.0f);
    for (float& v : hm.values) v = dist(gen);
    BinaryMask low = binarize(hm, 0.2);
    BinaryMask high = binarize(hm, 0.7);
    for (std::size_t i = 0; i < low.bits.size(); ++i) {
        if (high.bits[i]) CHECK(low.bits[i]);
    }
}

TEST_CASE("largest_component on diagonal cells depends on connectivity") {
    BinaryMask m = mask_from_bits(2, 2, {1, 0, 0, 1});
    BinaryMask c4 = largest_component(m, 4);
    CHECK(c4.count() == 1);
    CHECK(c4.at(0, 0));  // size tie resolves to the top-left component
    BinaryMask c8 = largest_component(m, 8);
    CHECK(c8.count() == 2);
}

TEST_CASE("largest_component fixtures") {
    BinaryMask single = mask_from_bits(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    BinaryMask got = largest_component(single);
    CHECK(got.count() == 1);
    CHECK(got.at(1, 1));

    CHECK_THROWS_AS(largest_component(BinaryMask::filled(3, 3, false)), EmptyMaskError);
    CHECK_THROWS_AS(largest_component(single, 5), ConfigError);
}

TEST_CASE("largest_component matches flood fill on random 8x8 masks") {
    std::mt19937 gen(42);
    std::bernoulli_distribution bit(0.45);
    for (int trial = 0; trial < 1000; ++trial) {
        BinaryMask m = BinaryMask::filled(8, 8, false);
        bool any = false;
        for (auto& b : m.bits) {
            b = bit(gen) ? 1 : 0;
            any = any || b;
        }
        if (!any) continue;
        for (int conn : {4, 8}) {
            BinaryMask got = largest_component(m, conn);
            BinaryMask want = ropedit_tests::floodfill_largest(m, conn);
            CHECK(got.bits == want.bits);
        }
    }
}

TEST_CASE("largest_component output is a connected subset") {
    std::mt19937 gen(43);
    std::bernoulli_distribution bit(0.5);
    for (int trial = 0; trial < 100; ++trial) {
        BinaryMask m = BinaryMask::filled(6, 6, false);
        bool any = false;
        for (auto& b : m.bits) {
            b = bit(gen) ? 1 : 0;
            any = any || b;
        }
        if (!any) continue;
        BinaryMask comp = largest_component(m, 4);
        for (std::size_t i = 0; i < comp.bits.size(); ++i) {
            if (comp.bits[i]) CHECK(m.bits[i]);
        }
        // still one component
        BinaryMask again = largest_component(comp, 4);
        CHECK(again.bits == comp.bits);
    }
}

TEST_CASE("sample_foreground_points properties") {
    SeededRng rng(7, 0);
    BinaryMask single = mask_from_bits(2, 2, {0, 0, 1, 0});
    auto pts = sample_foreground_points(single, 1, rng);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0] == rope::Coord{1, 0});

    std::mt19937 gen(44);
    std::bernoulli_distribution bit(0.4);
    for (int trial = 0; trial < 1000; ++trial) {
        BinaryMask m = BinaryMask::filled(5, 5, false);
        int count = 0;
        for (auto& b : m.bits) {
            b = bit(gen) ? 1 : 0;
            count += b;
        }
        if (count == 0) continue;
        SeededRng r(trial, 1);
        auto sampled = sample_foreground_points(m, std::min(count, 3), r);
        for (const auto& p : sampled) CHECK(m.at(p.row, p.col));
    }

    SeededRng r1(5, 5), r2(5, 5);
    BinaryMask m = mask_from_bits(3, 3, {1, 1, 0, 0, 1, 1, 1, 0, 0});
    CHECK(sample_foreground_points(m, 3, r1) == sample_foreground_points(m, 3, r2));

    // without replacement: k == count yields distinct cells
    SeededRng r3(6, 6);
    auto all = sample_foreground_points(m, 5, r3);
    std::set<std::pair<int, int>> uniq;
    for (const auto& p : all) uniq.insert({p.row, p.col});
    CHECK(uniq.size() == 5);

    SeededRng r4(7, 7);
    CHECK_THROWS_AS(sample_foreground_points(BinaryMask::filled(2, 2, false), 1, r4),
                    EmptyMaskError);
}

TEST_CASE("identity refiner echoes the mask") {
    IdentityRefiner refiner;
    BinaryMask m = mask_from_bits(2, 3, {1, 0, 1, 0, 1, 0});
    BinaryMask out = refiner.refine(m, {{0, 0}});
    CHECK(out.bits == m.bits);
    CHECK(out.h == m.h);
    CHECK(out.w == m.w);
}

TEST_CASE("pbm round-trip") {
    BinaryMask m = mask_from_bits(2, 3, {1, 0, 1, 0, 1, 0});
    const std::string text = write_pbm(m);
    CHECK(text.rfind("P1\n3 2\n", 0) == 0);
    BinaryMask back = read_pbm(text);
    CHECK(back.h == 2);
    CHECK(back.w == 3);
    CHECK(back.bits == m.bits);

    CHECK_THROWS_AS(read_pbm("P5 2 2 0 0 0 0"), InputError);
    CHECK_THROWS_AS(read_pbm("P1\n2 2\n0 0 0"), InputError);
    // comments are tolerated
    BinaryMask commented = read_pbm("P1\n# a comment\n2 1\n1 0\n");
    CHECK(commented.at(0, 0));
    CHECK_FALSE(commented.at(0, 1));
}
