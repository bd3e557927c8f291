#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "latent_align/alignment_scoring.hpp"
#include "latent_align/toy_world.hpp"
#include "support.hpp"

using namespace latent_align;
using testsupport::error_kind_of;

namespace {

std::shared_ptr<ToyGateway> toy_gateway() {
    static auto g = std::make_shared<ToyGateway>(ToyGateway::pretrained({}, default_projection(), {}));
    return g;
}

}  // namespace

TEST_CASE("EmbeddingVector enforces unit norm") {
    CHECK_NOTHROW(EmbeddingVector({0.6, 0.8}));
    CHECK(error_kind_of([] { EmbeddingVector({0.6, 0.9}); }) == ErrorKind::argument);
    CHECK(error_kind_of([] { EmbeddingVector(std::vector<double>{}); }) == ErrorKind::argument);
    CHECK(error_kind_of([] { EmbeddingVector::normalized({0.0, 0.0}); }) == ErrorKind::argument);
    const auto v = EmbeddingVector::normalized({3.0, 4.0});
    CHECK(v.values()[0] == doctest::Approx(0.6));
    CHECK(error_kind_of([&] { v.dot(EmbeddingVector({1.0, 0.0, 0.0})); }) == ErrorKind::argument);
}

TEST_CASE("score of identical and orthogonal embeddings") {
    const EmbeddingVector a({1.0, 0.0}), b({0.0, 1.0});
    CHECK(score_embeddings(a, a).value == 1.0);
    CHECK(score_embeddings(a, b).value == 0.0);
    CHECK(score_embeddings(a, b).is_final());
    CHECK(score_embeddings(a, b, 20).step == 20);
}

TEST_CASE("bilinear resize against hand-computed values") {
    RgbImage src(1, 2);
    src.at(0, 0, 0) = 0.0f;
    src.at(0, 0, 1) = 1.0f;
    const auto up = resize_bilinear(src, 1, 4);
    // half-pixel centres map to source x = -0.25, 0.25, 0.75, 1.25 (clamped at the edges)
    CHECK(up.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(up.at(0, 0, 1) == doctest::Approx(0.25));
    CHECK(up.at(0, 0, 2) == doctest::Approx(0.75));
    CHECK(up.at(0, 0, 3) == doctest::Approx(1.0));
    CHECK(resize_bilinear(src, 1, 2) == src);
    CHECK(error_kind_of([&] { resize_bilinear(src, 0, 2); }) == ErrorKind::argument);
}

TEST_CASE("preprocess normalizes per channel in CHW order") {
    RgbImage img(1, 1);
    img.data = {0.5f, 0.25f, 1.0f};
    PreprocessRecipe r;
    r.mean = {0.5, 0.0, 0.5};
    r.stddev = {1.0, 0.5, 0.25};
    const auto px = preprocess_image(img, r);
    CHECK(px == std::vector<double>{0.0, 0.5, 2.0});
    r.input_size = 2;
    r.resize = PreprocessRecipe::Resize::none;
    CHECK(error_kind_of([&] { preprocess_image(img, r); }) == ErrorKind::argument);
    r.resize = PreprocessRecipe::Resize::bilinear;
    CHECK(preprocess_image(img, r).size() == 12);
}

TEST_CASE("preprocess recipe json round trip and validation") {
    PreprocessRecipe r;
    r.input_size = 16;
    r.mean = {0.1, 0.2, 0.3};
    CHECK(preprocess_from_json(preprocess_to_json(r)) == r);
    auto j = preprocess_to_json(r);
    j["std"] = {1.0, 0.0, 1.0};
    CHECK(error_kind_of([&] { preprocess_from_json(j); }) == ErrorKind::config);
    j = preprocess_to_json(r);
    j["resize"] = "lanczos";
    CHECK(error_kind_of([&] { preprocess_from_json(j); }) == ErrorKind::config);
}

TEST_CASE("s_latent is s_final on the projected preview") {
    const auto g = toy_gateway();
    const auto proj = default_projection();
    std::mt19937_64 rng(9);
    for (int i = 0; i < 10; ++i) {
        const auto f = testsupport::random_frame(rng, i, {4, 8, 8}, Dtype::f16, 1.0);
        const auto a = s_latent(*g, f, proj, "three red dogs on a beach");
        const auto b = s_final(*g, latent_to_rgb(f, proj), "three red dogs on a beach");
        CHECK(a.value == b.value);
        CHECK(a.step == i);
        CHECK(b.is_final());
    }
}

TEST_CASE("scores lie in [-1, 1]") {
    const auto g = toy_gateway();
    std::mt19937_64 rng(2);
    for (int i = 0; i < 20; ++i) {
        const auto f = testsupport::random_frame(rng, 0, {4, 8, 8}, Dtype::f32, 3.0);
        const double s = s_latent(*g, f, default_projection(), "a prompt " + std::to_string(i)).value;
        CHECK(s >= -1.0);
        CHECK(s <= 1.0);
    }
}

TEST_CASE("empty prompt is rejected; gateway failures become backend errors") {
    const auto g = toy_gateway();
    CHECK(error_kind_of([&] { encode_text(*g, ""); }) == ErrorKind::argument);

    testsupport::TableGateway table(2);
    CHECK(error_kind_of([&] { encode_image(table, testsupport::TableGateway::keyed_image(7)); }) == ErrorKind::backend);
    table.texts["bad"] = {0.5, 0.5};
    CHECK(error_kind_of([&] { encode_text(table, "bad"); }) == ErrorKind::backend);
    table.texts["short"] = {1.0};
    CHECK(error_kind_of([&] { encode_text(table, "short"); }) == ErrorKind::backend);
}

TEST_CASE("rank_candidates: descending, stable, validated") {
    const std::vector<double> s{0.1, 0.5, 0.1, 0.9, 0.5};
    CHECK(rank_candidates(std::span<const double>(s)) == std::vector<size_t>{3, 1, 4, 0, 2});
    const std::vector<double> empty;
    CHECK(error_kind_of([&] { rank_candidates(std::span<const double>(empty)); }) == ErrorKind::argument);
    const std::vector<double> nan{0.1, std::numeric_limits<double>::quiet_NaN()};
    CHECK(error_kind_of([&] { rank_candidates(std::span<const double>(nan)); }) == ErrorKind::argument);
    const std::vector<double> inf{-std::numeric_limits<double>::infinity(), 0.0};
    CHECK(rank_candidates(std::span<const double>(inf)) == std::vector<size_t>{1, 0});
    const std::vector<AlignmentScore> as{{0.2, 1}, {0.3, 1}};
    CHECK(rank_candidates(std::span<const AlignmentScore>(as)) == std::vector<size_t>{1, 0});
}

TEST_CASE("rank_candidates matches a brute-force ordering oracle") {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> len(1, 12), val(0, 4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> s(len(rng));
        for (auto & x : s) x = val(rng) * 0.25;
        const auto order = rank_candidates(std::span<const double>(s));
        // oracle: position of i = #(j with s[j] > s[i]) + #(j < i with s[j] == s[i])
        for (size_t i = 0; i < s.size(); ++i) {
            size_t pos = 0;
            for (size_t j = 0; j < s.size(); ++j) {
                if (s[j] > s[i] || (s[j] == s[i] && j < i)) ++pos;
            }
            CHECK(order[pos] == i);
        }
    }
}

TEST_CASE("score record json line") {
    CHECK(score_record_to_json_line({"s1", std::nullopt, "p1", 0.5}) ==
          "{\"prompt_id\":\"p1\",\"sample_id\":\"s1\",\"score\":0.5,\"step\":\"final\"}\n");
    CHECK(score_record_to_json_line({"s1", 3, "p1", 0.5}).find("\"step\":3") != std::string::npos);
}

TEST_CASE("make_concurrent_safe serializes unsafe gateways") {
    struct Unsafe final : EncoderGateway {
        mutable int inside = 0;
        mutable bool overlap = false;
        std::vector<double> embed_text(std::string_view) const override {
            if (++inside > 1) overlap = true;
            std::this_thread::sleep_for(std::chrono::microseconds(200));
            --inside;
            return {1.0};
        }
        std::vector<double> embed_image(std::span<const double>) const override { return {1.0}; }
        int embed_dim() const override { return 1; }
        const PreprocessRecipe & preprocess() const override { return recipe; }
        std::string checkpoint_tag() const override { return "unsafe"; }
        bool thread_safe() const override { return false; }
        PreprocessRecipe recipe;
    };
    auto raw = std::make_shared<Unsafe>();
    const auto safe = make_concurrent_safe(raw);
    CHECK(safe->thread_safe());
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 20; ++i) encode_text(*safe, "x");
        });
    }
    for (auto & t : threads) t.join();
    CHECK_FALSE(raw->overlap);
    CHECK(error_kind_of([] { make_concurrent_safe(nullptr); }) == ErrorKind::argument);
}

TEST_CASE("gateway configs") {
    CHECK(error_kind_of([] { gateway_from_json({{"kind", "clip-vit"}}); }) == ErrorKind::config);
    CHECK(error_kind_of([] { load_gateway("/nonexistent.json"); }) == ErrorKind::config);
    const auto g = gateway_from_json({{"kind", "toy"}, {"pretrain", {{"fit_samples", 300}}}});
    CHECK(g->embed_dim() == 32);
}
