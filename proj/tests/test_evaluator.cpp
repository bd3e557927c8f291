#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "latent_align/evaluator.hpp"
#include "latent_align/toy_world.hpp"
#include "support.hpp"

using namespace latent_align;
using testsupport::error_kind_of;
using testsupport::TableGateway;
using testsupport::TempDir;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Copies latent channels 0..2 straight into RGB, so TableGateway sees the latent's first value.
LatentProjection passthrough() {
    LatentProjection p;
    p.weights = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}}};
    p.bias = {0, 0, 0};
    p.clamp_lo = -kInf;
    p.clamp_hi = kInf;
    p.tag = "passthrough";
    return p;
}

LatentFrame keyed_frame(int step, long key) {
    LatentFrame f;
    f.step = step;
    f.shape = {4, 1, 1};
    f.dtype = Dtype::f32;
    f.data = {static_cast<float>(key), 0, 0, 0};
    return f;
}

// Stores a 1x1 trajectory whose frame at each listed step carries the given key.
void write_keyed_sample(const std::filesystem::path & root, const std::string & id, const std::string & prompt,
                        const std::map<int, long> & keys, std::optional<long> final_key, int total = 10) {
    LatentTrajectory t;
    t.sample_id = id;
    t.prompt = prompt;
    t.total_steps = total;
    for (const auto & [s, k] : keys) t.frames.push_back(keyed_frame(s, k));
    if (final_key) t.final_image_ref = "final.bin";
    write_trajectory(t, root);
    if (final_key) write_image_blob(sample_dir(root, id) / "final.bin", TableGateway::keyed_image(*final_key));
}

std::vector<double> basis(int dim, int i) {
    std::vector<double> v(dim, 0.0);
    v[i] = 1.0;
    return v;
}

FactualSet set_for(const std::string & prompt) {
    FactualSet s;
    s.prompt_id = prompt;
    s.original = prompt;
    for (auto t : kErrorTypes) s.corruptions[t] = prompt + " but " + std::string(error_type_id(t));
    return s;
}

// Oracle reading a fixed score per image key.
class KeyOracle final : public OracleAdapter {
public:
    std::map<long, double> scores;
    double score(const RgbImage & image, std::string_view) const override {
        const auto it = scores.find(std::lround(image.data[0]));
        if (it == scores.end()) throw backend_error("oracle down");
        return it->second;
    }
    std::string backend_tag() const override { return "key-oracle"; }
};

}  // namespace

TEST_CASE("argmax convention: ties go to the earlier candidate") {
    CHECK(recall_from_scores({0.5, 0.5, 0.5, 0.5, 0.5}).hit);
    CHECK_FALSE(recall_from_scores({0.5, 0.5, 0.5, 0.5, 0.5}).chosen.has_value());
    const auto r = recall_from_scores({0.1, 0.3, 0.3, 0.2, 0.0});
    CHECK_FALSE(r.hit);
    CHECK(r.chosen == ErrorType::color);
    CHECK(recall_from_scores({0.1, 0.0, 0.0, 0.0, 0.2}).chosen == ErrorType::main_subject);

    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> small(0, 3);
    for (int i = 0; i < 2000; ++i) {
        std::array<double, kCandidateCount> s{};
        for (auto & x : s) x = small(rng);
        size_t best = 0;
        for (size_t k = 1; k < s.size(); ++k) {
            if (s[k] > s[best]) best = k;
        }
        const auto got = recall_from_scores(s);
        CHECK(got.hit == (best == 0));
        CHECK(got.scores == s);
        if (best > 0) CHECK(got.chosen == kErrorTypes[best - 1]);
    }
}

TEST_CASE("planted embeddings give a hit; random ones sit near chance") {
    TableGateway g(8);
    const auto set = set_for("two red dogs");
    g.texts[set.original] = basis(8, 0);
    for (size_t i = 0; i < kErrorTypes.size(); ++i) g.texts[set.corruptions.at(kErrorTypes[i])] = basis(8, i + 1);
    g.images[1] = basis(8, 0);
    g.images[2] = basis(8, 3);
    CHECK(recall_at_1(g, TableGateway::keyed_image(1), set).hit);
    const auto miss = recall_at_1(g, TableGateway::keyed_image(2), set);
    CHECK(miss.chosen == ErrorType::background);

    CHECK(candidate_prompts(set)[0] == set.original);
    CHECK(candidate_prompts(set)[4] == set.corruptions.at(ErrorType::main_subject));
    auto partial = set;
    partial.corruptions.erase(ErrorType::count);
    CHECK(error_kind_of([&] { candidate_prompts(partial); }) == ErrorKind::data);
}

TEST_CASE("a corpus curve that is perfectly aligned stays at 1 and skips missing frames") {
    TempDir dir;
    TableGateway g(8);
    std::vector<FactualSet> sets;
    for (int i = 0; i < 3; ++i) {
        const auto prompt = "prompt " + std::to_string(i);
        sets.push_back(set_for(prompt));
        g.texts[prompt] = basis(8, i);
        for (size_t k = 0; k < kErrorTypes.size(); ++k) g.texts[sets.back().corruptions.at(kErrorTypes[k])] = basis(8, 3 + k);
        g.images[10 + i] = basis(8, i);
        std::map<int, long> keys{{0, 10 + i}, {5, 10 + i}};
        if (i != 1) keys[10] = 10 + i;
        write_keyed_sample(dir.path(), "s" + std::to_string(i), prompt, keys, 10 + i);
    }
    const auto manifest = build_manifest(dir.path(), SubsetTag::custom);
    LatentScorer scorer{std::make_shared<TableGateway>(g), passthrough()};
    const auto curve = consistency_curve(scorer, manifest, sets, {0, 5, 10, kFinalStep}, 2);
    CHECK(curve.recall_at_1 == std::vector<double>{1, 1, 1, 1});
    CHECK(curve.evaluated == std::vector<int>{3, 3, 2, 3});
    CHECK(curve.skipped == std::vector<int>{0, 0, 1, 0});
    CHECK(curve.records.size() == 11);
    CHECK(curve.correct_mean_score[0] == doctest::Approx(1.0));
    CHECK(curve.distractor_mean_score[0] == doctest::Approx(0.0));
    for (auto t : kErrorTypes) CHECK(curve.per_error_recall.at(t)[1] == 0.0);

    sets.pop_back();
    CHECK(error_kind_of([&] { consistency_curve(scorer, manifest, sets, {0}); }) == ErrorKind::data);
}

TEST_CASE("curve matches a brute-force recomputation and the distractor mean is per item") {
    TempDir dir;
    auto g = std::make_shared<TableGateway>(4);
    std::mt19937_64 rng(17);
    std::vector<FactualSet> sets;
    for (int i = 0; i < 12; ++i) {
        const auto prompt = "p" + std::to_string(i);
        sets.push_back(set_for(prompt));
        g->images[100 + i] = testsupport::random_unit(rng, 4);
        write_keyed_sample(dir.path(), "s" + std::to_string(i), prompt, {{3, 100 + i}}, std::nullopt);
    }
    const auto manifest = build_manifest(dir.path(), SubsetTag::custom);
    const auto curve = consistency_curve({g, passthrough()}, manifest, sets, {3});
    int hits = 0;
    double distractor = 0.0;
    for (int i = 0; i < 12; ++i) {
        const auto img = EmbeddingVector(g->images[100 + i]);
        std::vector<double> s;
        for (const auto & p : candidate_prompts(sets[i])) s.push_back(EmbeddingVector(g->embed_text(p)).dot(img));
        hits += *std::max_element(s.begin() + 1, s.end()) <= s[0] ? 1 : 0;
        distractor += (s[1] + s[2] + s[3] + s[4]) / 4.0 / 12.0;
    }
    CHECK(curve.recall_at_1[0] == doctest::Approx(hits / 12.0).epsilon(1e-12));
    CHECK(curve.distractor_mean_score[0] == doctest::Approx(distractor).epsilon(1e-9));
}

TEST_CASE("window mean over a step range") {
    const std::vector<int> steps{kFinalStep, 1, 2, 3, 4};
    const std::vector<double> v{9, 1, 2, 3, 4};
    CHECK(*window_mean(steps, v, {2, 3}) == 2.5);
    CHECK(*window_mean(steps, v, {0, 100}) == 2.5);
    CHECK_FALSE(window_mean(steps, v, {5, 8}).has_value());
    CHECK(error_kind_of([&] { window_mean(steps, {1.0}, {1, 2}); }) == ErrorKind::argument);
}

TEST_CASE("delta curve ranks by oracle and partitions the images") {
    TempDir dir;
    auto g = std::make_shared<TableGateway>(4);
    KeyOracle oracle;
    std::mt19937_64 rng(5);
    int key = 1;
    // 4 prompts with 4 images each, 1 prompt with 2 images (too few), 1 prompt with a missing frame
    for (int p = 0; p < 6; ++p) {
        const auto prompt = "prompt " + std::to_string(p);
        g->texts[prompt] = basis(4, 0);
        const int count = p == 4 ? 2 : 4;
        for (int m = 0; m < count; ++m, ++key) {
            // planted: the image the oracle likes best is also closest to the prompt at every step
            const double quality = 1.0 - 0.2 * m;
            g->images[key] = EmbeddingVector::normalized({quality, 1.0 - quality, 0.1, 0.0}).values();
            oracle.scores[key] = quality;
            std::map<int, long> keys{{2, key}, {6, key}};
            if (p == 5 && m == 3) keys.erase(6);
            write_keyed_sample(dir.path(), "p" + std::to_string(p) + "_m" + std::to_string(m), prompt, keys, key);
        }
    }
    const auto manifest = build_manifest(dir.path(), SubsetTag::custom);
    const LatentScorer scorer{g, passthrough()};
    const auto curve = delta_curve(scorer, manifest, oracle, {2, 6}, 4, 3);
    CHECK(curve.prompts_evaluated == 4);
    CHECK(curve.prompts_too_few_images == 1);
    CHECK(curve.prompts_missing_data == 1);
    CHECK(curve.oracle_tag == "key-oracle");
    for (size_t k = 0; k < 2; ++k) {
        int total = 0;
        for (size_t r = 0; r < 4; ++r) total += curve.count_by_rank[r][k];
        CHECK(total == curve.prompts_evaluated * 4);
        CHECK(curve.gap[k] > 0.0);
        for (size_t r = 1; r < 4; ++r) CHECK(curve.mean_by_rank[r - 1][k] > curve.mean_by_rank[r][k]);
    }

    CHECK(error_kind_of([&] { delta_curve(scorer, manifest, oracle, {2}, 1); }) == ErrorKind::argument);
    CHECK(error_kind_of([&] { delta_curve(scorer, manifest, oracle, {kFinalStep}, 4); }) == ErrorKind::argument);

    TempDir single;
    write_keyed_sample(single.path(), "a", "one", {{2, 1}}, 1);
    write_keyed_sample(single.path(), "b", "two", {{2, 2}}, 2);
    const auto m1 = build_manifest(single.path(), SubsetTag::custom);
    CHECK(error_kind_of([&] { delta_curve(scorer, m1, oracle, {2}, 2); }) == ErrorKind::data);
}

TEST_CASE("best-of-n alignment rows") {
    KeyOracle oracle;
    for (long k = 1; k <= 6; ++k) oracle.scores[k] = 0.1 * k;
    auto outcome = [](const std::string & prompt, int n, int stop, std::vector<long> keys, size_t pick,
                      int64_t cost) {
        BonOutcome o;
        o.prompt = prompt;
        o.plan.n = n;
        o.plan.stop_step = stop;
        o.plan.keep = 1;
        o.total_steps = 10;
        o.selected_index = pick;
        o.selected_image = TableGateway::keyed_image(keys[pick]);
        for (size_t i = 0; i < keys.size(); ++i) {
            o.traces.push_back({static_cast<int64_t>(i), {}, std::nullopt});
            o.final_images.push_back(TableGateway::keyed_image(keys[i]));
        }
        o.ledger.total = cost;
        return o;
    };
    // keep = n: every candidate decoded
    std::vector<BonOutcome> runs{outcome("a", 3, 10, {1, 2, 3}, 2, 30), outcome("b", 3, 10, {4, 5, 6}, 1, 30)};
    auto pruned = outcome("a", 3, 4, {1, 2, 3}, 0, 22);
    pruned.final_images = {TableGateway::keyed_image(1), std::nullopt, std::nullopt};
    runs.push_back(pruned);

    const auto rows = bon_alignment_eval(runs, oracle);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].label == "Mean Value");
    CHECK(rows[0].scored == 6);
    CHECK(rows[0].mean_score == doctest::Approx(0.35));
    CHECK(rows[0].cost == 10);
    CHECK(rows[1].label == "n=3 stop=4");
    CHECK(rows[1].cost == 22);
    CHECK(rows[2].mean_score == doctest::Approx((0.3 + 0.5) / 2));
    CHECK_FALSE(rows[2].incomplete);

    oracle.scores.erase(5);
    const auto broken = bon_alignment_eval(runs, oracle);
    CHECK(broken[0].incomplete);
    CHECK(broken[2].incomplete);
    CHECK_FALSE(broken[1].incomplete);
}

TEST_CASE("range grid rows, skips and the diagonal flag") {
    TempDir dir;
    auto base = std::make_shared<ToyGateway>(ToyWorldConfig{}, PreprocessRecipe{}, "frozen-tag");
    for (const char * tag : {"r1", "r2"}) {
        ToyGateway g(ToyWorldConfig{}, PreprocessRecipe{}, tag);
        g.save(dir / (std::string(tag) + ".json"));
    }
    const std::vector<StepRange> evals{{1, 2}, {3, 4}};
    // the checkpoint tagged for a range scores 1 there, everything else 0
    auto metric = [&](const EncoderGateway & g, const StepRange & r) {
        if (g.checkpoint_tag() == "r1" && r == evals[0]) return 1.0;
        if (g.checkpoint_tag() == "r2" && r == evals[1]) return 1.0;
        return 0.0;
    };
    const auto grid = range_grid(base, {{{1, 2}, dir / "r1.json"}, {{3, 4}, dir / "r2.json"}, {{5, 6}, dir / "gone.json"}},
                                 evals, metric, "test");
    CHECK(grid.row_labels == std::vector<std::string>{"frozen", "trained [1,2]", "trained [3,4]"});
    CHECK(grid.values.size() == 3);
    CHECK(grid.skipped.size() == 1);
    CHECK(grid.skipped[0].rfind("trained [5,6]: ", 0) == 0);
    CHECK(grid.diagonal_dominant);

    // a tie on the diagonal is not dominance
    const auto flat = range_grid(base, {{{1, 2}, dir / "r1.json"}}, {{1, 2}},
                                 [](const EncoderGateway &, const StepRange &) { return 0.5; }, "flat");
    CHECK(flat.values.size() == 2);
    CHECK_FALSE(flat.diagonal_dominant);

    // single checkpoint whose range is not evaluated: no diagonal cell, flag stays false
    const auto off = range_grid(base, {{{3, 4}, dir / "r2.json"}}, {{1, 2}}, metric, "off");
    CHECK(off.values == std::vector<std::vector<double>>{{0.0}, {0.0}});
    CHECK_FALSE(off.diagonal_dominant);

    CHECK(error_kind_of([&] { range_grid(base, {}, {}, metric, "x"); }) == ErrorKind::argument);
    CHECK(error_kind_of([&] { range_grid(nullptr, {}, evals, metric, "x"); }) == ErrorKind::argument);
}

TEST_CASE("oracle adapters validate their output") {
    KeyOracle o;
    o.scores[1] = 1.5;
    o.scores[2] = std::nan("");
    o.scores[3] = 0.25;
    CHECK(error_kind_of([&] { checked_oracle_score(o, TableGateway::keyed_image(1), "x"); }) == ErrorKind::backend);
    CHECK(error_kind_of([&] { checked_oracle_score(o, TableGateway::keyed_image(2), "x"); }) == ErrorKind::backend);
    CHECK(checked_oracle_score(o, TableGateway::keyed_image(3), "x") == 0.25);

    auto g = std::make_shared<TableGateway>(4);
    g->texts["p"] = basis(4, 0);
    g->images[1] = basis(4, 0);
    g->images[2] = basis(4, 1);
    ToyOracle toy(g);
    CHECK(toy.score(TableGateway::keyed_image(1), "p") == doctest::Approx(1.0));
    CHECK(toy.score(TableGateway::keyed_image(2), "p") == doctest::Approx(0.5));
    CHECK(toy.backend_tag() == "toy-cosine:table");

    CHECK(error_kind_of([] { oracle_from_json({{"kind", "vqa"}}); }) == ErrorKind::config);
    CHECK(error_kind_of([] { oracle_from_json({{"kind", "toy"}}); }) == ErrorKind::config);
    CHECK(error_kind_of([] { oracle_from_json({{"kind", "http"}}); }) == ErrorKind::config);
    const auto http = oracle_from_json({{"kind", "http"}, {"endpoint", "http://localhost:1/score"}, {"max_parallel", 4}});
    CHECK(http->max_parallel() == 4);
}

TEST_CASE("labels") {
    CHECK(step_label(kFinalStep) == "final");
    CHECK(step_label(7) == "7");
    CHECK(range_label({20, 29}) == "[20,29]");
}
