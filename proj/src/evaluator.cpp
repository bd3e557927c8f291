#include "latent_align/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "latent_align/http_client.hpp"
#include "latent_align/parallel.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace latent_align {

double checked_oracle_score(const OracleAdapter & oracle, const RgbImage & image, std::string_view prompt) {
    const double s = oracle.score(image, prompt);
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
        throw backend_error("oracle '" + oracle.backend_tag() + "' returned " + std::to_string(s) +
                            ", outside [0, 1]");
    }
    return s;
}

ToyOracle::ToyOracle(std::shared_ptr<const EncoderGateway> reference)
    : reference_(make_concurrent_safe(std::move(reference))) {
    if (!reference_) throw argument_error("toy oracle needs a reference gateway");
}

double ToyOracle::score(const RgbImage & image, std::string_view prompt) const {
    const double cos = s_final(*reference_, image, prompt).value;
    return std::clamp((cos + 1.0) / 2.0, 0.0, 1.0);
}

std::string ToyOracle::backend_tag() const { return "toy-cosine:" + reference_->checkpoint_tag(); }

HttpOracle::HttpOracle(std::string endpoint, std::string tag, std::chrono::milliseconds timeout, int max_parallel)
    : endpoint_(std::move(endpoint)), tag_(std::move(tag)), timeout_(timeout), max_parallel_(std::max(1, max_parallel)) {
    parse_endpoint(endpoint_);
}

double HttpOracle::score(const RgbImage & image, std::string_view prompt) const {
    const json body{{"prompt", prompt}, {"shape", {3, image.height, image.width}}, {"pixels", image.data}};
    const auto reply = http_post_json(endpoint_, body, timeout_, {});
    try {
        return reply.at("score").get<double>();
    } catch (const json::exception & e) {
        throw backend_error(std::string("unexpected oracle reply: ") + e.what());
    }
}

std::unique_ptr<OracleAdapter> oracle_from_json(const json & j, const fs::path & base_dir) {
    const std::string kind = j.value("kind", std::string());
    if (kind == "toy") {
        if (!j.contains("gateway")) throw config_error("toy oracle config needs a \"gateway\" path");
        fs::path path = j.at("gateway").get<std::string>();
        if (path.is_relative() && !base_dir.empty()) path = base_dir / path;
        return std::make_unique<ToyOracle>(load_gateway(path));
    }
    if (kind == "http") {
        try {
            const double timeout_s = j.value("timeout_s", 60.0);
            return std::make_unique<HttpOracle>(
                j.at("endpoint").get<std::string>(), j.value("tag", std::string("http-oracle")),
                std::chrono::milliseconds(static_cast<int64_t>(timeout_s * 1000.0)), j.value("max_parallel", 1));
        } catch (const json::exception & e) {
            throw config_error(std::string("invalid http oracle config: ") + e.what());
        }
    }
    throw config_error("unknown oracle kind '" + kind + "' (expected \"toy\" or \"http\")");
}

std::array<std::string, kCandidateCount> candidate_prompts(const FactualSet & set) {
    std::array<std::string, kCandidateCount> out;
    out[0] = set.original;
    for (size_t k = 0; k < kErrorTypes.size(); ++k) {
        const auto it = set.corruptions.find(kErrorTypes[k]);
        if (it == set.corruptions.end()) {
            throw data_error("factual set for \"" + set.original + "\" lacks a '" +
                             std::string(error_type_id(kErrorTypes[k])) + "' corruption");
        }
        out[k + 1] = it->second;
    }
    return out;
}

CandidateEmbeddings encode_candidates(const EncoderGateway & gateway, const FactualSet & set) {
    CandidateEmbeddings out;
    for (const auto & p : candidate_prompts(set)) out.texts.push_back(encode_text(gateway, p));
    return out;
}

RecallResult recall_from_scores(const std::array<double, kCandidateCount> & scores) {
    RecallResult r;
    r.scores = scores;
    size_t best = 0;
    for (size_t k = 1; k < kCandidateCount; ++k) {
        if (scores[k] > scores[best]) best = k;
    }
    r.hit = best == 0;
    if (best > 0) r.chosen = kErrorTypes[best - 1];
    return r;
}

RecallResult recall_at_1(const CandidateEmbeddings & candidates, const EmbeddingVector & item) {
    if (candidates.texts.size() != kCandidateCount) {
        throw argument_error("recall needs " + std::to_string(kCandidateCount) + " candidate prompts");
    }
    std::array<double, kCandidateCount> scores{};
    for (size_t k = 0; k < kCandidateCount; ++k) scores[k] = score_embeddings(candidates.texts[k], item).value;
    return recall_from_scores(scores);
}

RecallResult recall_at_1(const EncoderGateway & gateway, const RgbImage & image, const FactualSet & set) {
    return recall_at_1(encode_candidates(gateway, set), encode_image(gateway, image));
}

RecallResult recall_at_1(const LatentScorer & scorer, const LatentFrame & frame, const FactualSet & set) {
    if (!scorer.gateway) throw argument_error("scorer has no gateway");
    return recall_at_1(*scorer.gateway, latent_to_rgb(frame, scorer.projection), set);
}

namespace {

const LatentFrame * frame_at_step(const LatentTrajectory & t, int step) {
    for (const auto & f : t.frames) {
        if (f.step == step) return &f;
    }
    return nullptr;
}

std::optional<RgbImage> final_image_of(const LatentTrajectory & t, const fs::path & root) {
    const auto path = resolve_final_image(t, root);
    if (!path) return std::nullopt;
    return read_image_blob(*path);
}

// Groups manifest entries by prompt, keeping first-appearance order.
std::vector<std::vector<const ManifestEntry *>> group_by_prompt(const DatasetManifest & manifest) {
    std::vector<std::vector<const ManifestEntry *>> groups;
    std::map<std::string, size_t> index;
    for (const auto & e : manifest.entries) {
        auto [it, fresh] = index.emplace(e.prompt, groups.size());
        if (fresh) groups.emplace_back();
        groups[it->second].push_back(&e);
    }
    return groups;
}

double mean_of(const std::vector<double> & v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

ConsistencyCurve consistency_curve(const LatentScorer & scorer, const DatasetManifest & manifest,
                                   const std::vector<FactualSet> & factual_sets, const std::vector<int> & steps,
                                   int workers) {
    if (!scorer.gateway) throw argument_error("scorer has no gateway");
    std::map<std::string, const FactualSet *> by_prompt;
    for (const auto & s : factual_sets) by_prompt.emplace(s.original, &s);
    std::vector<const FactualSet *> sets;
    for (const auto & e : manifest.entries) {
        const auto it = by_prompt.find(e.prompt);
        if (it == by_prompt.end()) {
            throw data_error("sample '" + e.sample_id + "' has no factual set for prompt \"" + e.prompt + "\"");
        }
        sets.push_back(it->second);
    }

    const auto gateway = make_concurrent_safe(scorer.gateway);
    const size_t n = manifest.entries.size();
    // results[sample][step index]; empty optional = skipped
    std::vector<std::vector<std::optional<RecallResult>>> results(n);
    parallel_for(n, workers, [&](size_t i) {
        const auto & entry = manifest.entries[i];
        const auto traj = read_trajectory(entry.sample_id, manifest.root);
        const auto candidates = encode_candidates(*gateway, *sets[i]);
        results[i].resize(steps.size());
        for (size_t k = 0; k < steps.size(); ++k) {
            if (steps[k] == kFinalStep) {
                if (const auto img = final_image_of(traj, manifest.root)) {
                    results[i][k] = recall_at_1(candidates, encode_image(*gateway, *img));
                }
            } else if (const auto * f = frame_at_step(traj, steps[k])) {
                results[i][k] =
                    recall_at_1(candidates, encode_image(*gateway, latent_to_rgb(*f, scorer.projection)));
            }
        }
    });

    ConsistencyCurve curve;
    curve.steps = steps;
    for (auto t : kErrorTypes) curve.per_error_recall[t].assign(steps.size(), 0.0);
    for (size_t k = 0; k < steps.size(); ++k) {
        int hits = 0, evaluated = 0, skipped = 0;
        std::map<ErrorType, int> chosen;
        std::vector<double> correct, distractor;
        for (size_t i = 0; i < n; ++i) {
            const auto & r = results[i][k];
            if (!r) {
                ++skipped;
                continue;
            }
            ++evaluated;
            hits += r->hit ? 1 : 0;
            if (r->chosen) ++chosen[*r->chosen];
            correct.push_back(r->scores[0]);
            distractor.push_back(
                std::accumulate(r->scores.begin() + 1, r->scores.end(), 0.0) / static_cast<double>(kErrorTypes.size()));
            curve.records.push_back({manifest.entries[i].sample_id, steps[k], *r});
        }
        const double denom = evaluated > 0 ? static_cast<double>(evaluated) : 1.0;
        curve.recall_at_1.push_back(hits / denom);
        for (auto t : kErrorTypes) curve.per_error_recall[t][k] = chosen[t] / denom;
        curve.correct_mean_score.push_back(mean_of(correct));
        curve.distractor_mean_score.push_back(mean_of(distractor));
        curve.evaluated.push_back(evaluated);
        curve.skipped.push_back(skipped);
    }
    return curve;
}

std::optional<double> window_mean(const std::vector<int> & steps, const std::vector<double> & values,
                                  const StepRange & range) {
    if (steps.size() != values.size()) throw argument_error("window_mean: steps and values differ in length");
    double sum = 0.0;
    int count = 0;
    for (size_t k = 0; k < steps.size(); ++k) {
        if (steps[k] != kFinalStep && range.contains(steps[k])) {
            sum += values[k];
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return sum / count;
}

DeltaCurve delta_curve(const LatentScorer & scorer, const DatasetManifest & manifest, const OracleAdapter & oracle,
                       const std::vector<int> & steps, int images_per_prompt, int workers) {
    if (!scorer.gateway) throw argument_error("scorer has no gateway");
    if (images_per_prompt < 2) throw argument_error("delta_curve needs images_per_prompt >= 2 to rank images");
    for (int s : steps) {
        if (s < 0) throw argument_error("delta_curve steps must be latent steps >= 0");
    }
    const auto groups = group_by_prompt(manifest);
    if (!groups.empty() &&
        std::all_of(groups.begin(), groups.end(), [](const auto & g) { return g.size() < 2; })) {
        throw data_error("delta_curve needs at least two generated images for some prompt; every prompt has one");
    }

    struct PromptResult {
        bool too_few = false;
        bool missing = false;
        std::vector<size_t> order;                 // image indices by oracle rank
        std::vector<std::vector<double>> scores;  // [image][step]
    };
    const auto gateway = make_concurrent_safe(scorer.gateway);
    std::vector<PromptResult> results(groups.size());
    parallel_for(groups.size(), std::min(workers, oracle.max_parallel()), [&](size_t g) {
        auto & res = results[g];
        const auto & group = groups[g];
        if (static_cast<int>(group.size()) < images_per_prompt) {
            res.too_few = true;
            return;
        }
        const auto text = encode_text(*gateway, group.front()->prompt);
        std::vector<double> oracle_scores;
        for (int m = 0; m < images_per_prompt; ++m) {
            const auto traj = read_trajectory(group[m]->sample_id, manifest.root);
            const auto img = final_image_of(traj, manifest.root);
            std::vector<double> per_step;
            for (int s : steps) {
                const auto * f = frame_at_step(traj, s);
                if (!f) break;
                per_step.push_back(s_latent(*gateway, *f, scorer.projection, text).value);
            }
            if (!img || per_step.size() != steps.size()) {
                res.missing = true;
                return;
            }
            oracle_scores.push_back(checked_oracle_score(oracle, *img, traj.prompt));
            res.scores.push_back(std::move(per_step));
        }
        res.order = rank_candidates(std::span<const double>(oracle_scores));
    });

    DeltaCurve curve;
    curve.steps = steps;
    curve.images_per_prompt = images_per_prompt;
    curve.oracle_tag = oracle.backend_tag();
    const size_t R = static_cast<size_t>(images_per_prompt);
    std::vector<std::vector<double>> sums(R, std::vector<double>(steps.size(), 0.0));
    curve.count_by_rank.assign(R, std::vector<int>(steps.size(), 0));
    for (const auto & res : results) {
        if (res.too_few) {
            ++curve.prompts_too_few_images;
            continue;
        }
        if (res.missing) {
            ++curve.prompts_missing_data;
            continue;
        }
        ++curve.prompts_evaluated;
        for (size_t r = 0; r < R; ++r) {
            for (size_t k = 0; k < steps.size(); ++k) {
                sums[r][k] += res.scores[res.order[r]][k];
                ++curve.count_by_rank[r][k];
            }
        }
    }
    curve.mean_by_rank.assign(R, std::vector<double>(steps.size(), 0.0));
    for (size_t r = 0; r < R; ++r) {
        for (size_t k = 0; k < steps.size(); ++k) {
            if (curve.count_by_rank[r][k] > 0) curve.mean_by_rank[r][k] = sums[r][k] / curve.count_by_rank[r][k];
        }
    }
    for (size_t k = 0; k < steps.size(); ++k) curve.gap.push_back(curve.mean_by_rank[0][k] - curve.mean_by_rank[R - 1][k]);
    return curve;
}

std::vector<BonAlignmentRow> bon_alignment_eval(const std::vector<BonOutcome> & runs, const OracleAdapter & oracle) {
    std::vector<BonAlignmentRow> rows;

    // Baseline: each distinct (prompt, seed) candidate once.
    BonAlignmentRow baseline;
    baseline.label = "Mean Value";
    baseline.n = 1;
    baseline.keep = 1;
    std::set<std::pair<std::string, int64_t>> seen;
    std::vector<double> base_scores;
    for (const auto & run : runs) {
        const bool complete = std::all_of(run.final_images.begin(), run.final_images.end(),
                                          [](const auto & img) { return img.has_value(); });
        if (!complete || run.final_images.empty()) continue;
        baseline.stop_step = run.total_steps;
        baseline.cost = run.total_steps;
        ++baseline.runs;
        for (size_t i = 0; i < run.final_images.size(); ++i) {
            if (!seen.emplace(run.prompt, run.traces[i].seed).second) continue;
            try {
                base_scores.push_back(checked_oracle_score(oracle, *run.final_images[i], run.prompt));
            } catch (const Error &) {
                baseline.incomplete = true;
            }
        }
    }
    baseline.scored = static_cast<int>(base_scores.size());
    baseline.mean_score = mean_of(base_scores);
    if (base_scores.empty()) baseline.incomplete = true;
    rows.push_back(baseline);

    std::map<std::tuple<int, int, int>, size_t> index;
    std::vector<BonAlignmentRow> plan_rows;
    std::vector<std::vector<double>> scores, costs;
    for (const auto & run : runs) {
        const auto key = std::make_tuple(run.plan.n, run.plan.stop_step, run.plan.keep);
        auto [it, fresh] = index.emplace(key, plan_rows.size());
        if (fresh) {
            BonAlignmentRow r;
            r.n = run.plan.n;
            r.stop_step = run.plan.stop_step;
            r.keep = run.plan.keep;
            r.label = "n=" + std::to_string(r.n) + " stop=" + std::to_string(r.stop_step) +
                      (r.keep > 1 ? " keep=" + std::to_string(r.keep) : "");
            plan_rows.push_back(r);
            scores.emplace_back();
            costs.emplace_back();
        }
        auto & row = plan_rows[it->second];
        ++row.runs;
        costs[it->second].push_back(static_cast<double>(run.ledger.total));
        try {
            scores[it->second].push_back(checked_oracle_score(oracle, run.selected_image, run.prompt));
        } catch (const Error &) {
            row.incomplete = true;
        }
    }
    for (size_t i = 0; i < plan_rows.size(); ++i) {
        plan_rows[i].cost = mean_of(costs[i]);
        plan_rows[i].scored = static_cast<int>(scores[i].size());
        plan_rows[i].mean_score = mean_of(scores[i]);
        if (scores[i].empty()) plan_rows[i].incomplete = true;
    }
    std::stable_sort(plan_rows.begin(), plan_rows.end(), [](const auto & a, const auto & b) {
        return std::tie(a.cost, a.n, a.stop_step) < std::tie(b.cost, b.n, b.stop_step);
    });
    rows.insert(rows.end(), plan_rows.begin(), plan_rows.end());
    return rows;
}

double selection_oracle_score(const EncoderGateway & gateway_in, const LatentProjection & projection,
                              const DatasetManifest & manifest, const StepRange & range,
                              const OracleAdapter & oracle, int workers) {
    const auto groups = group_by_prompt(manifest);
    if (groups.empty()) return 0.0;
    // Non-owning handle; the caller keeps the gateway alive for the duration of the call.
    std::shared_ptr<const EncoderGateway> gateway(std::shared_ptr<const EncoderGateway>{}, &gateway_in);
    gateway = make_concurrent_safe(gateway);
    std::vector<double> picked(groups.size());
    parallel_for(groups.size(), std::min(workers, oracle.max_parallel()), [&](size_t g) {
        const auto text = encode_text(*gateway, groups[g].front()->prompt);
        std::vector<double> window(groups[g].size(), -std::numeric_limits<double>::infinity());
        std::vector<LatentTrajectory> trajs;
        for (size_t m = 0; m < groups[g].size(); ++m) {
            trajs.push_back(read_trajectory(groups[g][m]->sample_id, manifest.root));
            double sum = 0.0;
            int count = 0;
            for (const auto & f : trajs.back().frames) {
                if (!range.contains(f.step)) continue;
                sum += s_latent(*gateway, f, projection, text).value;
                ++count;
            }
            if (count > 0) window[m] = sum / count;
        }
        const size_t best = rank_candidates(std::span<const double>(window)).front();
        const auto img = final_image_of(trajs[best], manifest.root);
        if (!img) throw data_error("sample '" + trajs[best].sample_id + "' has no final image for the oracle");
        picked[g] = checked_oracle_score(oracle, *img, trajs[best].prompt);
    });
    return mean_of(picked);
}

double range_recall(const EncoderGateway & gateway_in, const LatentProjection & projection,
                    const DatasetManifest & manifest, const std::vector<FactualSet> & factual_sets,
                    const StepRange & range, int workers) {
    std::vector<int> steps;
    for (int s = range.lo; s <= range.hi; ++s) steps.push_back(s);
    std::shared_ptr<const EncoderGateway> gateway(std::shared_ptr<const EncoderGateway>{}, &gateway_in);
    const auto curve = consistency_curve({gateway, projection}, manifest, factual_sets, steps, workers);
    std::vector<double> evaluated;
    for (size_t k = 0; k < steps.size(); ++k) {
        if (curve.evaluated[k] > 0) evaluated.push_back(curve.recall_at_1[k]);
    }
    return mean_of(evaluated);
}

RangeGrid range_grid(const std::shared_ptr<const EncoderGateway> & baseline,
                     const std::vector<GridCheckpoint> & checkpoints, const std::vector<StepRange> & eval_ranges,
                     const GridCellMetric & metric, std::string metric_name) {
    if (!baseline) throw argument_error("range grid needs a baseline gateway");
    if (eval_ranges.empty()) throw argument_error("range grid needs at least one eval range");
    for (const auto & r : eval_ranges) {
        if (r.empty()) throw argument_error("eval range " + range_label(r) + " is empty");
    }
    RangeGrid grid;
    grid.metric = std::move(metric_name);
    grid.eval_ranges = eval_ranges;
    auto add_row = [&](const EncoderGateway & g, std::string label, std::optional<StepRange> train) {
        std::vector<double> row;
        for (const auto & r : eval_ranges) row.push_back(metric(g, r));
        grid.row_labels.push_back(std::move(label));
        grid.train_ranges.push_back(train);
        grid.values.push_back(std::move(row));
    };
    add_row(*baseline, "frozen", std::nullopt);
    for (const auto & ck : checkpoints) {
        const std::string label = "trained " + range_label(ck.train_range);
        std::shared_ptr<EncoderGateway> g;
        try {
            if (!fs::exists(ck.gateway_config)) throw not_found_error("missing checkpoint " + ck.gateway_config.string());
            g = load_gateway(ck.gateway_config);
        } catch (const Error & e) {
            grid.skipped.push_back(label + ": " + e.what());
            continue;
        }
        add_row(*g, label, ck.train_range);
    }

    bool any = false, all = true;
    for (size_t i = 1; i < grid.values.size(); ++i) {
        for (size_t j = 0; j < eval_ranges.size(); ++j) {
            if (!grid.train_ranges[i] || !(*grid.train_ranges[i] == eval_ranges[j])) continue;
            any = true;
            for (size_t k = 0; k < grid.values.size(); ++k) {
                if (k != i && !(grid.values[i][j] > grid.values[k][j])) all = false;
            }
        }
    }
    grid.diagonal_dominant = any && all;
    return grid;
}

std::string step_label(int step) { return step == kFinalStep ? "final" : std::to_string(step); }

std::string range_label(const StepRange & r) { return "[" + std::to_string(r.lo) + "," + std::to_string(r.hi) + "]"; }

}  // namespace latent_align
