#include "latent_align/bon_orchestrator.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "latent_align/parallel.hpp"

using json = nlohmann::json;

namespace latent_align {

json bon_plan_to_json(const BonPlan & p) {
    return json{{"n", p.n}, {"stop_step", p.stop_step}, {"keep", p.keep}, {"seeds", p.seeds},
                {"score_window", p.score_window}};
}

BonPlan bon_plan_from_json(const json & j) {
    BonPlan p;
    try {
        p.n = j.value("n", p.n);
        p.stop_step = j.value("stop_step", p.stop_step);
        p.keep = j.value("keep", p.keep);
        p.seeds = j.value("seeds", std::vector<int64_t>{});
        p.score_window = j.value("score_window", p.score_window);
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid BoN plan: ") + e.what());
    }
    return p;
}

void validate_plan(const BonPlan & p, int total_steps) {
    if (p.n < 1) throw argument_error("BoN plan needs n >= 1");
    if (p.keep < 1 || p.keep > p.n) throw argument_error("BoN plan needs 1 <= keep <= n");
    if (total_steps < 1) throw argument_error("T_total must be >= 1");
    if (p.stop_step < 0 || p.stop_step > total_steps) throw argument_error("BoN plan needs 0 <= stop_step <= T_total");
    if (!p.seeds.empty() && static_cast<int>(p.seeds.size()) != p.n) {
        throw argument_error("BoN plan lists " + std::to_string(p.seeds.size()) + " seeds for n = " +
                             std::to_string(p.n));
    }
    if (p.score_window < 1) throw argument_error("score_window must be >= 1");
}

int64_t cost_of(int n, int stop_step, int total_steps, int keep) {
    BonPlan p;
    p.n = n;
    p.stop_step = stop_step;
    p.keep = keep;
    validate_plan(p, total_steps);
    return static_cast<int64_t>(n) * stop_step + static_cast<int64_t>(keep) * (total_steps - stop_step);
}

BonOutcome run_bon(const BonPlan & plan, const std::string & prompt, DenoiserBackend & backend,
                   const LatentScorer & scorer, const BonOptions & options) {
    const int T = backend.total_steps();
    validate_plan(plan, T);
    if (!scorer.gateway) throw argument_error("BoN scorer has no gateway");

    const size_t n = static_cast<size_t>(plan.n);
    BonOutcome out;
    out.prompt = prompt;
    out.plan = plan;
    out.total_steps = T;
    out.ledger.per_candidate_steps.assign(n, 0);
    out.traces.resize(n);
    out.final_images.resize(n);
    for (size_t i = 0; i < n; ++i) {
        out.traces[i].seed = plan.seeds.empty() ? static_cast<int64_t>(i) : plan.seeds[i];
    }
    if (plan.seeds.empty()) {
        out.plan.seeds.resize(n);
        std::iota(out.plan.seeds.begin(), out.plan.seeds.end(), int64_t{0});
    }

    const auto gateway = make_concurrent_safe(scorer.gateway);
    const int workers = backend.thread_safe() ? options.workers : 1;
    const int stop = plan.stop_step;
    std::vector<DenoiseState> states(n);
    std::vector<double> barrier_scores(n, -std::numeric_limits<double>::infinity());
    std::vector<std::optional<RgbImage>> decoded(n);

    auto finish_ledger = [&] {
        out.ledger.total = std::accumulate(out.ledger.per_candidate_steps.begin(),
                                           out.ledger.per_candidate_steps.end(), int64_t{0});
    };
    auto fail = [&](const std::exception & e) -> BonRunError {
        finish_ledger();
        const auto * err = dynamic_cast<const Error *>(&e);
        return BonRunError(err ? err->kind() : ErrorKind::backend, std::string("BoN run failed: ") + e.what(),
                           out.ledger);
    };

    try {
        const EmbeddingVector text = encode_text(*gateway, prompt);
        auto score = [&](const LatentFrame & f) { return s_latent(*gateway, f, scorer.projection, text); };

        // Phase 1: every candidate reaches the stop barrier.
        parallel_for(n, workers, [&](size_t i) {
            auto & st = states[i];
            auto & trace = out.traces[i];
            st = backend.init(prompt, trace.seed);
            if (options.trace_every_step) trace.scores.push_back(score(st.frame));
            double window_sum = 0.0;
            int window_count = 0;
            const int window_start = stop - plan.score_window + 1;
            for (int k = 1; k <= stop; ++k) {
                const LatentFrame f = backend.step(st);
                ++out.ledger.per_candidate_steps[i];
                const bool in_window = stop < T && k >= window_start;
                if (options.trace_every_step || in_window) {
                    const auto s = score(f);
                    if (options.trace_every_step) trace.scores.push_back(s);
                    if (in_window) {
                        window_sum += s.value;
                        ++window_count;
                    }
                }
            }
            if (stop == T) {
                decoded[i] = backend.finalize(st);
                const auto s = s_final(*gateway, *decoded[i], text);
                trace.scores.push_back(s);
                barrier_scores[i] = s.value;
            } else if (stop > 0) {
                barrier_scores[i] = window_sum / window_count;
                if (!options.trace_every_step) trace.scores.push_back({barrier_scores[i], stop});
            }
        });

        const auto order = rank_candidates(std::span<const double>(barrier_scores));
        std::vector<size_t> survivors(order.begin(), order.begin() + plan.keep);
        std::sort(survivors.begin(), survivors.end());
        if (stop < T) {
            for (size_t r = static_cast<size_t>(plan.keep); r < n; ++r) {
                out.traces[order[r]].pruned_at = stop;
            }
        }

        if (stop == T) {
            out.selected_index = order.front();
            out.final_images = decoded;
            out.selected_image = *decoded[out.selected_index];
        } else {
            // Phase 2: survivors run to completion and are compared at T_total.
            std::vector<double> final_scores(survivors.size());
            parallel_for(survivors.size(), workers, [&](size_t s) {
                const size_t i = survivors[s];
                auto & st = states[i];
                LatentFrame last = st.frame;
                for (int k = stop + 1; k <= T; ++k) {
                    last = backend.step(st);
                    ++out.ledger.per_candidate_steps[i];
                    if (options.trace_every_step && k < T) out.traces[i].scores.push_back(score(last));
                }
                const auto fs = score(last);
                out.traces[i].scores.push_back(fs);
                final_scores[s] = fs.value;
            });
            const auto final_order = rank_candidates(std::span<const double>(final_scores));
            out.selected_index = survivors[final_order.front()];
            if (options.decode_all_finished) {
                parallel_for(survivors.size(), workers,
                             [&](size_t s) { out.final_images[survivors[s]] = backend.finalize(states[survivors[s]]); });
                out.selected_image = *out.final_images[out.selected_index];
            } else {
                out.selected_image = backend.finalize(states[out.selected_index]);
                out.final_images[out.selected_index] = out.selected_image;
            }
        }
    } catch (const BonRunError &) {
        throw;
    } catch (const std::exception & e) {
        throw fail(e);
    }

    out.selected_seed = out.traces[out.selected_index].seed;
    finish_ledger();
    return out;
}

CachingBackend::Entry & CachingBackend::entry(const std::string & prompt, int64_t seed) {
    auto key = std::make_pair(prompt, seed);
    auto it = cache_.find(key);
    if (it == cache_.end()) {
        Entry e;
        e.live = inner_.init(prompt, seed);
        e.frames.push_back(e.live.frame);
        it = cache_.emplace(std::move(key), std::move(e)).first;
    }
    return it->second;
}

DenoiseState CachingBackend::init(const std::string & prompt, int64_t seed) {
    auto & e = entry(prompt, seed);
    DenoiseState st;
    st.prompt = prompt;
    st.seed = seed;
    st.step = 0;
    st.frame = e.frames.front();
    return st;
}

LatentFrame CachingBackend::step(DenoiseState & state) {
    auto & e = entry(state.prompt, state.seed);
    const size_t next = static_cast<size_t>(state.step) + 1;
    if (next > static_cast<size_t>(total_steps())) {
        throw argument_error("candidate already completed all denoising iterations");
    }
    while (e.frames.size() <= next) {
        e.frames.push_back(inner_.step(e.live));
        ++physical_steps_;
    }
    state.step = static_cast<int>(next);
    state.frame = e.frames[next];
    return state.frame;
}

RgbImage CachingBackend::finalize(const DenoiseState & state) {
    auto & e = entry(state.prompt, state.seed);
    if (state.step != total_steps()) {
        throw argument_error("finalize called before the candidate completed");
    }
    while (e.frames.size() <= static_cast<size_t>(total_steps())) {
        e.frames.push_back(inner_.step(e.live));
        ++physical_steps_;
    }
    if (!e.decoded) e.decoded = inner_.finalize(e.live);
    return *e.decoded;
}

std::vector<FrontierRow> sweep(const std::vector<BonPlan> & plans, const std::vector<std::string> & prompts,
                               DenoiserBackend & backend, const LatentScorer & scorer,
                               std::vector<BonOutcome> * outcomes) {
    CachingBackend cached(backend);
    std::vector<FrontierRow> rows;
    for (const auto & plan : plans) {
        for (size_t p = 0; p < prompts.size(); ++p) {
            auto outcome = run_bon(plan, prompts[p], cached, scorer);
            rows.push_back({plan.stop_step, plan.n, plan.keep, outcome.ledger.total, p, outcome.selected_index,
                            outcome.selected_seed});
            if (outcomes) outcomes->push_back(std::move(outcome));
        }
    }
    std::stable_sort(rows.begin(), rows.end(), [](const FrontierRow & a, const FrontierRow & b) { return a.cost < b.cost; });
    return rows;
}

std::string run_records_jsonl(const BonOutcome & outcome, const std::string & prompt_id) {
    std::string out;
    for (const auto & trace : outcome.traces) {
        for (const auto & s : trace.scores) {
            json rec{{"prompt_id", prompt_id},
                     {"seed", trace.seed},
                     {"step", s.step ? json(*s.step) : json("final")},
                     {"score", s.value},
                     {"pruned_at", trace.pruned_at ? json(*trace.pruned_at) : json(nullptr)}};
            out += rec.dump() + "\n";
        }
    }
    return out;
}

}  // namespace latent_align
