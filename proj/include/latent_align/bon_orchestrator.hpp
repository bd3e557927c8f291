#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "latent_align/alignment_scoring.hpp"
#include "latent_align/error.hpp"
#include "latent_align/latent_preview.hpp"
#include "latent_align/latent_store.hpp"

namespace latent_align {

// One in-flight generation. `frame` is the latent after `step` completed iterations.
struct DenoiseState {
    std::string prompt;
    int64_t seed = 0;
    int step = 0;
    LatentFrame frame;
    std::shared_ptr<const void> backend_data;
};

// Pretrained denoiser behind a uniform interface. step() must be deterministic in
// (prompt, seed, step index); exactly total_steps() calls take init() to completion.
class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;

    virtual int total_steps() const = 0;
    virtual DenoiseState init(const std::string & prompt, int64_t seed) = 0;
    // Advances one denoising iteration and returns the new frame.
    virtual LatentFrame step(DenoiseState & state) = 0;
    virtual RgbImage finalize(const DenoiseState & state) = 0;
    virtual bool thread_safe() const { return false; }
};

struct LatentScorer {
    std::shared_ptr<const EncoderGateway> gateway;
    LatentProjection projection;
};

struct BonPlan {
    int n = 1;
    int stop_step = 0;
    int keep = 1;
    std::vector<int64_t> seeds;  // n seeds; empty means 0..n-1
    // Number of trailing steps (ending at stop_step) whose scores are averaged for pruning.
    int score_window = 1;
};

nlohmann::json bon_plan_to_json(const BonPlan & plan);
BonPlan bon_plan_from_json(const nlohmann::json & j);
void validate_plan(const BonPlan & plan, int total_steps);

// Denoising iterations of a plan: n * stop_step + keep * (T_total - stop_step).
int64_t cost_of(int n, int stop_step, int total_steps, int keep);

struct CostLedger {
    std::vector<int64_t> per_candidate_steps;
    int64_t total = 0;
};

struct CandidateTrace {
    int64_t seed = 0;
    std::vector<AlignmentScore> scores;  // in step order
    std::optional<int> pruned_at;        // stop step at which the candidate was dropped
};

struct BonOutcome {
    std::string prompt;
    BonPlan plan;
    int total_steps = 0;
    size_t selected_index = 0;
    int64_t selected_seed = 0;
    RgbImage selected_image;
    std::vector<CandidateTrace> traces;
    CostLedger ledger;
    // Decoded images of every candidate that reached T_total, indexed by candidate.
    std::vector<std::optional<RgbImage>> final_images;
};

struct BonOptions {
    int workers = 1;
    bool trace_every_step = false;  // score every frame (costs scoring, not denoising)
    bool decode_all_finished = false;
};

class BonRunError : public Error {
public:
    BonRunError(ErrorKind kind, const std::string & what, CostLedger partial)
        : Error(kind, what), partial_(std::move(partial)) {}
    const CostLedger & partial_ledger() const { return partial_; }

private:
    CostLedger partial_;
};

BonOutcome run_bon(const BonPlan & plan, const std::string & prompt, DenoiserBackend & backend,
                   const LatentScorer & scorer, const BonOptions & options = {});

// Memoizes frames per (prompt, seed) so plans sharing candidates denoise them once.
class CachingBackend final : public DenoiserBackend {
public:
    explicit CachingBackend(DenoiserBackend & inner) : inner_(inner) {}

    int total_steps() const override { return inner_.total_steps(); }
    DenoiseState init(const std::string & prompt, int64_t seed) override;
    LatentFrame step(DenoiseState & state) override;
    RgbImage finalize(const DenoiseState & state) override;
    bool thread_safe() const override { return false; }

    int64_t physical_steps() const { return physical_steps_; }

private:
    struct Entry {
        DenoiseState live;
        std::vector<LatentFrame> frames;  // frames[k] = latent after k iterations
        std::optional<RgbImage> decoded;
    };
    Entry & entry(const std::string & prompt, int64_t seed);

    DenoiserBackend & inner_;
    std::map<std::pair<std::string, int64_t>, Entry> cache_;
    int64_t physical_steps_ = 0;
};

struct FrontierRow {
    int stop_step = 0;
    int n = 0;
    int keep = 1;
    int64_t cost = 0;
    size_t prompt_index = 0;
    size_t selected_index = 0;
    int64_t selected_seed = 0;
};

// Runs every plan on every prompt, reusing candidate trajectories; rows sorted by cost
// (stable in plan, then prompt order).
std::vector<FrontierRow> sweep(const std::vector<BonPlan> & plans, const std::vector<std::string> & prompts,
                               DenoiserBackend & backend, const LatentScorer & scorer,
                               std::vector<BonOutcome> * outcomes = nullptr);

// Line-delimited {prompt_id, seed, step, score, pruned_at} records of one run.
std::string run_records_jsonl(const BonOutcome & outcome, const std::string & prompt_id);

}  // namespace latent_align
