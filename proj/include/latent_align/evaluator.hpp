#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latent_align/alignment_scoring.hpp"
#include "latent_align/bon_orchestrator.hpp"
#include "latent_align/corruption_builder.hpp"
#include "latent_align/latent_store.hpp"

namespace latent_align {

// Step value standing for the decoded final image in curves and records.
inline constexpr int kFinalStep = -1;

// External alignment judge: score(image, prompt) in [0, 1], deterministic per backend_tag.
class OracleAdapter {
public:
    virtual ~OracleAdapter() = default;
    virtual double score(const RgbImage & image, std::string_view prompt) const = 0;
    virtual std::string backend_tag() const = 0;
    // Number of concurrent score() calls the backend accepts.
    virtual int max_parallel() const { return 1; }
};

// Calls the oracle and throws backend_error unless the result is finite and in [0, 1].
double checked_oracle_score(const OracleAdapter & oracle, const RgbImage & image, std::string_view prompt);

// (cos + 1) / 2 under a fixed reference gateway.
class ToyOracle final : public OracleAdapter {
public:
    explicit ToyOracle(std::shared_ptr<const EncoderGateway> reference);
    double score(const RgbImage & image, std::string_view prompt) const override;
    std::string backend_tag() const override;
    int max_parallel() const override { return 64; }

private:
    std::shared_ptr<const EncoderGateway> reference_;
};

// POST {"prompt", "shape": [3, H, W], "pixels": [...]} -> {"score": x}.
class HttpOracle final : public OracleAdapter {
public:
    HttpOracle(std::string endpoint, std::string tag, std::chrono::milliseconds timeout, int max_parallel);
    double score(const RgbImage & image, std::string_view prompt) const override;
    std::string backend_tag() const override { return tag_; }
    int max_parallel() const override { return max_parallel_; }

private:
    std::string endpoint_;
    std::string tag_;
    std::chrono::milliseconds timeout_;
    int max_parallel_;
};

// {"kind": "toy", "gateway": path} or {"kind": "http", "endpoint", "tag", "timeout_s", "max_parallel"}.
std::unique_ptr<OracleAdapter> oracle_from_json(const nlohmann::json & config,
                                                const std::filesystem::path & base_dir = {});

// Candidate order used everywhere: the original prompt, then the corruptions in kErrorTypes order.
inline constexpr size_t kCandidateCount = 1 + kErrorTypes.size();
std::array<std::string, kCandidateCount> candidate_prompts(const FactualSet & set);

struct CandidateEmbeddings {
    std::vector<EmbeddingVector> texts;  // kCandidateCount entries
};
CandidateEmbeddings encode_candidates(const EncoderGateway & gateway, const FactualSet & set);

struct RecallResult {
    bool hit = false;
    std::optional<ErrorType> chosen;  // empty = the original prompt
    std::array<double, kCandidateCount> scores{};
};

// Argmax with ties resolved toward the earlier candidate, so a tie with the original is a hit.
RecallResult recall_from_scores(const std::array<double, kCandidateCount> & scores);
RecallResult recall_at_1(const CandidateEmbeddings & candidates, const EmbeddingVector & item);
RecallResult recall_at_1(const EncoderGateway & gateway, const RgbImage & image, const FactualSet & set);
RecallResult recall_at_1(const LatentScorer & scorer, const LatentFrame & frame, const FactualSet & set);

struct RecallRecord {
    std::string sample_id;
    int step = 0;
    RecallResult result;
};

struct ConsistencyCurve {
    std::vector<int> steps;
    std::vector<double> recall_at_1;
    // Fraction of items whose top candidate was the given corruption.
    std::map<ErrorType, std::vector<double>> per_error_recall;
    std::vector<double> correct_mean_score;
    // Mean over items of the per-item average distractor score.
    std::vector<double> distractor_mean_score;
    std::vector<int> evaluated;
    std::vector<int> skipped;  // samples without a frame (or final image) at the step
    std::vector<RecallRecord> records;
};

// Factual sets are matched to samples by their original prompt; a sample without one is a data_error.
ConsistencyCurve consistency_curve(const LatentScorer & scorer, const DatasetManifest & manifest,
                                   const std::vector<FactualSet> & factual_sets, const std::vector<int> & steps,
                                   int workers = 1);

// Mean of the values whose step lies in range; nullopt when none does.
std::optional<double> window_mean(const std::vector<int> & steps, const std::vector<double> & values,
                                  const StepRange & range);

struct DeltaCurve {
    std::vector<int> steps;
    int images_per_prompt = 0;
    std::string oracle_tag;
    std::vector<std::vector<double>> mean_by_rank;  // [oracle rank][step], rank 0 = best
    std::vector<std::vector<int>> count_by_rank;
    std::vector<double> gap;  // best minus worst rank, raw cosine units
    int prompts_evaluated = 0;
    int prompts_too_few_images = 0;
    int prompts_missing_data = 0;
};

// Trajectories are grouped by prompt; the first images_per_prompt of each group (by sample_id)
// are ranked by the oracle on their final images.
DeltaCurve delta_curve(const LatentScorer & scorer, const DatasetManifest & manifest, const OracleAdapter & oracle,
                       const std::vector<int> & steps, int images_per_prompt = 4, int workers = 1);

struct BonAlignmentRow {
    std::string label;
    int n = 0;
    int stop_step = 0;
    int keep = 0;
    double cost = 0.0;  // mean denoising iterations per prompt
    double mean_score = 0.0;
    int runs = 0;
    int scored = 0;
    bool incomplete = false;
};

// Row 0 is "Mean Value": the oracle mean over every candidate of runs that decoded all of
// their candidates. Remaining rows: one per (n, stop_step, keep), ordered by cost.
std::vector<BonAlignmentRow> bon_alignment_eval(const std::vector<BonOutcome> & runs, const OracleAdapter & oracle);

// Mean oracle score of the images picked per prompt by the window-mean S_latent over range.
double selection_oracle_score(const EncoderGateway & gateway, const LatentProjection & projection,
                              const DatasetManifest & manifest, const StepRange & range,
                              const OracleAdapter & oracle, int workers = 1);

// Mean over the steps in range of the per-step R@1.
double range_recall(const EncoderGateway & gateway, const LatentProjection & projection,
                    const DatasetManifest & manifest, const std::vector<FactualSet> & factual_sets,
                    const StepRange & range, int workers = 1);

struct GridCheckpoint {
    StepRange train_range;
    std::filesystem::path gateway_config;
};

struct RangeGrid {
    std::string metric;
    std::vector<std::string> row_labels;  // row 0 = frozen baseline
    std::vector<std::optional<StepRange>> train_ranges;
    std::vector<StepRange> eval_ranges;
    std::vector<std::vector<double>> values;
    std::vector<std::string> skipped;  // "<label>: <reason>"
    // True when every checkpoint whose train range is also an eval range beats all other rows
    // in that column (and at least one such checkpoint exists).
    bool diagonal_dominant = false;
};

using GridCellMetric = std::function<double(const EncoderGateway &, const StepRange &)>;

RangeGrid range_grid(const std::shared_ptr<const EncoderGateway> & baseline,
                     const std::vector<GridCheckpoint> & checkpoints, const std::vector<StepRange> & eval_ranges,
                     const GridCellMetric & metric, std::string metric_name);

std::string step_label(int step);
std::string range_label(const StepRange & range);

}  // namespace latent_align
