#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latent_align/error.hpp"
#include "latent_align/latent_preview.hpp"
#include "latent_align/latent_store.hpp"
#include "latent_align/trainable_gateway.hpp"

namespace latent_align {

enum class TrainedTowers { image_only, image_and_text };
// trajectories: each epoch visits every trajectory once with a fresh random step.
// frames: corpus_size (trajectory, step) pairs are drawn once and revisited every epoch.
enum class CorpusMode { trajectories, frames };

struct TrainConfig {
    StepRange latent_range{20, 29};
    double learning_rate = 5.7e-5;
    std::string schedule = "cosine-annealing";
    double warmup_ratio = 0.1;
    double weight_decay = 0.1;
    int batch_size = 128;
    int epochs = 10;
    int corpus_size = 50000;  // 0 = use everything available
    CorpusMode corpus_mode = CorpusMode::frames;
    double temperature_init = 0.0;  // <= 0 keeps the gateway's pretrained temperature
    bool learn_temperature = true;
    TrainedTowers trained_towers = TrainedTowers::image_only;
    uint64_t seed = 0;
    std::optional<std::filesystem::path> resume_from;  // checkpoint directory

    bool operator==(const TrainConfig &) const = default;
};

nlohmann::json train_config_to_json(const TrainConfig & config);
TrainConfig train_config_from_json(const nlohmann::json & j);
void validate_train_config(const TrainConfig & config);

struct TrainingBatch {
    std::vector<RgbImage> previews;
    std::vector<std::string> prompts;
    std::vector<int> steps;
    std::vector<std::string> sample_ids;

    size_t size() const { return prompts.size(); }
};

// One frame per trajectory, no repeated sample_id; step uniform over latent_range intersected
// with the steps the trajectory stores. The batch is smaller than batch_size only when fewer
// trajectories are eligible.
TrainingBatch sample_training_batch(const DatasetManifest & manifest, const TrainConfig & config,
                                    const LatentProjection & projection, std::mt19937_64 & rng);

// Symmetric InfoNCE over the B x B cosine matrix scaled by 1 / temperature, diagonal as targets.
double info_nce_loss(const Eigen::MatrixXd & image_embs, const Eigen::MatrixXd & text_embs, double temperature);

struct InfoNceGradients {
    double loss = 0.0;
    Eigen::MatrixXd d_image;
    Eigen::MatrixXd d_text;
    double d_temperature = 0.0;
};
InfoNceGradients info_nce_loss_and_gradients(const Eigen::MatrixXd & image_embs, const Eigen::MatrixXd & text_embs,
                                             double temperature);

// Linear warmup over round(warmup_ratio * total_steps) optimizer steps, then cosine decay to 0.
double scheduled_learning_rate(double base, int step, int total_steps, double warmup_ratio);

// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(const std::vector<ParameterBlock> & blocks, double lr, double weight_decay);

    nlohmann::json state() const;
    void load_state(const nlohmann::json & j);
    long steps_taken() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

struct TrainLogRecord {
    int step = 0;
    int epoch = 0;
    double loss = 0.0;
    double lr = 0.0;
    double temperature = 0.0;
};
std::string train_log_to_json_line(const TrainLogRecord & record);

struct TrainResult {
    std::filesystem::path checkpoint_dir;
    std::vector<TrainLogRecord> log;  // records produced by this call
    int steps_completed = 0;          // including steps from a resumed checkpoint
    int total_steps = 0;
};

class TrainingDiverged : public Error {
public:
    TrainingDiverged(const std::string & what, std::filesystem::path last_good, int step)
        : Error(ErrorKind::backend, what), last_good_(std::move(last_good)), step_(step) {}
    const std::filesystem::path & last_good_checkpoint() const { return last_good_; }
    int step() const { return step_; }

private:
    std::filesystem::path last_good_;
    int step_;
};

// Fine-tunes the gateway in place. Writes <output_dir>/train_log.jsonl and
// <output_dir>/checkpoint/{gateway.json, optimizer.json, meta.json}. Deterministic given the
// config seed. On a non-finite loss the last good weights are written and TrainingDiverged is thrown.
TrainResult train(TrainableGateway & gateway, const DatasetManifest & manifest, const TrainConfig & config,
                  const LatentProjection & projection, const std::filesystem::path & output_dir);

}  // namespace latent_align
