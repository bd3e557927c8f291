#include "latent_align/noisy_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "latent_align/util.hpp"

#ifndef LATENT_ALIGN_GIT_HASH
#define LATENT_ALIGN_GIT_HASH "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace latent_align {

namespace {

constexpr double kMaxLogitScale = 4.605170185988092;  // ln 100

std::string towers_name(TrainedTowers t) { return t == TrainedTowers::image_only ? "image_only" : "image_and_text"; }
std::string corpus_mode_name(CorpusMode m) { return m == CorpusMode::frames ? "frames" : "trajectories"; }

}  // namespace

json train_config_to_json(const TrainConfig & c) {
    json j{{"latent_range", {c.latent_range.lo, c.latent_range.hi}},
           {"learning_rate", c.learning_rate},
           {"schedule", {{"kind", c.schedule}, {"warmup_ratio", c.warmup_ratio}}},
           {"weight_decay", c.weight_decay},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"corpus_size", c.corpus_size},
           {"corpus_mode", corpus_mode_name(c.corpus_mode)},
           {"temperature_init", c.temperature_init},
           {"learn_temperature", c.learn_temperature},
           {"trained_towers", towers_name(c.trained_towers)},
           {"seed", c.seed}};
    j["resume_from"] = c.resume_from ? json(c.resume_from->string()) : json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const json & j) {
    TrainConfig c;
    try {
        if (j.contains("latent_range")) {
            const auto r = j.at("latent_range").get<std::vector<int>>();
            if (r.size() != 2) throw config_error("latent_range must be [lo, hi]");
            c.latent_range = {r[0], r[1]};
        }
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        if (j.contains("schedule")) {
            const auto & s = j.at("schedule");
            c.schedule = s.value("kind", c.schedule);
            c.warmup_ratio = s.value("warmup_ratio", c.warmup_ratio);
        }
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.corpus_size = j.value("corpus_size", c.corpus_size);
        const auto mode = j.value("corpus_mode", corpus_mode_name(c.corpus_mode));
        if (mode == "frames") {
            c.corpus_mode = CorpusMode::frames;
        } else if (mode == "trajectories") {
            c.corpus_mode = CorpusMode::trajectories;
        } else {
            throw config_error("unknown corpus_mode '" + mode + "'");
        }
        c.temperature_init = j.value("temperature_init", c.temperature_init);
        c.learn_temperature = j.value("learn_temperature", c.learn_temperature);
        const auto towers = j.value("trained_towers", towers_name(c.trained_towers));
        if (towers == "image_only") {
            c.trained_towers = TrainedTowers::image_only;
        } else if (towers == "image_and_text") {
            c.trained_towers = TrainedTowers::image_and_text;
        } else {
            throw config_error("unknown trained_towers '" + towers + "'");
        }
        c.seed = j.value("seed", c.seed);
        if (j.contains("resume_from") && !j.at("resume_from").is_null()) {
            c.resume_from = j.at("resume_from").get<std::string>();
        }
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid training config: ") + e.what());
    }
    validate_train_config(c);
    return c;
}

void validate_train_config(const TrainConfig & c) {
    if (c.latent_range.empty() || c.latent_range.lo < 0) {
        throw config_error("latent_range must be a nonempty interval within [0, T_total]");
    }
    if (c.batch_size < 2) {
        throw config_error("batch_size must be >= 2 so every item has a negative");
    }
    if (!(c.learning_rate > 0.0) || c.weight_decay < 0.0 || c.warmup_ratio < 0.0 || c.warmup_ratio >= 1.0) {
        throw config_error("learning_rate > 0, weight_decay >= 0 and warmup_ratio in [0, 1) are required");
    }
    if (c.epochs < 1 || c.corpus_size < 0) {
        throw config_error("epochs must be >= 1 and corpus_size >= 0");
    }
    if (c.schedule != "cosine-annealing") {
        throw config_error("unsupported schedule '" + c.schedule + "' (only cosine-annealing)");
    }
}

namespace {

struct Eligible {
    size_t entry;            // index into manifest.entries
    std::vector<int> steps;  // stored steps inside latent_range
};

std::vector<Eligible> eligible_samples(const DatasetManifest & manifest, const StepRange & range) {
    std::vector<Eligible> out;
    for (size_t i = 0; i < manifest.entries.size(); ++i) {
        Eligible e{i, {}};
        for (int s : manifest.entries[i].steps) {
            if (range.contains(s)) e.steps.push_back(s);
        }
        if (!e.steps.empty()) out.push_back(std::move(e));
    }
    if (out.empty()) {
        throw data_error("no samples carry frames within latent range [" + std::to_string(range.lo) + ", " +
                         std::to_string(range.hi) + "]");
    }
    return out;
}

int draw_step(const Eligible & e, std::mt19937_64 & rng) {
    return e.steps[std::uniform_int_distribution<size_t>(0, e.steps.size() - 1)(rng)];
}

RgbImage load_preview(const DatasetManifest & manifest, size_t entry, int step, const LatentProjection & projection) {
    const auto & id = manifest.entries[entry].sample_id;
    auto traj = read_trajectory(id, manifest.root, StepRange{step, step});
    if (traj.frames.size() != 1) {
        throw data_error("sample '" + id + "' has no frame at step " + std::to_string(step));
    }
    return latent_to_rgb(traj.frames.front(), projection);
}

void check_unit_rows(const Eigen::MatrixXd & m, const char * what) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (!std::isfinite(n) || std::fabs(n - 1.0) > 1e-5) {
            throw argument_error(std::string(what) + " row " + std::to_string(i) + " is not a unit vector");
        }
    }
}

}  // namespace

TrainingBatch sample_training_batch(const DatasetManifest & manifest, const TrainConfig & config,
                                    const LatentProjection & projection, std::mt19937_64 & rng) {
    const auto eligible = eligible_samples(manifest, config.latent_range);
    const size_t b = std::min<size_t>(static_cast<size_t>(config.batch_size), eligible.size());

    // partial Fisher-Yates: b distinct trajectories
    std::vector<size_t> idx(eligible.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (size_t i = 0; i < b; ++i) {
        const size_t j = std::uniform_int_distribution<size_t>(i, idx.size() - 1)(rng);
        std::swap(idx[i], idx[j]);
    }

    TrainingBatch batch;
    for (size_t i = 0; i < b; ++i) {
        const auto & e = eligible[idx[i]];
        const int step = draw_step(e, rng);
        const auto & entry = manifest.entries[e.entry];
        batch.previews.push_back(load_preview(manifest, e.entry, step, projection));
        batch.prompts.push_back(entry.prompt);
        batch.steps.push_back(step);
        batch.sample_ids.push_back(entry.sample_id);
    }
    return batch;
}

InfoNceGradients info_nce_loss_and_gradients(const Eigen::MatrixXd & img, const Eigen::MatrixXd & txt,
                                             double temperature) {
    if (img.rows() != txt.rows() || img.cols() != txt.cols()) {
        throw argument_error("image and text embedding batches differ in shape");
    }
    if (img.rows() < 2) {
        throw argument_error("InfoNCE needs a batch of at least 2");
    }
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw argument_error("temperature must be positive and finite");
    }
    check_unit_rows(img, "image embedding");
    check_unit_rows(txt, "text embedding");

    const Eigen::Index b = img.rows();
    const Eigen::MatrixXd sim = img * txt.transpose();
    const Eigen::MatrixXd logits = sim / temperature;

    // row softmax (image -> text) and column softmax (text -> image)
    Eigen::MatrixXd p_row(b, b), p_col(b, b);
    double loss_rows = 0.0, loss_cols = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) {
        const double m = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
        const double s = e.sum();
        p_row.row(i) = e / s;
        loss_rows += -(logits(i, i) - m - std::log(s));
    }
    for (Eigen::Index j = 0; j < b; ++j) {
        const double m = logits.col(j).maxCoeff();
        const Eigen::VectorXd e = (logits.col(j).array() - m).exp();
        const double s = e.sum();
        p_col.col(j) = e / s;
        loss_cols += -(logits(j, j) - m - std::log(s));
    }
    const double bd = static_cast<double>(b);

    InfoNceGradients g;
    g.loss = 0.5 * (loss_rows / bd + loss_cols / bd);

    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(b, b);
    const Eigen::MatrixXd d_logits = (0.5 / bd) * ((p_row - eye) + (p_col - eye));
    g.d_image = d_logits * txt / temperature;
    g.d_text = d_logits.transpose() * img / temperature;
    g.d_temperature = -(d_logits.cwiseProduct(sim)).sum() / (temperature * temperature);
    return g;
}

double info_nce_loss(const Eigen::MatrixXd & img, const Eigen::MatrixXd & txt, double temperature) {
    return info_nce_loss_and_gradients(img, txt, temperature).loss;
}

double scheduled_learning_rate(double base, int step, int total_steps, double warmup_ratio) {
    const int warmup = static_cast<int>(std::lround(warmup_ratio * total_steps));
    if (step < warmup) {
        return base * static_cast<double>(step + 1) / warmup;
    }
    const int decay_steps = std::max(1, total_steps - warmup);
    const double progress = std::min(1.0, static_cast<double>(step - warmup) / decay_steps);
    return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const std::vector<ParameterBlock> & blocks, double lr, double weight_decay) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto & block : blocks) {
        auto & [m, v] = moments_[block.name];
        if (m.size() != block.values.size()) {
            m.assign(block.values.size(), 0.0);
            v.assign(block.values.size(), 0.0);
        }
        for (size_t i = 0; i < block.values.size(); ++i) {
            const double g = block.grads[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
            const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            if (block.decay) {
                block.values[i] -= lr * weight_decay * block.values[i];
            }
            block.values[i] -= lr * update;
        }
    }
}

json AdamW::state() const {
    json moments = json::object();
    for (const auto & [name, mv] : moments_) {
        moments[name] = {{"m", mv.first}, {"v", mv.second}};
    }
    return json{{"t", t_}, {"beta1", beta1_}, {"beta2", beta2_}, {"eps", eps_}, {"moments", moments}};
}

void AdamW::load_state(const json & j) {
    t_ = j.at("t").get<long>();
    beta1_ = j.at("beta1").get<double>();
    beta2_ = j.at("beta2").get<double>();
    eps_ = j.at("eps").get<double>();
    moments_.clear();
    for (const auto & [name, mv] : j.at("moments").items()) {
        moments_[name] = {mv.at("m").get<std::vector<double>>(), mv.at("v").get<std::vector<double>>()};
    }
}

std::string train_log_to_json_line(const TrainLogRecord & r) {
    return json{{"step", r.step}, {"epoch", r.epoch}, {"loss", r.loss}, {"lr", r.lr}, {"temperature", r.temperature}}
               .dump() +
           "\n";
}

namespace {

struct BatchItem {
    size_t eligible;
    int step;
};

// Reproducible per-epoch RNG so a resumed run regenerates the same data order.
std::mt19937_64 epoch_rng(uint64_t seed, int epoch) {
    return std::mt19937_64(fnv1a64("epoch-" + std::to_string(epoch), seed));
}

std::vector<std::vector<BatchItem>> pack_batches(std::vector<BatchItem> stream, const std::vector<Eligible> & eligible,
                                                 int batch_size) {
    std::vector<std::vector<BatchItem>> batches;
    std::vector<BatchItem> pending;
    size_t next = 0;
    while (next < stream.size() || !pending.empty()) {
        std::vector<BatchItem> batch;
        std::vector<size_t> used;
        auto try_add = [&](const BatchItem & item) {
            if (std::find(used.begin(), used.end(), eligible[item.eligible].entry) != used.end()) return false;
            used.push_back(eligible[item.eligible].entry);
            batch.push_back(item);
            return true;
        };
        std::vector<BatchItem> still_pending;
        for (const auto & item : pending) {
            if (static_cast<int>(batch.size()) >= batch_size || !try_add(item)) still_pending.push_back(item);
        }
        pending = std::move(still_pending);
        while (static_cast<int>(batch.size()) < batch_size && next < stream.size()) {
            if (!try_add(stream[next])) pending.push_back(stream[next]);
            ++next;
        }
        if (batch.empty()) break;
        batches.push_back(std::move(batch));
    }
    // a lone item has no negatives
    std::erase_if(batches, [](const auto & b) { return b.size() < 2; });
    return batches;
}

class EpochPlanner {
public:
    EpochPlanner(const TrainConfig & config, std::vector<Eligible> eligible)
        : config_(config), eligible_(std::move(eligible)) {
        if (config_.corpus_mode == CorpusMode::frames) {
            std::mt19937_64 rng(fnv1a64("corpus", config_.seed));
            size_t n = config_.corpus_size > 0 ? static_cast<size_t>(config_.corpus_size) : 0;
            if (n == 0) {
                for (size_t i = 0; i < eligible_.size(); ++i) {
                    for (int s : eligible_[i].steps) corpus_.push_back({i, s});
                }
            } else {
                for (size_t k = 0; k < n; ++k) {
                    const size_t i = std::uniform_int_distribution<size_t>(0, eligible_.size() - 1)(rng);
                    corpus_.push_back({i, draw_step(eligible_[i], rng)});
                }
            }
        }
    }

    std::vector<std::vector<BatchItem>> plan(int epoch) const {
        auto rng = epoch_rng(config_.seed, epoch);
        std::vector<BatchItem> stream;
        if (config_.corpus_mode == CorpusMode::frames) {
            stream = corpus_;
            std::shuffle(stream.begin(), stream.end(), rng);
        } else {
            std::vector<size_t> order(eligible_.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::shuffle(order.begin(), order.end(), rng);
            if (config_.corpus_size > 0 && order.size() > static_cast<size_t>(config_.corpus_size)) {
                order.resize(config_.corpus_size);
            }
            for (size_t i : order) stream.push_back({i, draw_step(eligible_[i], rng)});
        }
        return pack_batches(std::move(stream), eligible_, config_.batch_size);
    }

    const std::vector<Eligible> & eligible() const { return eligible_; }

private:
    const TrainConfig & config_;
    std::vector<Eligible> eligible_;
    std::vector<BatchItem> corpus_;
};

struct Snapshot {
    std::vector<std::vector<double>> values;
    double logit_scale = 0.0;
};

Snapshot take_snapshot(const std::vector<ParameterBlock> & blocks, double logit_scale) {
    Snapshot s;
    for (const auto & b : blocks) s.values.emplace_back(b.values.begin(), b.values.end());
    s.logit_scale = logit_scale;
    return s;
}

void restore_snapshot(const std::vector<ParameterBlock> & blocks, const Snapshot & s) {
    for (size_t i = 0; i < blocks.size(); ++i) {
        std::copy(s.values[i].begin(), s.values[i].end(), blocks[i].values.begin());
    }
}

}  // namespace

TrainResult train(TrainableGateway & gateway, const DatasetManifest & manifest, const TrainConfig & config,
                  const LatentProjection & projection, const fs::path & output_dir) {
    validate_train_config(config);
    EpochPlanner planner(config, eligible_samples(manifest, config.latent_range));

    std::vector<int> batches_per_epoch;
    int total_steps = 0;
    for (int e = 0; e < config.epochs; ++e) {
        batches_per_epoch.push_back(static_cast<int>(planner.plan(e).size()));
        total_steps += batches_per_epoch.back();
    }
    if (total_steps == 0) {
        throw data_error("training corpus yields no batch of size >= 2");
    }

    const bool train_text = config.trained_towers == TrainedTowers::image_and_text;
    auto all_blocks = [&] {
        auto blocks = gateway.image_parameters();
        for (auto & b : gateway.text_parameters()) blocks.push_back(b);
        return blocks;
    };

    double logit_scale = config.temperature_init > 0.0 ? std::log(1.0 / config.temperature_init) : gateway.logit_scale();
    double logit_scale_grad = 0.0;
    AdamW optimizer;
    int start_step = 0;

    if (config.resume_from) {
        const auto state = json::parse(read_text_file(*config.resume_from / "optimizer.json"));
        optimizer.load_state(state.at("adam"));
        start_step = state.at("step").get<int>();
        logit_scale = state.at("logit_scale").get<double>();
        if (start_step > total_steps) {
            throw config_error("resume checkpoint is past the end of the configured schedule");
        }
    }
    gateway.set_logit_scale(logit_scale);

    const fs::path ckpt_dir = output_dir / "checkpoint";
    fs::create_directories(ckpt_dir);
    const std::string config_hash = sha256_hex(train_config_to_json(config).dump());
    const std::string corpus_hash = sha256_hex(manifest_to_jsonl(manifest));

    auto write_checkpoint = [&](int step, int epoch) {
        gateway.set_logit_scale(logit_scale);
        gateway.save(ckpt_dir / "gateway.json");
        write_text_file(ckpt_dir / "optimizer.json",
                        json{{"step", step}, {"epoch", epoch}, {"logit_scale", logit_scale}, {"adam", optimizer.state()}}
                                .dump() +
                            "\n");
        write_text_file(ckpt_dir / "meta.json", json{{"config_hash", config_hash},
                                                     {"git_hash", LATENT_ALIGN_GIT_HASH},
                                                     {"corpus_manifest_hash", corpus_hash},
                                                     {"step", step},
                                                     {"epoch", epoch},
                                                     {"checkpoint_tag", gateway.checkpoint_tag()},
                                                     {"config", train_config_to_json(config)}}
                                                    .dump(2) +
                                                    "\n");
    };

    std::unordered_map<uint64_t, std::vector<double>> pixel_cache;
    auto pixels_for = [&](const BatchItem & item) -> const std::vector<double> & {
        const uint64_t key = (static_cast<uint64_t>(item.eligible) << 20) | static_cast<uint64_t>(item.step);
        auto it = pixel_cache.find(key);
        if (it == pixel_cache.end()) {
            const auto preview =
                load_preview(manifest, planner.eligible()[item.eligible].entry, item.step, projection);
            it = pixel_cache.emplace(key, preprocess_image(preview, gateway.preprocess())).first;
        }
        return it->second;
    };

    const fs::path log_path = output_dir / "train_log.jsonl";
    std::string log_text = (config.resume_from && fs::exists(log_path)) ? read_text_file(log_path) : std::string();

    TrainResult result;
    result.checkpoint_dir = ckpt_dir;
    result.total_steps = total_steps;

    Snapshot last_good = take_snapshot(all_blocks(), logit_scale);
    int last_good_step = start_step;
    if (!config.resume_from) {
        write_checkpoint(0, 0);
    }

    int step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        if (step + batches_per_epoch[epoch] <= start_step) {
            step += batches_per_epoch[epoch];
            continue;
        }
        const auto batches = planner.plan(epoch);
        for (const auto & batch : batches) {
            if (step < start_step) {
                ++step;
                continue;
            }
            std::vector<std::vector<double>> pixels;
            std::vector<std::string> prompts;
            for (const auto & item : batch) {
                pixels.push_back(pixels_for(item));
                prompts.push_back(manifest.entries[planner.eligible()[item.eligible].entry].prompt);
            }

            gateway.zero_grad();
            const Eigen::MatrixXd img = gateway.forward_images(pixels);
            const Eigen::MatrixXd txt = gateway.forward_texts(prompts);
            const double temperature = std::exp(-logit_scale);
            const double lr = scheduled_learning_rate(config.learning_rate, step, total_steps, config.warmup_ratio);

            InfoNceGradients g;
            bool finite = img.allFinite() && txt.allFinite();
            if (finite) {
                g = info_nce_loss_and_gradients(img, txt, temperature);
                finite = std::isfinite(g.loss);
            }
            if (!finite) {
                restore_snapshot(all_blocks(), last_good);
                logit_scale = last_good.logit_scale;
                write_checkpoint(last_good_step, epoch);
                write_text_file(log_path, log_text);
                throw TrainingDiverged("training diverged (non-finite loss) at step " + std::to_string(step) +
                                           "; last good checkpoint is from step " + std::to_string(last_good_step),
                                       ckpt_dir, step);
            }

            gateway.backward_images(g.d_image);
            if (train_text) gateway.backward_texts(g.d_text);

            auto blocks = gateway.image_parameters();
            if (train_text) {
                for (auto & b : gateway.text_parameters()) blocks.push_back(b);
            }
            if (config.learn_temperature) {
                // d loss / d logit_scale, temperature = exp(-logit_scale)
                logit_scale_grad = -temperature * g.d_temperature;
                blocks.push_back({"logit_scale", {&logit_scale, 1}, {&logit_scale_grad, 1}, false});
            }
            optimizer.step(blocks, lr, config.weight_decay);
            logit_scale = std::clamp(logit_scale, 0.0, kMaxLogitScale);

            TrainLogRecord rec{step, epoch, g.loss, lr, temperature};
            result.log.push_back(rec);
            log_text += train_log_to_json_line(rec);
            ++step;
        }
        last_good = take_snapshot(all_blocks(), logit_scale);
        last_good_step = step;
        write_checkpoint(step, epoch + 1);
        write_text_file(log_path, log_text);
    }

    gateway.set_logit_scale(logit_scale);
    result.steps_completed = step;
    return result;
}

}  // namespace latent_align
