#pragma once

// A small deterministic stand-in for a diffusion model plus a dual encoder, sized for
// desk-scale experiments and tests.
//
// Prompts map to unit "semantic codes" (normalized bag of hashed token vectors). A fixed
// generator with decaying singular values maps a code to a clean target latent; each seed
// adds a small variation. The toy denoiser blends seeded Gaussian noise into that target.
// The toy gateway's text tower reads the semantic code; its image tower is a linear map on
// the preprocessed preview, "pretrained" by ridge regression on clean previews only.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latent_align/latent_preview.hpp"
#include "latent_align/latent_store.hpp"
#include "latent_align/trainable_gateway.hpp"

namespace latent_align {

struct ToyWorldConfig {
    uint64_t seed = 7;
    int embed_dim = 32;
    LatentShape latent{4, 8, 8};
    double target_scale = 0.6;      // per-element std of clean target latents
    double singular_decay = 0.88;   // ratio between successive generator singular values
    double variation_scale = 0.05;  // per-seed deviation from the prompt's target

    bool operator==(const ToyWorldConfig &) const = default;
};

nlohmann::json toy_world_to_json(const ToyWorldConfig & config);
ToyWorldConfig toy_world_from_json(const nlohmann::json & j);

std::vector<std::string> tokenize(std::string_view prompt, int max_tokens);

class ToyWorld {
public:
    explicit ToyWorld(ToyWorldConfig config);

    const ToyWorldConfig & config() const { return config_; }
    int latent_size() const { return static_cast<int>(config_.latent.elements()); }

    Eigen::VectorXd token_vector(std::string_view token) const;
    // Unit vector; prompts without tokens hash the whole string.
    Eigen::VectorXd semantic_code(std::string_view prompt, int max_tokens = 77) const;
    Eigen::VectorXd target_latent(const Eigen::VectorXd & code, int64_t seed) const;
    Eigen::VectorXd noise_latent(int64_t seed) const;

    LatentFrame to_frame(const Eigen::VectorXd & latent, int step, Dtype dtype = Dtype::f32) const;

private:
    ToyWorldConfig config_;
    Eigen::MatrixXd generator_;  // latent_size x embed_dim
};

// Prompt grammar: "<count> <color> <subject> <background>", e.g. "three red dogs on a beach".
// Slot order matches the four corruption dimensions.
enum class PromptSlot { color = 0, count = 1, background = 2, subject = 3 };

struct ToyPromptGrammar {
    static const std::array<std::vector<std::string>, 4> & vocabulary();

    static std::string sample(std::mt19937_64 & rng);
    // Replaces the slot's phrase with a different one from the same list; nullopt when the
    // prompt has no recognizable phrase for that slot.
    static std::optional<std::string> swap_slot(std::string_view prompt, PromptSlot slot, uint64_t salt);
};

struct ToyGatewayOptions {
    PreprocessRecipe preprocess{};  // input_size 0 = latent resolution
    double initial_temperature = 0.07;
    int fit_samples = 3000;
    double ridge = 1e-3;
    uint64_t fit_seed = 11;
    // Without a bias the image tower is linear, so embeddings ignore the preview's scale.
    bool fit_bias = true;
};

class ToyGateway final : public TrainableGateway {
public:
    // Untrained: image tower zero-initialized, text projection identity.
    ToyGateway(ToyWorldConfig world, PreprocessRecipe recipe, std::string tag);

    // Clean-image pretraining: ridge-regress preview pixels onto semantic codes.
    static ToyGateway pretrained(const ToyWorldConfig & world, const LatentProjection & projection,
                                 const ToyGatewayOptions & options, std::string tag = "toy-pretrained");

    std::vector<double> embed_text(std::string_view prompt) const override;
    std::vector<double> embed_image(std::span<const double> pixels) const override;
    int embed_dim() const override { return world_.config().embed_dim; }
    const PreprocessRecipe & preprocess() const override { return recipe_; }
    std::string checkpoint_tag() const override { return tag_; }

    Eigen::MatrixXd forward_images(const std::vector<std::vector<double>> & pixels) override;
    void backward_images(const Eigen::MatrixXd & grad_embeddings) override;
    Eigen::MatrixXd forward_texts(const std::vector<std::string> & prompts) override;
    void backward_texts(const Eigen::MatrixXd & grad_embeddings) override;
    std::vector<ParameterBlock> image_parameters() override;
    std::vector<ParameterBlock> text_parameters() override;
    void zero_grad() override;
    double logit_scale() const override { return logit_scale_; }
    void set_logit_scale(double value) override { logit_scale_ = value; }
    void set_checkpoint_tag(std::string tag) override { tag_ = std::move(tag); }
    void save(const std::filesystem::path & path) const override;

    nlohmann::json to_json() const;
    static ToyGateway from_json(const nlohmann::json & j, const std::filesystem::path & base_dir = {});

    const ToyWorld & world() const { return world_; }
    int input_dim() const;
    const Eigen::MatrixXd & image_weight() const { return image_weight_; }
    const Eigen::VectorXd & image_bias() const { return image_bias_; }
    const Eigen::MatrixXd & text_projection() const { return text_proj_; }

private:
    ToyWorld world_;
    PreprocessRecipe recipe_;
    std::string tag_;
    Eigen::MatrixXd text_proj_;     // D x D
    Eigen::MatrixXd image_weight_;  // D x input_dim
    Eigen::VectorXd image_bias_;    // D
    double logit_scale_;

    Eigen::MatrixXd text_proj_grad_;
    Eigen::MatrixXd image_weight_grad_;
    Eigen::VectorXd image_bias_grad_;

    // activations cached by the last forward pass
    Eigen::MatrixXd image_inputs_, image_pre_, image_out_;
    Eigen::MatrixXd text_inputs_, text_pre_, text_out_;
};

}  // namespace latent_align
