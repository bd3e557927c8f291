#include <chrono>

#include "latent_align/alignment_scoring.hpp"
#include "latent_align/error.hpp"
#include "latent_align/http_client.hpp"
#include "latent_align/toy_world.hpp"
#include "latent_align/util.hpp"

using json = nlohmann::json;

namespace latent_align {

namespace {

// Remote dual encoder. POST <endpoint>/embed/text {"text"} and
// POST <endpoint>/embed/image {"shape": [3, H, W], "pixels": [...]}; both reply {"embedding": [...]}.
class HttpEncoderGateway final : public EncoderGateway {
public:
    HttpEncoderGateway(std::string endpoint, std::string tag, int embed_dim, PreprocessRecipe recipe,
                       std::chrono::milliseconds timeout, bool thread_safe)
        : endpoint_(std::move(endpoint)), tag_(std::move(tag)), embed_dim_(embed_dim), recipe_(recipe),
          timeout_(timeout), thread_safe_(thread_safe) {}

    std::vector<double> embed_text(std::string_view prompt) const override {
        const auto reply = http_post_json(endpoint_ + "/embed/text", json{{"text", prompt}}, timeout_);
        return reply.at("embedding").get<std::vector<double>>();
    }

    std::vector<double> embed_image(std::span<const double> pixels) const override {
        const int side = recipe_.input_size;
        json body{{"shape", {3, side, side}}, {"pixels", std::vector<double>(pixels.begin(), pixels.end())}};
        const auto reply = http_post_json(endpoint_ + "/embed/image", body, timeout_);
        return reply.at("embedding").get<std::vector<double>>();
    }

    int embed_dim() const override { return embed_dim_; }
    const PreprocessRecipe & preprocess() const override { return recipe_; }
    std::string checkpoint_tag() const override { return tag_; }
    bool thread_safe() const override { return thread_safe_; }

private:
    std::string endpoint_;
    std::string tag_;
    int embed_dim_;
    PreprocessRecipe recipe_;
    std::chrono::milliseconds timeout_;
    bool thread_safe_;
};

}  // namespace

std::shared_ptr<EncoderGateway> gateway_from_json(const json & config, const std::filesystem::path & base_dir) {
    const auto kind = config.value("kind", std::string());
    if (kind == "toy") {
        return std::make_shared<ToyGateway>(ToyGateway::from_json(config, base_dir));
    }
    if (kind == "http") {
        try {
            PreprocessRecipe recipe = preprocess_from_json(config.value("preprocess", json::object()));
            recipe.input_size = config.at("input_size").get<int>();
            if (config.contains("normalization")) {
                const auto & n = config.at("normalization");
                recipe.mean = n.at("mean").get<std::array<double, 3>>();
                recipe.stddev = n.at("std").get<std::array<double, 3>>();
            }
            if (recipe.input_size <= 0) throw config_error("http gateway needs input_size > 0");
            return std::make_shared<HttpEncoderGateway>(
                config.at("endpoint").get<std::string>(), config.value("checkpoint_tag", std::string("http")),
                config.at("embed_dim").get<int>(), recipe,
                std::chrono::milliseconds(static_cast<int64_t>(config.value("timeout_s", 30.0) * 1000)),
                config.value("thread_safe", false));
        } catch (const json::exception & e) {
            throw config_error(std::string("invalid http gateway config: ") + e.what());
        }
    }
    throw config_error("unknown gateway kind '" + kind + "' (expected toy or http)");
}

std::shared_ptr<EncoderGateway> load_gateway(const std::filesystem::path & path) {
    if (!std::filesystem::exists(path)) {
        throw config_error("gateway config '" + path.string() + "' not found");
    }
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception & e) {
        throw config_error("gateway config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return gateway_from_json(j, path.parent_path());
}

}  // namespace latent_align
