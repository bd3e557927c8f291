#include "latent_align/alignment_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latent_align/error.hpp"

using json = nlohmann::json;

namespace latent_align {

json preprocess_to_json(const PreprocessRecipe & r) {
    return json{{"input_size", r.input_size},
                {"resize", r.resize == PreprocessRecipe::Resize::bilinear ? "bilinear" : "none"},
                {"mean", r.mean},
                {"std", r.stddev},
                {"max_tokens", r.max_tokens}};
}

PreprocessRecipe preprocess_from_json(const json & j) {
    PreprocessRecipe r;
    try {
        r.input_size = j.value("input_size", 0);
        const auto resize = j.value("resize", std::string("bilinear"));
        if (resize == "bilinear") {
            r.resize = PreprocessRecipe::Resize::bilinear;
        } else if (resize == "none") {
            r.resize = PreprocessRecipe::Resize::none;
        } else {
            throw config_error("unknown resize mode '" + resize + "'");
        }
        if (j.contains("mean")) r.mean = j.at("mean").get<std::array<double, 3>>();
        if (j.contains("std")) r.stddev = j.at("std").get<std::array<double, 3>>();
        r.max_tokens = j.value("max_tokens", 77);
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid preprocess recipe: ") + e.what());
    }
    if (r.input_size < 0 || r.max_tokens <= 0) {
        throw config_error("preprocess input_size must be >= 0 and max_tokens > 0");
    }
    for (double s : r.stddev) {
        if (!(s > 0.0)) throw config_error("preprocess std entries must be > 0");
    }
    return r;
}

RgbImage resize_bilinear(const RgbImage & src, int height, int width) {
    if (height <= 0 || width <= 0) {
        throw argument_error("resize target must be positive");
    }
    if (src.height == height && src.width == width) {
        return src;
    }
    RgbImage out(height, width);
    const double sy = static_cast<double>(src.height) / height;
    const double sx = static_cast<double>(src.width) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
            const int x0 = std::min(static_cast<int>(fx), src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = src.at(c, y0, x0) * (1.0 - wx) + src.at(c, y0, x1) * wx;
                const double bottom = src.at(c, y1, x0) * (1.0 - wx) + src.at(c, y1, x1) * wx;
                out.at(c, y, x) = static_cast<float>(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    return out;
}

std::vector<double> preprocess_image(const RgbImage & image, const PreprocessRecipe & recipe) {
    const bool resize = recipe.input_size > 0 && recipe.resize == PreprocessRecipe::Resize::bilinear;
    if (recipe.input_size > 0 && !resize &&
        (image.height != recipe.input_size || image.width != recipe.input_size)) {
        throw argument_error("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                             " but the recipe expects " + std::to_string(recipe.input_size) + " without resizing");
    }
    const RgbImage sized = resize ? resize_bilinear(image, recipe.input_size, recipe.input_size) : image;
    const size_t plane = static_cast<size_t>(sized.height) * sized.width;
    std::vector<double> out(sized.data.size());
    for (size_t c = 0; c < 3; ++c) {
        for (size_t i = 0; i < plane; ++i) {
            out[c * plane + i] = (sized.data[c * plane + i] - recipe.mean[c]) / recipe.stddev[c];
        }
    }
    return out;
}

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    double sq = 0.0;
    for (double v : values_) {
        if (!std::isfinite(v)) throw argument_error("embedding contains a non-finite value");
        sq += v * v;
    }
    if (values_.empty() || std::fabs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) {
        throw argument_error("embedding is not unit norm (|v| = " + std::to_string(std::sqrt(sq)) + ")");
    }
}

EmbeddingVector EmbeddingVector::normalized(std::vector<double> raw) {
    double sq = 0.0;
    for (double v : raw) sq += v * v;
    const double n = std::sqrt(sq);
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw argument_error("cannot normalize a zero or non-finite vector");
    }
    for (double & v : raw) v /= n;
    return EmbeddingVector(std::move(raw));
}

double EmbeddingVector::dot(const EmbeddingVector & other) const {
    if (other.dim() != dim()) {
        throw argument_error("embedding dimensions differ: " + std::to_string(dim()) + " vs " +
                             std::to_string(other.dim()));
    }
    return std::inner_product(values_.begin(), values_.end(), other.values_.begin(), 0.0);
}

namespace {

class SerializedGateway final : public EncoderGateway {
public:
    explicit SerializedGateway(std::shared_ptr<const EncoderGateway> inner) : inner_(std::move(inner)) {}

    std::vector<double> embed_text(std::string_view prompt) const override {
        std::lock_guard lock(mutex_);
        return inner_->embed_text(prompt);
    }
    std::vector<double> embed_image(std::span<const double> pixels) const override {
        std::lock_guard lock(mutex_);
        return inner_->embed_image(pixels);
    }
    int embed_dim() const override { return inner_->embed_dim(); }
    const PreprocessRecipe & preprocess() const override { return inner_->preprocess(); }
    std::string checkpoint_tag() const override { return inner_->checkpoint_tag(); }
    bool thread_safe() const override { return true; }

private:
    std::shared_ptr<const EncoderGateway> inner_;
    mutable std::mutex mutex_;
};

template <typename F>
EmbeddingVector checked_embedding(const EncoderGateway & gateway, const char * tower, F && call) {
    std::vector<double> raw;
    try {
        raw = call();
    } catch (const Error & e) {
        if (e.kind() == ErrorKind::transport || e.kind() == ErrorKind::backend) throw;
        throw backend_error("gateway '" + gateway.checkpoint_tag() + "' " + tower + " tower failed: " + e.what());
    } catch (const std::exception & e) {
        throw backend_error("gateway '" + gateway.checkpoint_tag() + "' " + tower + " tower failed: " + e.what());
    }
    if (static_cast<int>(raw.size()) != gateway.embed_dim()) {
        throw backend_error("gateway '" + gateway.checkpoint_tag() + "' " + tower + " tower returned " +
                            std::to_string(raw.size()) + " values, expected " + std::to_string(gateway.embed_dim()));
    }
    try {
        return EmbeddingVector(std::move(raw));
    } catch (const Error & e) {
        throw backend_error("gateway '" + gateway.checkpoint_tag() + "' " + tower + " tower: " + e.what());
    }
}

}  // namespace

std::shared_ptr<const EncoderGateway> make_concurrent_safe(std::shared_ptr<const EncoderGateway> gateway) {
    if (!gateway) throw argument_error("no encoder gateway");
    if (gateway->thread_safe()) {
        return gateway;
    }
    return std::make_shared<SerializedGateway>(std::move(gateway));
}

EmbeddingVector encode_text(const EncoderGateway & gateway, std::string_view prompt) {
    if (prompt.empty()) {
        throw argument_error("cannot encode an empty prompt");
    }
    return checked_embedding(gateway, "text", [&] { return gateway.embed_text(prompt); });
}

EmbeddingVector encode_image(const EncoderGateway & gateway, const RgbImage & image) {
    const auto pixels = preprocess_image(image, gateway.preprocess());
    return checked_embedding(gateway, "image", [&] { return gateway.embed_image(pixels); });
}

AlignmentScore score_embeddings(const EmbeddingVector & text, const EmbeddingVector & image, std::optional<int> step) {
    const double v = text.dot(image);
    if (!std::isfinite(v) || std::fabs(v) > 1.0 + kScoreTolerance) {
        throw backend_error("alignment score out of range: " + std::to_string(v));
    }
    return {v, step};
}

AlignmentScore s_final(const EncoderGateway & gateway, const RgbImage & image, std::string_view prompt) {
    return s_final(gateway, image, encode_text(gateway, prompt));
}

AlignmentScore s_final(const EncoderGateway & gateway, const RgbImage & image, const EmbeddingVector & text) {
    return score_embeddings(text, encode_image(gateway, image));
}

AlignmentScore s_latent(const EncoderGateway & gateway, const LatentFrame & frame, const LatentProjection & proj,
                        std::string_view prompt) {
    return s_latent(gateway, frame, proj, encode_text(gateway, prompt));
}

AlignmentScore s_latent(const EncoderGateway & gateway, const LatentFrame & frame, const LatentProjection & proj,
                        const EmbeddingVector & text) {
    auto score = s_final(gateway, latent_to_rgb(frame, proj), text);
    score.step = frame.step;
    return score;
}

std::vector<size_t> rank_candidates(std::span<const double> scores) {
    if (scores.empty()) {
        throw argument_error("rank_candidates needs at least one score");
    }
    if (std::any_of(scores.begin(), scores.end(), [](double v) { return std::isnan(v); })) {
        throw argument_error("rank_candidates got a NaN score");
    }
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<size_t> rank_candidates(std::span<const AlignmentScore> scores) {
    std::vector<double> values(scores.size());
    std::transform(scores.begin(), scores.end(), values.begin(), [](const AlignmentScore & s) { return s.value; });
    return rank_candidates(std::span<const double>(values));
}

std::string score_record_to_json_line(const ScoreRecord & r) {
    json j{{"sample_id", r.sample_id},
           {"step", r.step ? json(*r.step) : json("final")},
           {"prompt_id", r.prompt_id},
           {"score", r.score}};
    return j.dump() + "\n";
}

}  // namespace latent_align
