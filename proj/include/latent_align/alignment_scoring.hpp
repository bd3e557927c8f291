#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latent_align/image.hpp"
#include "latent_align/latent_preview.hpp"
#include "latent_align/latent_store.hpp"

namespace latent_align {

inline constexpr double kUnitNormTolerance = 1e-5;
inline constexpr double kScoreTolerance = 1e-6;

// How an RGB image reaches the image tower: optional bilinear resize to a square
// input, then per-channel (x - mean) / std.
struct PreprocessRecipe {
    enum class Resize { none, bilinear };

    int input_size = 0;  // 0 keeps the native resolution
    Resize resize = Resize::bilinear;
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};
    int max_tokens = 77;  // prompts are truncated to this many tokens

    bool operator==(const PreprocessRecipe &) const = default;
};

nlohmann::json preprocess_to_json(const PreprocessRecipe & recipe);
PreprocessRecipe preprocess_from_json(const nlohmann::json & j);

// Half-pixel-centre bilinear resize (align_corners = false).
RgbImage resize_bilinear(const RgbImage & image, int height, int width);

// Resize + normalize, flattened in (c, y, x) order.
std::vector<double> preprocess_image(const RgbImage & image, const PreprocessRecipe & recipe);

class EmbeddingVector {
public:
    // Throws argument_error unless the vector has unit L2 norm within kUnitNormTolerance.
    explicit EmbeddingVector(std::vector<double> values);
    static EmbeddingVector normalized(std::vector<double> raw);

    const std::vector<double> & values() const { return values_; }
    size_t dim() const { return values_.size(); }
    double dot(const EmbeddingVector & other) const;

    bool operator==(const EmbeddingVector &) const = default;

private:
    std::vector<double> values_;
};

struct AlignmentScore {
    double value = 0.0;
    std::optional<int> step;  // empty = FINAL (decoded image)

    bool is_final() const { return !step.has_value(); }
};

// Twin-tower encoder. Implementations must emit unit vectors of embed_dim().
class EncoderGateway {
public:
    virtual ~EncoderGateway() = default;

    virtual std::vector<double> embed_text(std::string_view prompt) const = 0;
    // Receives the already preprocessed image (see preprocess_image).
    virtual std::vector<double> embed_image(std::span<const double> pixels) const = 0;

    virtual int embed_dim() const = 0;
    virtual const PreprocessRecipe & preprocess() const = 0;
    virtual std::string checkpoint_tag() const = 0;
    // False when concurrent inference calls are unsafe; see make_concurrent_safe.
    virtual bool thread_safe() const { return true; }
};

// Wraps single-threaded gateways so calls are serialized; thread-safe ones are returned as is.
std::shared_ptr<const EncoderGateway> make_concurrent_safe(std::shared_ptr<const EncoderGateway> gateway);

EmbeddingVector encode_text(const EncoderGateway & gateway, std::string_view prompt);
EmbeddingVector encode_image(const EncoderGateway & gateway, const RgbImage & image);

AlignmentScore score_embeddings(const EmbeddingVector & text, const EmbeddingVector & image,
                                std::optional<int> step = std::nullopt);

// S_final: cosine of the prompt with a decoded image.
AlignmentScore s_final(const EncoderGateway & gateway, const RgbImage & image, std::string_view prompt);
AlignmentScore s_final(const EncoderGateway & gateway, const RgbImage & image, const EmbeddingVector & text);

// S_latent: s_final applied to the projected preview of a latent frame.
AlignmentScore s_latent(const EncoderGateway & gateway, const LatentFrame & frame, const LatentProjection & proj,
                        std::string_view prompt);
AlignmentScore s_latent(const EncoderGateway & gateway, const LatentFrame & frame, const LatentProjection & proj,
                        const EmbeddingVector & text);

// Indices ordered by descending score; equal scores keep the lower index first.
std::vector<size_t> rank_candidates(std::span<const double> scores);
std::vector<size_t> rank_candidates(std::span<const AlignmentScore> scores);

// Line-delimited score dump record.
struct ScoreRecord {
    std::string sample_id;
    std::optional<int> step;  // empty = final image
    std::string prompt_id;
    double score = 0.0;
};
std::string score_record_to_json_line(const ScoreRecord & record);

// Builds a gateway from a config file ({"kind": "toy" | "http", ...}).
std::shared_ptr<EncoderGateway> load_gateway(const std::filesystem::path & path);
std::shared_ptr<EncoderGateway> gateway_from_json(const nlohmann::json & config,
                                                  const std::filesystem::path & base_dir = {});

}  // namespace latent_align
