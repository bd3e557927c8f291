#pragma once

#include <array>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "latent_align/image.hpp"
#include "latent_align/latent_store.hpp"

namespace latent_align {

// Fixed 4 -> 3 channel affine map producing an RGB-like preview of a latent.
// Output = rescale(clamp(weights * (pre_scale * z) + bias)). When either clamp bound is
// infinite there is no rescaling; with both infinite the map is purely affine.
struct LatentProjection {
    std::array<std::array<double, 4>, 3> weights{};  // [rgb][latent channel]
    std::array<double, 3> bias{};
    double clamp_lo = -1.0;
    double clamp_hi = 1.0;
    // Optional latent scaling applied before the map (e.g. 1/sigma of the VAE); 1.0 means none.
    double pre_scale = 1.0;
    std::string tag;

    bool bounded() const;
    bool operator==(const LatentProjection &) const = default;
};

void validate_projection(const LatentProjection & proj);

RgbImage latent_to_rgb(const LatentFrame & frame, const LatentProjection & proj);

nlohmann::json projection_to_json(const LatentProjection & proj);
LatentProjection projection_from_json(const nlohmann::json & j);
LatentProjection load_projection(const std::filesystem::path & path);
void save_projection(const LatentProjection & proj, const std::filesystem::path & path);

// Directory holding the shipped config files. LATENT_ALIGN_CONFIG_DIR overrides the
// build-time location.
std::filesystem::path default_config_dir();

// Loads <config dir>/latent_projection.json.
LatentProjection default_projection();

}  // namespace latent_align
