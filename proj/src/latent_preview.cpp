#include "latent_align/latent_preview.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>

#include "latent_align/error.hpp"
#include "latent_align/util.hpp"

#ifndef LATENT_ALIGN_CONFIG_DIR_DEFAULT
#define LATENT_ALIGN_CONFIG_DIR_DEFAULT "config"
#endif

using json = nlohmann::json;

namespace latent_align {

bool LatentProjection::bounded() const { return std::isfinite(clamp_lo) && std::isfinite(clamp_hi); }

void validate_projection(const LatentProjection & p) {
    for (const auto & row : p.weights) {
        for (double w : row) {
            if (!std::isfinite(w)) throw config_error("projection weights must be finite");
        }
    }
    for (double b : p.bias) {
        if (!std::isfinite(b)) throw config_error("projection bias must be finite");
    }
    if (std::isnan(p.clamp_lo) || std::isnan(p.clamp_hi) || !(p.clamp_lo < p.clamp_hi)) {
        throw config_error("projection clamp bounds need lo < hi");
    }
    if (!std::isfinite(p.pre_scale) || p.pre_scale == 0.0) {
        throw config_error("projection pre_scale must be finite and nonzero");
    }
}

RgbImage latent_to_rgb(const LatentFrame & frame, const LatentProjection & proj) {
    if (frame.shape.channels != 4) {
        throw argument_error("latent_to_rgb needs 4 latent channels, got " + std::to_string(frame.shape.channels));
    }
    if (frame.data.size() != frame.shape.elements()) {
        throw argument_error("latent frame data length does not match its shape");
    }
    const int h = frame.shape.height;
    const int w = frame.shape.width;
    const size_t plane = static_cast<size_t>(h) * w;
    RgbImage out(h, w);
    const bool bounded = proj.bounded();
    const double span = proj.clamp_hi - proj.clamp_lo;

    for (size_t i = 0; i < plane; ++i) {
        double z[4];
        for (int c = 0; c < 4; ++c) {
            z[c] = proj.pre_scale * static_cast<double>(frame.data[c * plane + i]);
        }
        for (int r = 0; r < 3; ++r) {
            double v = proj.bias[r];
            for (int c = 0; c < 4; ++c) {
                v += proj.weights[r][c] * z[c];
            }
            if (bounded) {
                v = (std::clamp(v, proj.clamp_lo, proj.clamp_hi) - proj.clamp_lo) / span;
            } else {
                v = std::clamp(v, proj.clamp_lo, proj.clamp_hi);
            }
            out.data[r * plane + i] = static_cast<float>(v);
        }
    }
    return out;
}

static json bound_to_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json projection_to_json(const LatentProjection & p) {
    json weights = json::array();
    for (const auto & row : p.weights) {
        for (double w : row) weights.push_back(w);
    }
    return json{{"tag", p.tag},
                {"weights", weights},
                {"bias", {p.bias[0], p.bias[1], p.bias[2]}},
                {"clamp", {bound_to_json(p.clamp_lo), bound_to_json(p.clamp_hi)}},
                {"pre_scale", p.pre_scale}};
}

LatentProjection projection_from_json(const json & j) {
    LatentProjection p;
    try {
        const auto weights = j.at("weights").get<std::vector<double>>();
        if (weights.size() != 12) {
            throw config_error("projection weights must hold 12 values (3x4 row-major), got " +
                               std::to_string(weights.size()));
        }
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 4; ++c) p.weights[r][c] = weights[r * 4 + c];
        }
        const auto bias = j.at("bias").get<std::vector<double>>();
        if (bias.size() != 3) {
            throw config_error("projection bias must hold 3 values, got " + std::to_string(bias.size()));
        }
        std::copy(bias.begin(), bias.end(), p.bias.begin());
        const auto & clamp = j.at("clamp");
        if (!clamp.is_array() || clamp.size() != 2) {
            throw config_error("projection clamp must be [lo, hi]");
        }
        p.clamp_lo = clamp[0].is_null() ? -std::numeric_limits<double>::infinity() : clamp[0].get<double>();
        p.clamp_hi = clamp[1].is_null() ? std::numeric_limits<double>::infinity() : clamp[1].get<double>();
        p.pre_scale = j.value("pre_scale", 1.0);
        p.tag = j.value("tag", std::string{});
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid projection config: ") + e.what());
    }
    validate_projection(p);
    return p;
}

LatentProjection load_projection(const std::filesystem::path & path) {
    if (!std::filesystem::exists(path)) {
        throw config_error("projection config '" + path.string() + "' not found");
    }
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception & e) {
        throw config_error("projection config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return projection_from_json(j);
}

void save_projection(const LatentProjection & proj, const std::filesystem::path & path) {
    validate_projection(proj);
    write_text_file(path, projection_to_json(proj).dump(2) + "\n");
}

std::filesystem::path default_config_dir() {
    if (const char * env = std::getenv("LATENT_ALIGN_CONFIG_DIR"); env && *env) {
        return env;
    }
    return LATENT_ALIGN_CONFIG_DIR_DEFAULT;
}

LatentProjection default_projection() { return load_projection(default_config_dir() / "latent_projection.json"); }

}  // namespace latent_align
