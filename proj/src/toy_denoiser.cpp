#include "latent_align/toy_denoiser.hpp"

#include <cmath>

#include "latent_align/error.hpp"

using json = nlohmann::json;

namespace latent_align {

namespace {
constexpr int64_t kDecoySeedOffset = 1000003;
}

TrajectoryShape parse_trajectory_shape(std::string_view name) {
    if (name == "noisy") return TrajectoryShape::noisy;
    if (name == "monotone") return TrajectoryShape::monotone;
    if (name == "crossing") return TrajectoryShape::crossing;
    throw config_error("unknown trajectory shape '" + std::string(name) + "'");
}

std::string_view trajectory_shape_name(TrajectoryShape shape) {
    switch (shape) {
        case TrajectoryShape::noisy: return "noisy";
        case TrajectoryShape::monotone: return "monotone";
        case TrajectoryShape::crossing: return "crossing";
    }
    return "noisy";
}

ToyDenoiser::ToyDenoiser(ToyWorldConfig world, int total_steps, TrajectoryShape shape, LatentProjection decoder,
                         Dtype dtype)
    : world_(world), total_steps_(total_steps), shape_(shape), decoder_(std::move(decoder)), dtype_(dtype) {
    if (total_steps_ < 1) throw config_error("toy denoiser needs T >= 1");
    validate_projection(decoder_);
}

ToyDenoiser::Candidate ToyDenoiser::make_candidate(const std::string & prompt, int64_t seed) const {
    const Eigen::VectorXd code = world_.semantic_code(prompt);
    Candidate c;
    c.target = world_.target_latent(code, seed);
    switch (shape_) {
        case TrajectoryShape::noisy: c.start = world_.noise_latent(seed); break;
        case TrajectoryShape::monotone: c.start = Eigen::VectorXd::Zero(world_.latent_size()); break;
        case TrajectoryShape::crossing: c.start = world_.target_latent(code, seed + kDecoySeedOffset); break;
    }
    return c;
}

LatentFrame ToyDenoiser::compose(const Candidate & c, int step) const {
    const double a = static_cast<double>(step) / total_steps_;
    Eigen::VectorXd z = a * c.target;
    if (shape_ != TrajectoryShape::monotone) z += std::sqrt(std::max(0.0, 1.0 - a * a)) * c.start;
    return quantized(world_.to_frame(z, step, dtype_));
}

DenoiseState ToyDenoiser::init(const std::string & prompt, int64_t seed) {
    auto cand = std::make_shared<Candidate>(make_candidate(prompt, seed));
    DenoiseState st;
    st.prompt = prompt;
    st.seed = seed;
    st.step = 0;
    st.frame = compose(*cand, 0);
    st.backend_data = cand;
    return st;
}

LatentFrame ToyDenoiser::step(DenoiseState & state) {
    if (state.step >= total_steps_) {
        throw argument_error("candidate already completed all " + std::to_string(total_steps_) + " iterations");
    }
    const auto * cand = static_cast<const Candidate *>(state.backend_data.get());
    if (!cand) throw argument_error("state was not created by this backend");
    state.step += 1;
    state.frame = compose(*cand, state.step);
    return state.frame;
}

RgbImage ToyDenoiser::finalize(const DenoiseState & state) {
    if (state.step != total_steps_) {
        throw argument_error("finalize needs a completed candidate (step " + std::to_string(state.step) + " of " +
                             std::to_string(total_steps_) + ")");
    }
    return latent_to_rgb(state.frame, decoder_);
}

LatentFrame ToyDenoiser::frame_at(const std::string & prompt, int64_t seed, int step) const {
    return compose(make_candidate(prompt, seed), step);
}

std::unique_ptr<DenoiserBackend> backend_from_json(const json & config, const std::filesystem::path & base_dir) {
    const auto kind = config.value("kind", std::string());
    if (kind.empty()) {
        throw config_error("no generation backend configured (set backend.kind, e.g. \"toy\")");
    }
    if (kind != "toy") {
        throw config_error("generation backend '" + kind +
                           "' is not available in this build; only the \"toy\" backend ships with the toolkit");
    }
    try {
        const auto world = toy_world_from_json(config.value("world", json::object()));
        LatentProjection decoder;
        if (config.contains("decoder_projection")) {
            std::filesystem::path p = config.at("decoder_projection").get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            decoder = load_projection(p);
        } else {
            decoder = default_projection();
        }
        return std::make_unique<ToyDenoiser>(world, config.value("T", 50),
                                             parse_trajectory_shape(config.value("shape", std::string("noisy"))),
                                             decoder, parse_dtype(config.value("dtype", std::string("f16"))));
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid toy backend config: ") + e.what());
    }
}

}  // namespace latent_align
