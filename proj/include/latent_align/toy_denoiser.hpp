#pragma once

#include <memory>

#include <json.hpp>

#include "latent_align/bon_orchestrator.hpp"
#include "latent_align/toy_world.hpp"

namespace latent_align {

// Shape of the latent path from step 0 to the candidate's target z*:
//   noisy     z_t = a z* + sqrt(1 - a^2) eps_seed      (a = t / T)
//   monotone  z_t = a z*                               (no noise; previews only sharpen)
//   crossing  z_t = a z* + sqrt(1 - a^2) d_seed        (d is another seed's target, so early
//                                                        rankings follow the decoy)
enum class TrajectoryShape { noisy, monotone, crossing };

TrajectoryShape parse_trajectory_shape(std::string_view name);
std::string_view trajectory_shape_name(TrajectoryShape shape);

class ToyDenoiser final : public DenoiserBackend {
public:
    ToyDenoiser(ToyWorldConfig world, int total_steps, TrajectoryShape shape, LatentProjection decoder,
                Dtype dtype = Dtype::f32);

    int total_steps() const override { return total_steps_; }
    DenoiseState init(const std::string & prompt, int64_t seed) override;
    LatentFrame step(DenoiseState & state) override;
    // Decodes with the configured projection (a stand-in for the VAE decoder).
    RgbImage finalize(const DenoiseState & state) override;
    bool thread_safe() const override { return true; }

    const ToyWorld & world() const { return world_; }
    LatentFrame frame_at(const std::string & prompt, int64_t seed, int step) const;

private:
    struct Candidate {
        Eigen::VectorXd target;
        Eigen::VectorXd start;  // noise (noisy), decoy target (crossing) or zeros (monotone)
    };
    Candidate make_candidate(const std::string & prompt, int64_t seed) const;
    LatentFrame compose(const Candidate & c, int step) const;

    ToyWorld world_;
    int total_steps_;
    TrajectoryShape shape_;
    LatentProjection decoder_;
    Dtype dtype_;
};

// {"kind": "toy", "T": 50, "shape": "noisy", "world": {...}, "decoder_projection": path, "dtype": "f16"}
std::unique_ptr<DenoiserBackend> backend_from_json(const nlohmann::json & config,
                                                   const std::filesystem::path & base_dir = {});

}  // namespace latent_align
