#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "latent_align/alignment_scoring.hpp"

namespace latent_align {

// A view of one parameter tensor and its gradient accumulator.
struct ParameterBlock {
    std::string name;
    std::span<double> values;
    std::span<double> grads;
    bool decay = true;  // subject to weight decay
};

// Gateway whose towers can be differentiated. Forward calls cache activations for the
// matching backward call; rows of every embedding matrix are unit vectors.
class TrainableGateway : public EncoderGateway {
public:
    virtual Eigen::MatrixXd forward_images(const std::vector<std::vector<double>> & pixels) = 0;
    virtual void backward_images(const Eigen::MatrixXd & grad_embeddings) = 0;
    virtual Eigen::MatrixXd forward_texts(const std::vector<std::string> & prompts) = 0;
    virtual void backward_texts(const Eigen::MatrixXd & grad_embeddings) = 0;

    virtual std::vector<ParameterBlock> image_parameters() = 0;
    virtual std::vector<ParameterBlock> text_parameters() = 0;
    virtual void zero_grad() = 0;

    // ln(1 / temperature) the tower pair was pretrained with.
    virtual double logit_scale() const = 0;
    virtual void set_logit_scale(double value) = 0;
    virtual void set_checkpoint_tag(std::string tag) = 0;

    // Writes a config file that load_gateway() accepts.
    virtual void save(const std::filesystem::path & path) const = 0;
};

}  // namespace latent_align
