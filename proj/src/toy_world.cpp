#include "latent_align/toy_world.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "latent_align/error.hpp"
#include "latent_align/util.hpp"

using json = nlohmann::json;

namespace latent_align {

json toy_world_to_json(const ToyWorldConfig & c) {
    return json{{"seed", c.seed},
                {"embed_dim", c.embed_dim},
                {"latent_shape", {c.latent.channels, c.latent.height, c.latent.width}},
                {"target_scale", c.target_scale},
                {"singular_decay", c.singular_decay},
                {"variation_scale", c.variation_scale}};
}

ToyWorldConfig toy_world_from_json(const json & j) {
    ToyWorldConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        if (j.contains("latent_shape")) {
            const auto s = j.at("latent_shape").get<std::vector<int>>();
            if (s.size() != 3) throw config_error("toy world latent_shape must be [C, H, W]");
            c.latent = {s[0], s[1], s[2]};
        }
        c.target_scale = j.value("target_scale", c.target_scale);
        c.singular_decay = j.value("singular_decay", c.singular_decay);
        c.variation_scale = j.value("variation_scale", c.variation_scale);
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid toy world config: ") + e.what());
    }
    if (c.embed_dim < 2 || c.latent.channels != kLatentChannels || c.latent.height <= 0 || c.latent.width <= 0) {
        throw config_error("toy world needs embed_dim >= 2 and a (4, H, W) latent shape");
    }
    if (c.embed_dim > static_cast<int>(c.latent.elements())) {
        throw config_error("toy world embed_dim cannot exceed the latent size");
    }
    if (!(c.singular_decay > 0.0 && c.singular_decay <= 1.0) || !(c.target_scale > 0.0) || c.variation_scale < 0.0) {
        throw config_error("toy world scales out of range");
    }
    return c;
}

std::vector<std::string> tokenize(std::string_view prompt, int max_tokens) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : prompt) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    if (static_cast<int>(tokens.size()) > max_tokens) tokens.resize(max_tokens);
    return tokens;
}

namespace {

Eigen::VectorXd gaussian_vector(uint64_t seed, int n) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = normal(rng);
    return v;
}

Eigen::MatrixXd orthonormal_columns(int rows, int cols, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd a(rows, cols);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) a(r, c) = normal(rng);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    return qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
}

}  // namespace

ToyWorld::ToyWorld(ToyWorldConfig config) : config_(config) {
    const int d = config_.embed_dim;
    const int n = latent_size();
    const Eigen::MatrixXd u = orthonormal_columns(n, d, config_.seed * 2 + 1);
    const Eigen::MatrixXd v = orthonormal_columns(d, d, config_.seed * 2 + 2);
    Eigen::VectorXd sigma(d);
    double sq = 0.0;
    for (int k = 0; k < d; ++k) {
        sigma[k] = std::pow(config_.singular_decay, k);
        sq += sigma[k] * sigma[k];
    }
    // a random unit code then yields per-element std of target_scale
    sigma *= config_.target_scale * std::sqrt(static_cast<double>(n) * d / sq);
    generator_ = u * sigma.asDiagonal() * v.transpose();
}

Eigen::VectorXd ToyWorld::token_vector(std::string_view token) const {
    return gaussian_vector(fnv1a64(token, config_.seed), config_.embed_dim);
}

Eigen::VectorXd ToyWorld::semantic_code(std::string_view prompt, int max_tokens) const {
    const auto tokens = tokenize(prompt, max_tokens);
    Eigen::VectorXd bag = Eigen::VectorXd::Zero(config_.embed_dim);
    if (tokens.empty()) {
        bag = gaussian_vector(fnv1a64(prompt, config_.seed ^ 0x5bd1e995), config_.embed_dim);
    }
    for (const auto & t : tokens) bag += token_vector(t);
    return bag.normalized();
}

Eigen::VectorXd ToyWorld::target_latent(const Eigen::VectorXd & code, int64_t seed) const {
    Eigen::VectorXd z = generator_ * code;
    if (config_.variation_scale > 0.0) {
        z += config_.variation_scale * gaussian_vector(fnv1a64("variation", static_cast<uint64_t>(seed) ^ config_.seed),
                                                       latent_size());
    }
    return z;
}

Eigen::VectorXd ToyWorld::noise_latent(int64_t seed) const {
    return gaussian_vector(fnv1a64("noise", static_cast<uint64_t>(seed) ^ config_.seed), latent_size());
}

LatentFrame ToyWorld::to_frame(const Eigen::VectorXd & latent, int step, Dtype dtype) const {
    LatentFrame f;
    f.step = step;
    f.shape = config_.latent;
    f.dtype = dtype;
    f.data.resize(latent.size());
    for (Eigen::Index i = 0; i < latent.size(); ++i) f.data[i] = static_cast<float>(latent[i]);
    return f;
}

const std::array<std::vector<std::string>, 4> & ToyPromptGrammar::vocabulary() {
    static const std::array<std::vector<std::string>, 4> vocab{{
        {"red", "green", "blue", "yellow", "purple", "orange", "white", "black"},
        {"two", "three", "four", "five", "six", "seven"},
        {"on a beach", "in a forest", "on a table", "in a city street", "on a mountain", "in a kitchen",
         "on a lake", "in a desert"},
        {"dogs", "cats", "birds", "apples", "cars", "horses", "chairs", "boats"},
    }};
    return vocab;
}

std::string ToyPromptGrammar::sample(std::mt19937_64 & rng) {
    const auto & v = vocabulary();
    auto pick = [&](const std::vector<std::string> & list) {
        return list[std::uniform_int_distribution<size_t>(0, list.size() - 1)(rng)];
    };
    const auto count = pick(v[1]);
    const auto color = pick(v[0]);
    const auto subject = pick(v[3]);
    const auto background = pick(v[2]);
    return count + " " + color + " " + subject + " " + background;
}

std::optional<std::string> ToyPromptGrammar::swap_slot(std::string_view prompt, PromptSlot slot, uint64_t salt) {
    const auto & list = vocabulary()[static_cast<size_t>(slot)];
    const std::string text(prompt);
    const std::string padded = " " + text + " ";
    for (size_t i = 0; i < list.size(); ++i) {
        const auto needle = " " + list[i] + " ";
        const auto pos = padded.find(needle);
        if (pos == std::string::npos) continue;
        const size_t offset = 1 + fnv1a64(text, salt) % (list.size() - 1);
        const auto & replacement = list[(i + offset) % list.size()];
        std::string out = padded;
        out.replace(pos + 1, list[i].size(), replacement);
        return trim(out);
    }
    return std::nullopt;
}

ToyGateway::ToyGateway(ToyWorldConfig world, PreprocessRecipe recipe, std::string tag)
    : world_(world), recipe_(recipe), tag_(std::move(tag)), logit_scale_(std::log(1.0 / 0.07)) {
    const int d = world.embed_dim;
    text_proj_ = Eigen::MatrixXd::Identity(d, d);
    image_weight_ = Eigen::MatrixXd::Zero(d, input_dim());
    image_bias_ = Eigen::VectorXd::Zero(d);
    zero_grad();
}

int ToyGateway::input_dim() const {
    const int h = recipe_.input_size > 0 ? recipe_.input_size : world_.config().latent.height;
    const int w = recipe_.input_size > 0 ? recipe_.input_size : world_.config().latent.width;
    return 3 * h * w;
}

ToyGateway ToyGateway::pretrained(const ToyWorldConfig & world_config, const LatentProjection & projection,
                                  const ToyGatewayOptions & options, std::string tag) {
    ToyGateway g(world_config, options.preprocess, std::move(tag));
    g.logit_scale_ = std::log(1.0 / options.initial_temperature);
    const ToyWorld & world = g.world_;
    const int d = world_config.embed_dim;
    const int in = g.input_dim();
    const int n = options.fit_samples;
    if (n < 2) throw config_error("toy gateway pretraining needs fit_samples >= 2");

    std::mt19937_64 rng(options.fit_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x(n, in + 1);
    Eigen::MatrixXd y(n, d);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd code(d);
        for (int k = 0; k < d; ++k) code[k] = normal(rng);
        code.normalize();
        const auto latent = world.target_latent(code, static_cast<int64_t>(rng() >> 1));
        const auto preview = latent_to_rgb(world.to_frame(latent, 0), projection);
        const auto pixels = preprocess_image(preview, g.recipe_);
        for (int j = 0; j < in; ++j) x(i, j) = pixels[j];
        x(i, in) = options.fit_bias ? 1.0 : 0.0;
        y.row(i) = code.transpose();
    }
    Eigen::MatrixXd gram = x.transpose() * x;
    gram.diagonal().head(in).array() += options.ridge * n;
    if (!options.fit_bias) gram(in, in) = 1.0;  // keeps the system regular; the bias solves to 0
    const Eigen::MatrixXd sol = gram.ldlt().solve(x.transpose() * y);  // (in + 1) x d
    g.image_weight_ = sol.topRows(in).transpose();
    g.image_bias_ = sol.row(in).transpose();
    return g;
}

namespace {

std::vector<double> normalized_std(const Eigen::VectorXd & v) {
    const double n = v.norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw backend_error("toy tower produced a degenerate embedding");
    }
    std::vector<double> out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = v[i] / n;
    return out;
}

Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd & m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        if (!(n > 0.0)) throw backend_error("toy tower produced a degenerate embedding");
        out.row(i) /= n;
    }
    return out;
}

// d(normalize(u))^T g = (g - e (e . g)) / |u|, row-wise
Eigen::MatrixXd normalize_backward(const Eigen::MatrixXd & pre, const Eigen::MatrixXd & out,
                                   const Eigen::MatrixXd & grad) {
    Eigen::MatrixXd g(grad.rows(), grad.cols());
    for (Eigen::Index i = 0; i < grad.rows(); ++i) {
        const double n = pre.row(i).norm();
        const double proj = out.row(i).dot(grad.row(i));
        g.row(i) = (grad.row(i) - proj * out.row(i)) / n;
    }
    return g;
}

}  // namespace

std::vector<double> ToyGateway::embed_text(std::string_view prompt) const {
    const Eigen::VectorXd code = world_.semantic_code(prompt, recipe_.max_tokens);
    return normalized_std(text_proj_ * code);
}

std::vector<double> ToyGateway::embed_image(std::span<const double> pixels) const {
    if (static_cast<int>(pixels.size()) != input_dim()) {
        throw argument_error("toy image tower expects " + std::to_string(input_dim()) + " inputs, got " +
                             std::to_string(pixels.size()));
    }
    const Eigen::Map<const Eigen::VectorXd> x(pixels.data(), static_cast<Eigen::Index>(pixels.size()));
    return normalized_std(image_weight_ * x + image_bias_);
}

Eigen::MatrixXd ToyGateway::forward_images(const std::vector<std::vector<double>> & pixels) {
    const int in = input_dim();
    image_inputs_.resize(static_cast<Eigen::Index>(pixels.size()), in);
    for (size_t i = 0; i < pixels.size(); ++i) {
        if (static_cast<int>(pixels[i].size()) != in) {
            throw argument_error("toy image tower expects " + std::to_string(in) + " inputs");
        }
        image_inputs_.row(static_cast<Eigen::Index>(i)) =
            Eigen::Map<const Eigen::RowVectorXd>(pixels[i].data(), in);
    }
    image_pre_ = (image_inputs_ * image_weight_.transpose()).rowwise() + image_bias_.transpose();
    image_out_ = normalize_rows(image_pre_);
    return image_out_;
}

void ToyGateway::backward_images(const Eigen::MatrixXd & grad) {
    const Eigen::MatrixXd gu = normalize_backward(image_pre_, image_out_, grad);
    image_weight_grad_ += gu.transpose() * image_inputs_;
    image_bias_grad_ += gu.colwise().sum().transpose();
}

Eigen::MatrixXd ToyGateway::forward_texts(const std::vector<std::string> & prompts) {
    const int d = embed_dim();
    text_inputs_.resize(static_cast<Eigen::Index>(prompts.size()), d);
    for (size_t i = 0; i < prompts.size(); ++i) {
        text_inputs_.row(static_cast<Eigen::Index>(i)) = world_.semantic_code(prompts[i], recipe_.max_tokens).transpose();
    }
    text_pre_ = text_inputs_ * text_proj_.transpose();
    text_out_ = normalize_rows(text_pre_);
    return text_out_;
}

void ToyGateway::backward_texts(const Eigen::MatrixXd & grad) {
    const Eigen::MatrixXd gu = normalize_backward(text_pre_, text_out_, grad);
    text_proj_grad_ += gu.transpose() * text_inputs_;
}

std::vector<ParameterBlock> ToyGateway::image_parameters() {
    return {
        {"image.weight", {image_weight_.data(), static_cast<size_t>(image_weight_.size())},
         {image_weight_grad_.data(), static_cast<size_t>(image_weight_grad_.size())}, true},
        {"image.bias", {image_bias_.data(), static_cast<size_t>(image_bias_.size())},
         {image_bias_grad_.data(), static_cast<size_t>(image_bias_grad_.size())}, false},
    };
}

std::vector<ParameterBlock> ToyGateway::text_parameters() {
    return {{"text.projection", {text_proj_.data(), static_cast<size_t>(text_proj_.size())},
             {text_proj_grad_.data(), static_cast<size_t>(text_proj_grad_.size())}, true}};
}

void ToyGateway::zero_grad() {
    text_proj_grad_ = Eigen::MatrixXd::Zero(text_proj_.rows(), text_proj_.cols());
    image_weight_grad_ = Eigen::MatrixXd::Zero(image_weight_.rows(), image_weight_.cols());
    image_bias_grad_ = Eigen::VectorXd::Zero(image_bias_.size());
}

namespace {

json matrix_to_json(const Eigen::MatrixXd & m) {
    std::vector<double> v(m.data(), m.data() + m.size());
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", v}};
}

Eigen::MatrixXd matrix_from_json(const json & j, Eigen::Index rows, Eigen::Index cols, const char * name) {
    if (j.at("rows").get<Eigen::Index>() != rows || j.at("cols").get<Eigen::Index>() != cols) {
        throw config_error(std::string("toy gateway tensor '") + name + "' has the wrong shape");
    }
    const auto v = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != rows * cols) {
        throw config_error(std::string("toy gateway tensor '") + name + "' has the wrong length");
    }
    return Eigen::Map<const Eigen::MatrixXd>(v.data(), rows, cols);
}

}  // namespace

json ToyGateway::to_json() const {
    return json{{"kind", "toy"},
                {"checkpoint_tag", tag_},
                {"embed_dim", embed_dim()},
                {"input_size", recipe_.input_size},
                {"normalization", {{"mean", recipe_.mean}, {"std", recipe_.stddev}}},
                {"preprocess", preprocess_to_json(recipe_)},
                {"world", toy_world_to_json(world_.config())},
                {"logit_scale", logit_scale_},
                {"weights",
                 {{"text_projection", matrix_to_json(text_proj_)},
                  {"image_weight", matrix_to_json(image_weight_)},
                  {"image_bias", matrix_to_json(image_bias_)}}}};
}

ToyGateway ToyGateway::from_json(const json & j, const std::filesystem::path & base_dir) {
    try {
        const auto world = toy_world_from_json(j.value("world", json::object()));
        PreprocessRecipe recipe = preprocess_from_json(j.value("preprocess", json::object()));
        if (j.contains("input_size")) recipe.input_size = j.at("input_size").get<int>();
        if (j.contains("normalization")) {
            const auto & n = j.at("normalization");
            if (n.contains("mean")) recipe.mean = n.at("mean").get<std::array<double, 3>>();
            if (n.contains("std")) recipe.stddev = n.at("std").get<std::array<double, 3>>();
        }
        if (j.contains("embed_dim") && j.at("embed_dim").get<int>() != world.embed_dim) {
            throw config_error("toy gateway embed_dim disagrees with its world config");
        }
        const auto tag = j.value("checkpoint_tag", std::string("toy"));

        if (j.contains("weights")) {
            ToyGateway g(world, recipe, tag);
            const auto & w = j.at("weights");
            const int d = world.embed_dim;
            g.text_proj_ = matrix_from_json(w.at("text_projection"), d, d, "text_projection");
            g.image_weight_ = matrix_from_json(w.at("image_weight"), d, g.input_dim(), "image_weight");
            g.image_bias_ = matrix_from_json(w.at("image_bias"), d, 1, "image_bias");
            g.logit_scale_ = j.value("logit_scale", std::log(1.0 / 0.07));
            g.zero_grad();
            return g;
        }

        // No stored weights: derive the clean-image pretrained tower.
        const auto & pre = j.value("pretrain", json::object());
        ToyGatewayOptions options;
        options.preprocess = recipe;
        options.initial_temperature = pre.value("temperature", options.initial_temperature);
        options.fit_samples = pre.value("fit_samples", options.fit_samples);
        options.ridge = pre.value("ridge", options.ridge);
        options.fit_seed = pre.value("seed", options.fit_seed);
        options.fit_bias = pre.value("fit_bias", options.fit_bias);
        LatentProjection projection;
        if (pre.contains("projection")) {
            std::filesystem::path p = pre.at("projection").get<std::string>();
            if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
            projection = load_projection(p);
        } else {
            projection = default_projection();
        }
        return pretrained(world, projection, options, tag);
    } catch (const json::exception & e) {
        throw config_error(std::string("invalid toy gateway config: ") + e.what());
    }
}

void ToyGateway::save(const std::filesystem::path & path) const { write_text_file(path, to_json().dump() + "\n"); }

}  // namespace latent_align
