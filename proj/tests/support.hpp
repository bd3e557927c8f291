#pragma once

// Shared fixtures: scratch directories, seeded generators, and small fake backends.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "latent_align/alignment_scoring.hpp"
#include "latent_align/bon_orchestrator.hpp"
#include "latent_align/latent_store.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace latent_align;

// Runs f and returns the kind of the Error it throws, or nullopt when it returns normally.
template <typename F>
std::optional<ErrorKind> error_kind_of(F && f) {
    try {
        f();
    } catch (const Error & e) {
        return e.kind();
    }
    return std::nullopt;
}

class TempDir {
public:
    explicit TempDir(const std::string & tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("latent_align_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir & operator=(const TempDir &) = delete;

    const fs::path & path() const { return path_; }
    fs::path operator/(const std::string & name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::vector<double> random_unit(std::mt19937_64 & rng, int dim) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(dim);
    double s = 0.0;
    for (auto & x : v) {
        x = n(rng);
        s += x * x;
    }
    s = std::sqrt(s);
    for (auto & x : v) x /= s;
    return v;
}

inline LatentFrame random_frame(std::mt19937_64 & rng, int step, LatentShape shape, Dtype dtype, double scale = 2.0) {
    std::normal_distribution<float> n(0.0f, static_cast<float>(scale));
    LatentFrame f;
    f.step = step;
    f.shape = shape;
    f.dtype = dtype;
    f.data.resize(shape.elements());
    for (auto & x : f.data) x = n(rng);
    return quantized(f);
}

inline LatentTrajectory random_trajectory(std::mt19937_64 & rng, const std::string & id, Dtype dtype) {
    std::uniform_int_distribution<int> dim(1, 6), total(1, 30);
    LatentTrajectory t;
    t.sample_id = id;
    t.prompt = "prompt for " + id;
    t.seed = static_cast<int64_t>(rng() >> 2);
    t.total_steps = total(rng);
    const LatentShape shape{4, dim(rng), dim(rng)};
    std::bernoulli_distribution keep(0.6);
    for (int s = 0; s <= t.total_steps; ++s) {
        if (keep(rng) || s == t.total_steps) t.frames.push_back(random_frame(rng, s, shape, dtype));
    }
    return t;
}

// Text embeddings come from a table (unknown prompts get a hashed random vector); an image's
// embedding is looked up by the rounded value of its first pixel.
class TableGateway final : public EncoderGateway {
public:
    explicit TableGateway(int dim) : dim_(dim) {}

    std::map<std::string, std::vector<double>> texts;
    std::map<long, std::vector<double>> images;

    std::vector<double> embed_text(std::string_view prompt) const override {
        const auto it = texts.find(std::string(prompt));
        if (it != texts.end()) return it->second;
        std::mt19937_64 rng(std::hash<std::string_view>{}(prompt));
        return random_unit(rng, dim_);
    }
    std::vector<double> embed_image(std::span<const double> pixels) const override {
        const long key = std::lround(pixels[0]);
        const auto it = images.find(key);
        if (it == images.end()) throw backend_error("no image embedding for key " + std::to_string(key));
        return it->second;
    }
    int embed_dim() const override { return dim_; }
    const PreprocessRecipe & preprocess() const override { return recipe_; }
    std::string checkpoint_tag() const override { return "table"; }

    static RgbImage keyed_image(long key) {
        RgbImage img;
        img.height = 1;
        img.width = 1;
        img.data = {static_cast<float>(key), 0.0f, 0.0f};
        return img;
    }

private:
    int dim_;
    PreprocessRecipe recipe_{0, PreprocessRecipe::Resize::none, {0, 0, 0}, {1, 1, 1}, 77};
};

}  // namespace testsupport
