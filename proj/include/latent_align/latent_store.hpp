#pragma once

// Trajectory data model and the on-disk dataset layout:
//
//   <root>/manifest.jsonl              header line + one record per sample
//   <root>/<sample_id>/meta.json       prompt, seed, T_total, shape, dtype, checksums
//   <root>/<sample_id>/frame_00020.bin one blob per stored step
//   <root>/<sample_id>/final.bin       optional decoded image (same blob format, C = 3)
//
// Blob format: 16-byte little-endian header {u32 magic, u16 dtype, u16 C, u32 H, u32 W}
// followed by C*H*W elements of the declared dtype.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "latent_align/image.hpp"

namespace latent_align {

inline constexpr uint32_t kBlobMagic = 0x4654414c;  // "LATF"
inline constexpr int kFormatVersion = 1;
inline constexpr int kLatentChannels = 4;

enum class Dtype : uint16_t { f16 = 1, f32 = 2 };

std::string_view dtype_name(Dtype dtype);
Dtype parse_dtype(std::string_view name);

struct LatentShape {
    int channels = kLatentChannels;
    int height = 0;
    int width = 0;

    size_t elements() const { return static_cast<size_t>(channels) * height * width; }
    bool operator==(const LatentShape &) const = default;
};

// Progress index convention: step = number of completed denoising iterations (0 = pure noise).
struct LatentFrame {
    int step = 0;
    LatentShape shape;
    std::vector<float> data;
    Dtype dtype = Dtype::f16;

    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * shape.height + y) * shape.width + x];
    }
    bool operator==(const LatentFrame &) const = default;
};

// Returns a copy whose values are exactly representable at the frame's dtype.
LatentFrame quantized(LatentFrame frame);

struct LatentTrajectory {
    std::string sample_id;
    std::string prompt;
    int64_t seed = 0;
    int total_steps = 0;
    std::vector<LatentFrame> frames;
    std::optional<std::string> final_image_ref;  // relative to the sample directory unless absolute

    bool operator==(const LatentTrajectory &) const = default;
};

// Inclusive step interval. lo > hi denotes the empty range.
struct StepRange {
    int lo = 0;
    int hi = 0;

    bool empty() const { return lo > hi; }
    bool contains(int step) const { return step >= lo && step <= hi; }
    int size() const { return empty() ? 0 : hi - lo + 1; }
    StepRange intersect(const StepRange & other) const;
    bool operator==(const StepRange &) const = default;
};

enum class SubsetTag { noisy_conceptual_captions, noisy_genai_bench, custom };

std::string_view subset_tag_name(SubsetTag tag);
SubsetTag parse_subset_tag(std::string_view name);

struct ManifestEntry {
    std::string sample_id;
    std::string relative_path;
    std::string prompt;
    int n_frames = 0;
    std::vector<int> steps;

    bool operator==(const ManifestEntry &) const = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    SubsetTag subset_tag = SubsetTag::custom;
    int format_version = kFormatVersion;
    std::filesystem::path root;  // not serialized

    const ManifestEntry * find(std::string_view sample_id) const;
};

// Throws data_error when any trajectory invariant is violated.
void validate_trajectory(const LatentTrajectory & trajectory);

// Persists frames at their declared dtype. Overwrites an existing sample with the same id.
std::string write_trajectory(const LatentTrajectory & trajectory, const std::filesystem::path & root);

// Frames outside step_filter (inclusive) are dropped; header fields are returned unchanged.
LatentTrajectory read_trajectory(std::string_view sample_id, const std::filesystem::path & root,
                                 std::optional<StepRange> step_filter = std::nullopt);

// Scans sample directories; entries ordered by sample_id.
DatasetManifest build_manifest(const std::filesystem::path & root, SubsetTag subset_tag);

std::string manifest_to_jsonl(const DatasetManifest & manifest);
void write_manifest(const DatasetManifest & manifest, const std::filesystem::path & root);
// Reads <root>/manifest.jsonl and checks that every referenced path exists.
DatasetManifest load_manifest(const std::filesystem::path & root);

std::filesystem::path sample_dir(const std::filesystem::path & root, std::string_view sample_id);
std::optional<std::filesystem::path> resolve_final_image(const LatentTrajectory & trajectory,
                                                         const std::filesystem::path & root);

void write_image_blob(const std::filesystem::path & path, const RgbImage & image);
RgbImage read_image_blob(const std::filesystem::path & path);

}  // namespace latent_align
