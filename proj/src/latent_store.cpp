#include "latent_align/latent_store.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>

#include <json.hpp>

#include "latent_align/error.hpp"
#include "latent_align/util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace latent_align {

namespace {

constexpr size_t kHeaderBytes = 16;
constexpr float kHalfMax = 65504.0f;

struct BlobHeader {
    Dtype dtype;
    int channels;
    int height;
    int width;
};

template <typename T>
void put_le(std::string & out, T value) {
    for (size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((static_cast<uint64_t>(value) >> (8 * i)) & 0xff));
    }
}

template <typename T>
T get_le(const char * p) {
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return static_cast<T>(v);
}

std::string encode_blob(Dtype dtype, int channels, int height, int width, const std::vector<float> & values) {
    std::string out;
    const size_t elem = dtype == Dtype::f16 ? 2 : 4;
    out.reserve(kHeaderBytes + values.size() * elem);
    put_le<uint32_t>(out, kBlobMagic);
    put_le<uint16_t>(out, static_cast<uint16_t>(dtype));
    put_le<uint16_t>(out, static_cast<uint16_t>(channels));
    put_le<uint32_t>(out, static_cast<uint32_t>(height));
    put_le<uint32_t>(out, static_cast<uint32_t>(width));
    for (float v : values) {
        if (dtype == Dtype::f16) {
            put_le<uint16_t>(out, float_to_half(v));
        } else {
            put_le<uint32_t>(out, std::bit_cast<uint32_t>(v));
        }
    }
    return out;
}

BlobHeader decode_header(const std::string & blob, const fs::path & path) {
    if (blob.size() < kHeaderBytes || get_le<uint32_t>(blob.data()) != kBlobMagic) {
        throw integrity_error("'" + path.string() + "' is not a frame blob");
    }
    BlobHeader h{};
    const auto raw_dtype = get_le<uint16_t>(blob.data() + 4);
    if (raw_dtype != static_cast<uint16_t>(Dtype::f16) && raw_dtype != static_cast<uint16_t>(Dtype::f32)) {
        throw integrity_error("'" + path.string() + "' has unknown dtype code " + std::to_string(raw_dtype));
    }
    h.dtype = static_cast<Dtype>(raw_dtype);
    h.channels = get_le<uint16_t>(blob.data() + 6);
    h.height = static_cast<int>(get_le<uint32_t>(blob.data() + 8));
    h.width = static_cast<int>(get_le<uint32_t>(blob.data() + 12));
    const size_t elem = h.dtype == Dtype::f16 ? 2 : 4;
    const size_t expected = kHeaderBytes + elem * static_cast<size_t>(h.channels) * h.height * h.width;
    if (blob.size() != expected) {
        throw integrity_error("'" + path.string() + "' has " + std::to_string(blob.size()) + " bytes, header implies " +
                              std::to_string(expected));
    }
    return h;
}

std::vector<float> decode_values(const std::string & blob, const BlobHeader & h) {
    const size_t n = static_cast<size_t>(h.channels) * h.height * h.width;
    std::vector<float> values(n);
    const char * p = blob.data() + kHeaderBytes;
    for (size_t i = 0; i < n; ++i) {
        if (h.dtype == Dtype::f16) {
            values[i] = half_to_float(get_le<uint16_t>(p + 2 * i));
        } else {
            values[i] = std::bit_cast<float>(get_le<uint32_t>(p + 4 * i));
        }
    }
    return values;
}

uint32_t checksum_of(const std::string & blob) {
    return crc32_of(std::as_bytes(std::span(blob.data(), blob.size())));
}

std::string hex32(uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

std::string frame_file_name(int step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%05d.bin", step);
    return buf;
}

void check_sample_id(std::string_view id) {
    if (id.empty() || id == "." || id == "..") {
        throw argument_error("invalid sample_id '" + std::string(id) + "'");
    }
    for (char c : id) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
        if (!ok) {
            throw argument_error("sample_id '" + std::string(id) + "' contains characters outside [A-Za-z0-9._-]");
        }
    }
}

json read_meta(const fs::path & dir) {
    const auto path = dir / "meta.json";
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception & e) {
        throw integrity_error("malformed metadata '" + path.string() + "': " + e.what());
    }
}

}  // namespace

std::string_view dtype_name(Dtype dtype) { return dtype == Dtype::f16 ? "f16" : "f32"; }

Dtype parse_dtype(std::string_view name) {
    if (name == "f16") return Dtype::f16;
    if (name == "f32") return Dtype::f32;
    throw config_error("unknown dtype '" + std::string(name) + "' (expected f16 or f32)");
}

std::string_view subset_tag_name(SubsetTag tag) {
    switch (tag) {
        case SubsetTag::noisy_conceptual_captions: return "noisy-conceptual-captions";
        case SubsetTag::noisy_genai_bench: return "noisy-genai-bench";
        case SubsetTag::custom: return "custom";
    }
    return "custom";
}

SubsetTag parse_subset_tag(std::string_view name) {
    if (name == "noisy-conceptual-captions") return SubsetTag::noisy_conceptual_captions;
    if (name == "noisy-genai-bench") return SubsetTag::noisy_genai_bench;
    if (name == "custom") return SubsetTag::custom;
    throw config_error("unknown subset tag '" + std::string(name) + "'");
}

StepRange StepRange::intersect(const StepRange & other) const {
    return {std::max(lo, other.lo), std::min(hi, other.hi)};
}

const ManifestEntry * DatasetManifest::find(std::string_view sample_id) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), sample_id,
                               [](const ManifestEntry & e, std::string_view id) { return e.sample_id < id; });
    if (it != entries.end() && it->sample_id == sample_id) {
        return &*it;
    }
    return nullptr;
}

LatentFrame quantized(LatentFrame frame) {
    if (frame.dtype == Dtype::f16) {
        for (float & v : frame.data) {
            v = half_to_float(float_to_half(v));
        }
    }
    return frame;
}

void validate_trajectory(const LatentTrajectory & t) {
    try {
        check_sample_id(t.sample_id);
    } catch (const Error & e) {
        throw data_error(e.what());
    }
    if (t.total_steps < 1) {
        throw data_error("sample '" + t.sample_id + "': T_total must be >= 1");
    }
    for (size_t i = 0; i < t.frames.size(); ++i) {
        const auto & f = t.frames[i];
        const std::string where = "sample '" + t.sample_id + "' step " + std::to_string(f.step);
        if (f.step < 0 || f.step > t.total_steps) {
            throw data_error(where + ": step outside [0, T_total]");
        }
        if (i > 0 && f.step <= t.frames[i - 1].step) {
            throw data_error(where + ": frames must be strictly increasing in step");
        }
        if (f.shape != t.frames.front().shape) {
            throw data_error(where + ": shape mismatch with first frame");
        }
        if (f.dtype != t.frames.front().dtype) {
            throw data_error(where + ": dtype differs from first frame");
        }
        if (f.shape.channels != kLatentChannels || f.shape.height <= 0 || f.shape.width <= 0) {
            throw data_error(where + ": latent shape must be (4, H, W) with H, W > 0");
        }
        if (f.data.size() != f.shape.elements()) {
            throw data_error(where + ": data length does not match shape");
        }
        for (float v : f.data) {
            if (!std::isfinite(v)) {
                throw data_error(where + ": non-finite value");
            }
            if (f.dtype == Dtype::f16 && std::fabs(v) > kHalfMax) {
                throw data_error(where + ": value exceeds the f16 range");
            }
        }
    }
}

fs::path sample_dir(const fs::path & root, std::string_view sample_id) { return root / std::string(sample_id); }

std::string write_trajectory(const LatentTrajectory & t, const fs::path & root) {
    validate_trajectory(t);
    const auto dir = sample_dir(root, t.sample_id);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw io_error("cannot create '" + dir.string() + "': " + ec.message());
    }

    // stale frames from a previous write of the same id
    for (const auto & entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("frame_", 0) == 0) {
            fs::remove(entry.path());
        }
    }

    json checksums = json::object();
    json steps = json::array();
    for (const auto & f : t.frames) {
        const auto blob = encode_blob(f.dtype, f.shape.channels, f.shape.height, f.shape.width, f.data);
        write_text_file(dir / frame_file_name(f.step), blob);
        checksums[std::to_string(f.step)] = hex32(checksum_of(blob));
        steps.push_back(f.step);
    }

    json meta;
    meta["format_version"] = kFormatVersion;
    meta["sample_id"] = t.sample_id;
    meta["prompt"] = t.prompt;
    meta["seed"] = t.seed;
    meta["T_total"] = t.total_steps;
    if (t.frames.empty()) {
        meta["shape"] = nullptr;
        meta["dtype"] = nullptr;
    } else {
        const auto & s = t.frames.front().shape;
        meta["shape"] = {s.channels, s.height, s.width};
        meta["dtype"] = std::string(dtype_name(t.frames.front().dtype));
    }
    meta["steps"] = steps;
    meta["checksums"] = checksums;
    meta["final_image"] = t.final_image_ref ? json(*t.final_image_ref) : json(nullptr);
    write_text_file(dir / "meta.json", meta.dump(2) + "\n");
    return t.sample_id;
}

LatentTrajectory read_trajectory(std::string_view sample_id, const fs::path & root,
                                 std::optional<StepRange> step_filter) {
    check_sample_id(sample_id);
    const auto dir = sample_dir(root, sample_id);
    if (!fs::exists(dir / "meta.json")) {
        throw not_found_error("sample '" + std::string(sample_id) + "' not found under '" + root.string() + "'");
    }
    const json meta = read_meta(dir);

    LatentTrajectory t;
    try {
        t.sample_id = meta.at("sample_id").get<std::string>();
        t.prompt = meta.at("prompt").get<std::string>();
        t.seed = meta.at("seed").get<int64_t>();
        t.total_steps = meta.at("T_total").get<int>();
        if (!meta.at("final_image").is_null()) {
            t.final_image_ref = meta.at("final_image").get<std::string>();
        }
    } catch (const json::exception & e) {
        throw integrity_error("sample '" + std::string(sample_id) + "': bad metadata: " + e.what());
    }

    const auto steps = meta.at("steps").get<std::vector<int>>();
    if (steps.empty()) {
        return t;
    }
    const auto shape_v = meta.at("shape").get<std::vector<int>>();
    if (shape_v.size() != 3) {
        throw integrity_error("sample '" + std::string(sample_id) + "': shape must have 3 entries");
    }
    const LatentShape shape{shape_v[0], shape_v[1], shape_v[2]};
    const Dtype dtype = parse_dtype(meta.at("dtype").get<std::string>());
    const auto & checksums = meta.at("checksums");

    for (int step : steps) {
        if (step_filter && !step_filter->contains(step)) {
            continue;
        }
        const auto path = dir / frame_file_name(step);
        if (!fs::exists(path)) {
            throw not_found_error("sample '" + std::string(sample_id) + "': missing frame file for step " +
                                  std::to_string(step));
        }
        const auto blob = read_text_file(path);
        const auto key = std::to_string(step);
        if (!checksums.contains(key) || checksums.at(key).get<std::string>() != hex32(checksum_of(blob))) {
            throw integrity_error("sample '" + std::string(sample_id) + "': checksum mismatch at step " + key);
        }
        const auto h = decode_header(blob, path);
        if (h.dtype != dtype || h.channels != shape.channels || h.height != shape.height || h.width != shape.width) {
            throw integrity_error("sample '" + std::string(sample_id) + "': blob header disagrees with metadata at step " +
                                  key);
        }
        LatentFrame f;
        f.step = step;
        f.shape = shape;
        f.dtype = dtype;
        f.data = decode_values(blob, h);
        t.frames.push_back(std::move(f));
    }
    return t;
}

DatasetManifest build_manifest(const fs::path & root, SubsetTag subset_tag) {
    DatasetManifest m;
    m.subset_tag = subset_tag;
    m.root = root;
    if (!fs::exists(root)) {
        throw not_found_error("dataset root '" + root.string() + "' does not exist");
    }

    std::map<std::string, std::vector<std::string>> dirs_by_id;
    std::vector<fs::path> dirs;
    for (const auto & entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());

    for (const auto & dir : dirs) {
        const json meta = read_meta(dir);
        ManifestEntry e;
        e.sample_id = meta.at("sample_id").get<std::string>();
        e.relative_path = dir.filename().string();
        e.prompt = meta.at("prompt").get<std::string>();
        e.steps = meta.at("steps").get<std::vector<int>>();
        e.n_frames = static_cast<int>(e.steps.size());
        for (int step : e.steps) {
            if (!fs::exists(dir / frame_file_name(step))) {
                throw data_error("sample '" + e.sample_id + "': metadata lists step " + std::to_string(step) +
                                 " but the frame file is missing");
            }
        }
        dirs_by_id[e.sample_id].push_back(e.relative_path);
        m.entries.push_back(std::move(e));
    }

    std::string dupes;
    for (const auto & [id, where] : dirs_by_id) {
        if (where.size() > 1) {
            dupes += (dupes.empty() ? "" : ", ") + id + " (";
            for (size_t i = 0; i < where.size(); ++i) {
                dupes += (i ? " " : "") + where[i];
            }
            dupes += ")";
        }
    }
    if (!dupes.empty()) {
        throw data_error("duplicate sample_id on disk: " + dupes);
    }

    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry & a, const ManifestEntry & b) { return a.sample_id < b.sample_id; });
    return m;
}

std::string manifest_to_jsonl(const DatasetManifest & m) {
    std::string out;
    json header{{"format_version", m.format_version}, {"subset_tag", std::string(subset_tag_name(m.subset_tag))},
                {"n_entries", m.entries.size()}};
    out += header.dump() + "\n";
    for (const auto & e : m.entries) {
        json rec{{"sample_id", e.sample_id},
                 {"relative_path", e.relative_path},
                 {"prompt", e.prompt},
                 {"n_frames", e.n_frames},
                 {"step_set", e.steps}};
        out += rec.dump() + "\n";
    }
    return out;
}

void write_manifest(const DatasetManifest & m, const fs::path & root) {
    write_text_file(root / "manifest.jsonl", manifest_to_jsonl(m));
}

DatasetManifest load_manifest(const fs::path & root) {
    const auto path = root / "manifest.jsonl";
    if (!fs::exists(path)) {
        throw not_found_error("no manifest at '" + path.string() + "'");
    }
    std::istringstream in(read_text_file(path));
    std::string line;
    DatasetManifest m;
    m.root = root;
    bool header = true;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception & e) {
            throw integrity_error("malformed manifest line: " + std::string(e.what()));
        }
        if (header) {
            m.format_version = rec.at("format_version").get<int>();
            m.subset_tag = parse_subset_tag(rec.at("subset_tag").get<std::string>());
            header = false;
            continue;
        }
        ManifestEntry e;
        e.sample_id = rec.at("sample_id").get<std::string>();
        e.relative_path = rec.at("relative_path").get<std::string>();
        e.prompt = rec.at("prompt").get<std::string>();
        e.n_frames = rec.at("n_frames").get<int>();
        e.steps = rec.at("step_set").get<std::vector<int>>();
        if (!seen.insert(e.sample_id).second) {
            throw data_error("manifest lists sample_id '" + e.sample_id + "' twice");
        }
        if (!fs::exists(root / e.relative_path)) {
            throw not_found_error("manifest path '" + (root / e.relative_path).string() + "' does not exist");
        }
        m.entries.push_back(std::move(e));
    }
    std::sort(m.entries.begin(), m.entries.end(),
              [](const ManifestEntry & a, const ManifestEntry & b) { return a.sample_id < b.sample_id; });
    return m;
}

std::optional<fs::path> resolve_final_image(const LatentTrajectory & t, const fs::path & root) {
    if (!t.final_image_ref) {
        return std::nullopt;
    }
    fs::path p(*t.final_image_ref);
    return p.is_absolute() ? p : sample_dir(root, t.sample_id) / p;
}

void write_image_blob(const fs::path & path, const RgbImage & image) {
    if (image.data.size() != static_cast<size_t>(3) * image.height * image.width) {
        throw argument_error("image data length does not match its dimensions");
    }
    write_text_file(path, encode_blob(Dtype::f32, 3, image.height, image.width, image.data));
}

RgbImage read_image_blob(const fs::path & path) {
    if (!fs::exists(path)) {
        throw not_found_error("image '" + path.string() + "' not found");
    }
    const auto blob = read_text_file(path);
    const auto h = decode_header(blob, path);
    if (h.channels != 3) {
        throw integrity_error("'" + path.string() + "' is not a 3-channel image blob");
    }
    RgbImage img;
    img.height = h.height;
    img.width = h.width;
    img.data = decode_values(blob, h);
    return img;
}

}  // namespace latent_align
