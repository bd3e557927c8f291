#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace latent_align {

// IEEE 754 binary16 conversions, round-to-nearest-even.
uint16_t float_to_half(float value);
float half_to_float(uint16_t bits);

uint32_t crc32_of(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file_hex(const std::filesystem::path & path);

std::string read_text_file(const std::filesystem::path & path);
// Writes through a temporary sibling and renames, so readers never see a torn file.
void write_text_file(const std::filesystem::path & path, std::string_view text);

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);

// Stable 64-bit string hash (FNV-1a); used to derive seeds from text.
uint64_t fnv1a64(std::string_view text, uint64_t seed = 0);

}  // namespace latent_align
