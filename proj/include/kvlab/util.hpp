#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace kvlab {

// FNV-1a 64-bit, used for model fingerprints and config hashes.
uint64_t fnv1a64(const void* bytes, size_t len, uint64_t seed = 0xcbf29ce484222325ULL);
uint64_t fnv1a64(std::span<const double> values, uint64_t seed = 0xcbf29ce484222325ULL);

std::string to_hex(uint64_t v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

// Fixed-format double for CSV output: shortest round-trip representation.
std::string format_double(double v);

}  // namespace kvlab
