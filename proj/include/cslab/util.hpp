#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cslab {

// Error categories map onto CLI exit codes 1, 2 and 3.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Independent stream for (master seed, stream id); used for per-stage and per-prompt RNGs.
Rng derive_rng(std::uint64_t master, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream);

double uniform01(Rng& rng);

namespace utf8 {
std::u32string decode(std::string_view bytes);
std::string encode(std::u32string_view cps);
void append(std::string& out, char32_t cp);
}  // namespace utf8

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::vector<std::string> split(std::string_view s, char sep);
std::string trim(std::string_view s);

// Shortest decimal form that round-trips; keeps CSV/JSON output stable.
std::string format_double(double v);

}  // namespace cslab
