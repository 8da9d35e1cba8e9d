#include "cslab/autodiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <nlohmann/json.hpp>

#include "cslab/util.hpp"

namespace cslab::ad {

using nlohmann::json;

namespace {

constexpr std::size_t kAlign = 64;

void put_u32(std::string& out, std::size_t at, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out[at + b] = static_cast<char>((v >> (8 * b)) & 0xFF);
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

}  // namespace

std::string encode_checkpoint(const std::vector<NamedTensor>& tensors) {
  json header = json::array();
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& nt : tensors) {
    offsets.push_back(offset);
    header.push_back({{"name", nt.name}, {"dtype", "f32"}, {"shape", nt.tensor.shape()}, {"offset", offset}});
    offset += nt.tensor.size() * 4;
    offset = (offset + kAlign - 1) / kAlign * kAlign;
  }
  const std::string header_text = header.dump();
  std::string out(8, '\0');
  const std::uint64_t hlen = header_text.size();
  for (int b = 0; b < 8; ++b) out[b] = static_cast<char>((hlen >> (8 * b)) & 0xFF);
  out += header_text;
  const std::size_t base = out.size();
  out.resize(base + offset, '\0');
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const auto values = tensors[k].tensor.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      put_u32(out, base + offsets[k] + 4 * i, std::bit_cast<std::uint32_t>(values[i]));
    }
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8) throw ValidationError("checkpoint: truncated header length");
  std::uint64_t hlen = 0;
  for (int b = 0; b < 8; ++b) hlen |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[b])) << (8 * b);
  if (hlen > bytes.size() - 8) throw ValidationError("checkpoint: header length exceeds file");
  json header;
  try {
    header = json::parse(bytes.substr(8, hlen));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: bad header: ") + e.what());
  }
  const std::size_t base = 8 + hlen;
  std::vector<NamedTensor> out;
  for (const auto& entry : header) {
    if (entry.at("dtype") != "f32") throw ValidationError("checkpoint: unsupported dtype");
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset % kAlign != 0) throw ValidationError("checkpoint: misaligned tensor offset");
    Tensor<float> t(shape);
    if (base + offset + 4 * t.size() > bytes.size()) throw ValidationError("checkpoint: payload truncated");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_u32(bytes, base + offset + 4 * i));
    out.push_back({entry.at("name").get<std::string>(), std::move(t)});
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

const Tensor<float>& find_tensor(const std::vector<NamedTensor>& tensors, std::string_view name) {
  for (const auto& nt : tensors) {
    if (nt.name == name) return nt.tensor;
  }
  throw ValidationError("checkpoint: missing tensor " + std::string(name));
}

}  // namespace cslab::ad
