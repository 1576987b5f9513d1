#include "pepler/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pepler/errors.hpp"

namespace pepler {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'E', 'P', 'L', 'E', 'R', '1', '\0'};

static_assert(sizeof(float) == 4, "checkpoint format assumes 4-byte floats");

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out += static_cast<char>((v >> (8 * i)) & 0xff);
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) |
         (v >> 24);
}

void append_f32_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  if constexpr (std::endian::native == std::endian::big)
    bits = byteswap32(bits);
  out.append(reinterpret_cast<const char*>(&bits), 4);
}

float read_f32_le(const unsigned char* p) {
  std::uint32_t bits;
  std::memcpy(&bits, p, 4);
  if constexpr (std::endian::native == std::endian::big)
    bits = byteswap32(bits);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

[[noreturn]] void bad_header(const std::string& detail) {
  throw CheckpointError(CheckpointError::Kind::kBadHeader,
                        "bad checkpoint header: " + detail);
}

}  // namespace

void save_checkpoint(const std::string& path, const TensorMap& tensors,
                     const CheckpointMeta& meta) {
  json header;
  json& tensor_obj = header["tensors"] = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : tensors) {
    std::uint64_t bytes = static_cast<std::uint64_t>(tensor.size()) * 4;
    tensor_obj[name] = {{"dtype", "f32"},
                        {"shape", tensor.shape()},
                        {"byte_offset", offset},
                        {"byte_length", bytes}};
    offset += bytes;
  }
  header["metadata"] = {{"config", meta.config},
                        {"seed", meta.seed},
                        {"epoch", meta.epoch},
                        {"valid_loss", meta.valid_loss},
                        {"users", meta.users},
                        {"items", meta.items}};
  std::string header_text = header.dump();

  std::string blob;
  blob.reserve(16 + header_text.size() + offset);
  blob.append(kMagic, 8);
  append_u64_le(blob, header_text.size());
  blob += header_text;
  for (const auto& [name, tensor] : tensors) {
    for (float v : tensor.vec()) append_f32_le(blob, v);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string blob = ss.str();
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 8) != 0)
    throw CheckpointError(CheckpointError::Kind::kBadMagic,
                          path + ": bad magic, not a checkpoint file");
  std::uint64_t header_len = read_u64_le(bytes + 8);
  if (16 + header_len > blob.size())
    throw CheckpointError(CheckpointError::Kind::kTruncated,
                          path + ": header extends past end of file");

  json header = json::parse(blob.begin() + 16,
                            blob.begin() + 16 + static_cast<std::ptrdiff_t>(
                                                    header_len),
                            nullptr, false);
  if (header.is_discarded() || !header.is_object())
    bad_header("not valid JSON");
  if (!header.contains("tensors") || !header["tensors"].is_object())
    bad_header("missing \"tensors\" object");

  const std::size_t payload_offset = 16 + header_len;
  const std::uint64_t payload_len = blob.size() - payload_offset;

  Checkpoint ckpt;
  std::uint64_t expected_offset = 0;
  for (const auto& [name, entry] : header["tensors"].items()) {
    if (!entry.is_object()) bad_header("tensor \"" + name + "\" not an object");
    if (entry.value("dtype", "") != std::string("f32"))
      bad_header("tensor \"" + name + "\" has unsupported dtype");
    if (!entry.contains("shape") || !entry["shape"].is_array())
      bad_header("tensor \"" + name + "\" missing shape");
    std::vector<std::size_t> shape;
    std::uint64_t count = 1;
    for (const auto& dim : entry["shape"]) {
      if (!dim.is_number_unsigned() || dim.get<std::uint64_t>() == 0)
        bad_header("tensor \"" + name + "\" has a non-positive dimension");
      shape.push_back(dim.get<std::size_t>());
      count *= dim.get<std::uint64_t>();
    }
    if (shape.empty() || shape.size() > 2)
      bad_header("tensor \"" + name + "\" has unsupported rank " +
                 std::to_string(shape.size()));
    if (!entry.contains("byte_offset") ||
        !entry["byte_offset"].is_number_unsigned() ||
        !entry.contains("byte_length") ||
        !entry["byte_length"].is_number_unsigned())
      bad_header("tensor \"" + name + "\" missing byte_offset/byte_length");
    std::uint64_t byte_offset = entry["byte_offset"].get<std::uint64_t>();
    std::uint64_t byte_length = entry["byte_length"].get<std::uint64_t>();

    if (byte_length != count * 4)
      throw CheckpointError(
          CheckpointError::Kind::kShapeMismatch,
          path + ": tensor \"" + name + "\" shape implies " +
              std::to_string(count * 4) + " bytes but header says " +
              std::to_string(byte_length));
    if (byte_offset != expected_offset)
      bad_header("tensor \"" + name + "\" offset " +
                 std::to_string(byte_offset) + ", expected " +
                 std::to_string(expected_offset) +
                 " (tensors must be contiguous in name order)");
    expected_offset = byte_offset + byte_length;
    if (expected_offset > payload_len)
      throw CheckpointError(CheckpointError::Kind::kTruncated,
                            path + ": payload truncated reading tensor \"" +
                                name + "\"");

    std::vector<float> data(count);
    const unsigned char* src = bytes + payload_offset + byte_offset;
    for (std::uint64_t i = 0; i < count; ++i)
      data[i] = read_f32_le(src + i * 4);
    ckpt.tensors.emplace(name, num::Tensor<float>(shape, std::move(data)));
  }
  if (expected_offset != payload_len)
    throw CheckpointError(
        CheckpointError::Kind::kTruncated,
        path + ": payload length " + std::to_string(payload_len) +
            " does not match header total " + std::to_string(expected_offset));

  if (header.contains("metadata")) {
    const json& md = header["metadata"];
    if (!md.is_object()) bad_header("metadata is not an object");
    if (md.contains("config") && md["config"].is_object()) {
      for (const auto& [k, v] : md["config"].items()) {
        if (!v.is_string()) bad_header("metadata config value for \"" + k +
                                       "\" is not a string");
        ckpt.meta.config[k] = v.get<std::string>();
      }
    }
    ckpt.meta.seed = md.value("seed", std::uint64_t{0});
    ckpt.meta.epoch = md.value("epoch", static_cast<long long>(0));
    ckpt.meta.valid_loss = md.value("valid_loss", 0.0);
    if (md.contains("users") && md["users"].is_array())
      ckpt.meta.users = md["users"].get<std::vector<std::string>>();
    if (md.contains("items") && md["items"].is_array())
      ckpt.meta.items = md["items"].get<std::vector<std::string>>();
  }
  return ckpt;
}

}  // namespace pepler
