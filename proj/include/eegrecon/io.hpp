#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegrecon/nn/layers.hpp"

namespace eegrecon {

using Json = nlohmann::json;

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

std::string sha256_hex(const void* data, std::size_t size);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);

// Digest over names, shapes and raw little-endian values, in list order.
std::string hash_params(const nn::ParamList& params);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

// Single-file checkpoint: "EEGRCKPT" magic, u32 version, u64 header length,
// JSON header {kind, config, tensors:[{name,shape,offset}]}, then float64 blob.
struct Checkpoint {
  std::string kind;
  Json config;
  std::map<std::string, nn::Tensor> tensors;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, const Json& config,
                     const nn::ParamList& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Assigns every parameter from the checkpoint; missing names or shape drift throw.
void assign_params(const Checkpoint& ckpt, const nn::ParamList& params);

}  // namespace eegrecon
