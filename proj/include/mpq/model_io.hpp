#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vendor_json.hpp"
#include "mpq/network.hpp"

namespace mpq {

/// Model document, version 1. Parameter tensors are base64 strings of
/// little-endian float32 values in row-major order; loading widens them
/// back to double. Weights that are not float32-representable are rounded
/// to nearest on save.
nlohmann::ordered_json save_model(const Network& model);
Network load_model(const nlohmann::json& doc);

void save_model_file(const Network& model, const std::filesystem::path& path);
Network load_model_file(const std::filesystem::path& path);

/// FNV-1a over the serialized document.
std::uint64_t model_hash(const Network& model);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

std::string encode_f32(const Tensor& t);
std::vector<double> decode_f32(const std::string& text);

}  // namespace mpq
