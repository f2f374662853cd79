#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dasgil/net.hpp"

namespace dasgil {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(const void* data, std::size_t size);
std::string to_hex(const Digest& d);

// SHA-256 over each file's relative name and bytes, in the order given.
Digest files_digest(const std::filesystem::path& root, const std::vector<std::filesystem::path>& files);

// SHA-256 over the configuration and every parameter tensor (name, shape, float32 bytes) in name order.
Digest params_digest(const net::ModelParams<float>& params);

}  // namespace dasgil
