#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "faithlab/nn.hpp"

namespace faithlab {

using json = nlohmann::json;

/// Binary container shared by checkpoints and dataset files:
///   8-byte magic | u32 LE header length | JSON header | f64 LE payload.
/// The payload length is taken from `expected_values(header)`.
struct Container {
    json header;
    std::vector<double> payload;
};

void write_container(const std::filesystem::path& path, std::string_view magic, const json& header,
                     std::span<const double> payload);

/// `count_payload` returns how many doubles the header declares.
Container read_container(const std::filesystem::path& path, std::string_view magic,
                         std::size_t (*count_payload)(const json&));

inline constexpr std::string_view checkpoint_magic = "FTCKPT01";

json to_json(const LayerSpec& layer);
LayerSpec layer_from_json(const json& j);
json to_json(const NetworkSpec& spec);
NetworkSpec network_from_json(const json& j);

json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const json& j);

void save_checkpoint(const Checkpoint& model, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// JSON text with a trailing newline; key order is nlohmann's sorted order so
/// output bytes are stable across runs.
std::string dump_json(const json& j);

}  // namespace faithlab
