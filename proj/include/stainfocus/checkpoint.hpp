#pragma once

#include "stainfocus/encoders.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace stainfocus {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    nlohmann::json config;
    std::map<std::string, Tensor> tensors;
};

// Binary container: magic, version, JSON config, then named double tensors.
void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const ParameterList& params);
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Copies tensors into same-named parameters; every parameter must be present with a matching shape.
void assign_parameters(const ParameterList& params, const std::map<std::string, Tensor>& tensors);

// FNV-1a over the raw bytes of a tensor.
std::uint64_t tensor_digest(const Tensor& t);
std::map<std::string, std::uint64_t> parameter_digests(const ParameterList& params);
std::string hex_digest(std::uint64_t value);

}  // namespace stainfocus
