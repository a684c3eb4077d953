#include "stainfocus/checkpoint.hpp"

#include "stainfocus/errors.hpp"
#include "stainfocus/random.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string_view>

namespace stainfocus {

namespace {

constexpr std::array<char, 8> kMagic{'S', 'F', 'O', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T value{};
    if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw ParseError("checkpoint " + path.string() + " is truncated");
    return value;
}

std::string get_string(std::istream& in, std::uint64_t length, const std::filesystem::path& path) {
    if (length > (1ULL << 32)) throw ParseError("checkpoint " + path.string() + " has an implausible field length");
    std::string s(length, '\0');
    if (!in.read(s.data(), static_cast<std::streamsize>(length))) throw ParseError("checkpoint " + path.string() + " is truncated");
    return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const ParameterList& params) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string header = config.dump();
    put<std::uint64_t>(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, var] : params) {
        const Tensor& t = var.value();
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) put<std::int32_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed while writing checkpoint " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw ParseError(path.string() + " is not a checkpoint file");
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion)
        throw ParseError("checkpoint " + path.string() + " has version " + std::to_string(version) + ", expected " +
                         std::to_string(kCheckpointVersion));
    CheckpointData data;
    try {
        data.config = nlohmann::json::parse(get_string(in, get<std::uint64_t>(in, path), path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("checkpoint " + path.string() + " has a corrupt config: " + e.what());
    }
    const auto count = get<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = get_string(in, get<std::uint32_t>(in, path), path);
        const auto rank = get<std::uint32_t>(in, path);
        if (rank == 0 || rank > 8) throw ParseError("checkpoint tensor " + name + " has rank " + std::to_string(rank));
        std::vector<int> shape(rank);
        for (auto& d : shape) {
            d = get<std::int32_t>(in, path);
            if (d <= 0) throw ParseError("checkpoint tensor " + name + " has a non-positive extent");
        }
        Tensor t(shape);
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
            throw ParseError("checkpoint " + path.string() + " is truncated inside " + name);
        data.tensors.emplace(std::move(name), std::move(t));
    }
    return data;
}

void assign_parameters(const ParameterList& params, const std::map<std::string, Tensor>& tensors) {
    for (const auto& [name, var] : params) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw ValidationError("checkpoint lacks parameter " + name);
        if (!it->second.same_shape(var.value()))
            throw ValidationError("checkpoint parameter " + name + " has shape " + it->second.shape_string() + ", model expects " +
                                  var.value().shape_string());
        ad::Var v = var;
        v.mutable_value() = it->second;
    }
}

std::uint64_t tensor_digest(const Tensor& t) {
    std::uint64_t h = fnv1a(stainfocus::shape_string(t.shape()));
    return fnv1a(std::string_view(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double)), h);
}

std::map<std::string, std::uint64_t> parameter_digests(const ParameterList& params) {
    std::map<std::string, std::uint64_t> out;
    for (const auto& [name, var] : params) out[name] = tensor_digest(var.value());
    return out;
}

std::string hex_digest(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace stainfocus
