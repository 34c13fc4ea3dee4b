#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nn.hpp"

namespace vitas {

// Checkpoint layout: <stem>.bin holds each tensor as little-endian float32,
// back to back; <stem>.json is the sidecar [{name, shape, offset}] with byte
// offsets into the .bin.
inline void save_checkpoint(const ParamStore& ps, const std::string& stem) {
    std::ofstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot write " + stem + ".bin");
    nlohmann::json sidecar = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, v] : ps.items) {
        std::vector<float> buf(v->value.numel());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<float>(v->value.data[i]);
        bin.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        sidecar.push_back({{"name", name}, {"shape", v->value.shape}, {"offset", offset}});
        offset += buf.size() * sizeof(float);
    }
    std::ofstream js(stem + ".json");
    js << sidecar.dump(1) << "\n";
}

inline void load_checkpoint(ParamStore& ps, const std::string& stem) {
    std::ifstream js(stem + ".json");
    if (!js) throw std::runtime_error("cannot read " + stem + ".json");
    nlohmann::json sidecar = nlohmann::json::parse(js);
    std::ifstream bin(stem + ".bin", std::ios::binary);
    if (!bin) throw std::runtime_error("cannot read " + stem + ".bin");
    if (sidecar.size() != ps.items.size())
        throw std::runtime_error("checkpoint tensor count mismatch");
    for (std::size_t i = 0; i < ps.items.size(); ++i) {
        const auto& entry = sidecar[i];
        auto& [name, v] = ps.items[i];
        if (entry.at("name").get<std::string>() != name)
            throw std::runtime_error("checkpoint name mismatch: " +
                                     entry.at("name").get<std::string>() + " vs " + name);
        auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        if (shape != v->value.shape)
            throw std::runtime_error("checkpoint shape mismatch for " + name);
        bin.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
        std::vector<float> buf(v->value.numel());
        bin.read(reinterpret_cast<char*>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!bin) throw std::runtime_error("checkpoint truncated at " + name);
        for (std::size_t j = 0; j < buf.size(); ++j)
            v->value.data[j] = static_cast<double>(buf[j]);
    }
}

inline bool checkpoint_exists(const std::string& stem) {
    return std::filesystem::exists(stem + ".bin") && std::filesystem::exists(stem + ".json");
}

// Flat float dump for heatmaps / token sequences: raw float32 + json sidecar.
inline void save_float_blob(const std::vector<double>& data,
                            const std::vector<std::size_t>& shape, const std::string& stem,
                            nlohmann::json extra = {}) {
    std::ofstream bin(stem + ".bin", std::ios::binary);
    std::vector<float> buf(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) buf[i] = static_cast<float>(data[i]);
    bin.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    nlohmann::json sidecar = {{"shape", shape}, {"dtype", "float32le"}};
    for (auto& [k, vv] : extra.items()) sidecar[k] = vv;
    std::ofstream js(stem + ".json");
    js << sidecar.dump(1) << "\n";
}

} // namespace vitas
