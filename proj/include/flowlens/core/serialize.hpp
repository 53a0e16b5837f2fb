#pragma once

// Flat named-parameter archive. Layout (little-endian):
//   magic "FLPARAMS", u32 version, u32 config_len, config bytes (key=value
//   lines), u32 param count, then per parameter: u32 name_len, name bytes,
//   u32 rank, u32 dims[rank], f32 data[numel].

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "flowlens/core/nn.hpp"

namespace flowlens {

namespace detail {
inline void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
} // namespace detail

inline void save_params(const std::string& path, const ParamList& params,
                        const std::string& config_text = "") {
    std::ofstream os(path, std::ios::binary);
    FL_CHECK(os.good(), IoError, "cannot open for writing: " + path);
    os.write("FLPARAMS", 8);
    detail::write_u32(os, 1);
    detail::write_u32(os, uint32_t(config_text.size()));
    os.write(config_text.data(), std::streamsize(config_text.size()));
    detail::write_u32(os, uint32_t(params.size()));
    for (const auto& e : params.entries()) {
        detail::write_u32(os, uint32_t(e.name.size()));
        os.write(e.name.data(), std::streamsize(e.name.size()));
        detail::write_u32(os, uint32_t(e.tensor.ndim()));
        for (int d = 0; d < e.tensor.ndim(); ++d) detail::write_u32(os, uint32_t(e.tensor.dim(d)));
        os.write(reinterpret_cast<const char*>(e.tensor.cdata()),
                 std::streamsize(e.tensor.numel() * 4));
    }
    FL_CHECK(os.good(), IoError, "write failed: " + path);
}

// Loads values into the given registry (shapes must match); returns the
// embedded config text.
inline std::string load_params(const std::string& path, ParamList& params) {
    std::ifstream is(path, std::ios::binary);
    FL_CHECK(is.good(), IoError, "cannot open for reading: " + path);
    char magic[8];
    is.read(magic, 8);
    FL_CHECK(is.good() && std::memcmp(magic, "FLPARAMS", 8) == 0, IoError,
             "bad parameter archive: " + path);
    uint32_t version = detail::read_u32(is);
    FL_CHECK(version == 1, IoError, "unsupported archive version");
    uint32_t cfg_len = detail::read_u32(is);
    std::string config(cfg_len, '\0');
    is.read(config.data(), cfg_len);
    uint32_t count = detail::read_u32(is);

    std::map<std::string, Tensor*> lookup;
    for (auto& e : params.entries()) lookup[e.name] = &e.tensor;

    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = detail::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t rank = detail::read_u32(is);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = int(detail::read_u32(is));
        long n = numel_of(shape);
        auto it = lookup.find(name);
        FL_CHECK(it != lookup.end(), IoError, "archive parameter missing in model: " + name);
        FL_CHECK(it->second->shape() == shape, DimensionError,
                 "parameter shape mismatch for " + name);
        is.read(reinterpret_cast<char*>(it->second->data()), std::streamsize(n * 4));
    }
    FL_CHECK(is.good(), IoError, "truncated archive: " + path);
    return config;
}

// Small key=value text blocks used for sidecar metadata and embedded configs.
inline std::map<std::string, std::string> parse_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        auto pos = line.find('=');
        if (pos == std::string::npos) continue;
        std::string key = line.substr(0, pos);
        std::string val = line.substr(pos + 1);
        while (!key.empty() && key.back() == ' ') key.pop_back();
        while (!val.empty() && val.front() == ' ') val.erase(val.begin());
        kv[key] = val;
    }
    return kv;
}

} // namespace flowlens
