#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gme/tensor.hpp"

namespace gme {

// Checkpoint container: versioned magic, a JSON header (config echo, seed,
// epoch, metrics), then named parameter tensors stored as 64-bit floats.
inline constexpr char kCheckpointMagic[8] = {'G', 'M', 'E', 'C', 'K', '0', '0', '1'};

namespace detail {
template <typename V>
void write_pod(std::ostream& out, const V& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}
template <typename V>
V read_pod(std::istream& in) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}
}  // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const nlohmann::json& meta,
                     const std::vector<Param<T>*>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::string js = meta.dump();
    detail::write_pod<uint64_t>(out, js.size());
    out.write(js.data(), static_cast<std::streamsize>(js.size()));
    detail::write_pod<uint64_t>(out, params.size());
    for (const Param<T>* p : params) {
        detail::write_pod<uint32_t>(out, static_cast<uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        const int32_t dims[4] = {p->value.b, p->value.c, p->value.h, p->value.w};
        out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
        for (const T& x : p->value.v) detail::write_pod<double>(out, static_cast<double>(x));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

// Loads parameter values into `params` (matched positionally, verified by
// name and shape). Returns the JSON header.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path, const std::vector<Param<T>*>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint64_t jlen = detail::read_pod<uint64_t>(in);
    std::string js(jlen, '\0');
    in.read(js.data(), static_cast<std::streamsize>(jlen));
    nlohmann::json meta = nlohmann::json::parse(js);
    const uint64_t n = detail::read_pod<uint64_t>(in);
    if (n != params.size())
        throw std::runtime_error("checkpoint: architecture mismatch — file has " +
                                 std::to_string(n) + " tensors, network expects " +
                                 std::to_string(params.size()));
    for (Param<T>* p : params) {
        const uint32_t nl = detail::read_pod<uint32_t>(in);
        std::string name(nl, '\0');
        in.read(name.data(), nl);
        int32_t dims[4];
        in.read(reinterpret_cast<char*>(dims), sizeof(dims));
        if (!in) throw std::runtime_error("checkpoint: truncated file " + path);
        if (name != p->name || dims[0] != p->value.b || dims[1] != p->value.c ||
            dims[2] != p->value.h || dims[3] != p->value.w)
            throw std::runtime_error("checkpoint: architecture mismatch at tensor '" + name +
                                     "' (expected '" + p->name + "' " + p->value.shape_str() +
                                     ")");
        for (T& x : p->value.v) x = static_cast<T>(detail::read_pod<double>(in));
    }
    return meta;
}

}  // namespace gme
