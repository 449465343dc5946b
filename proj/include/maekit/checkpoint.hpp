#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "maekit/errors.hpp"
#include "maekit/model.hpp"
#include "maekit/tensor.hpp"

// Container layout (all integers little-endian):
//
//   "MAEKIT"                      6 bytes
//   version                       u16
//   header length                 u32, then that many bytes of "key=value\n"
//                                 lines sorted by key
//   tensor count                  u32
//   per tensor, sorted by name:   u32 name length, name bytes, u32 rank,
//                                 rank x u32 dims, IEEE-754 binary32 values
namespace maekit {

inline constexpr char kCheckpointMagic[] = "MAEKIT";
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct StoredTensor {
    Shape shape;
    std::vector<float> values;
};

struct Container {
    std::map<std::string, std::string> header;
    std::map<std::string, StoredTensor> tensors;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

inline void put_u16(std::string& out, std::uint16_t v) { out.append(reinterpret_cast<const char*>(&v), 2); }
inline void put_u32(std::string& out, std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); }

class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    const char* take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw LoadError(source_ + ": truncated checkpoint while reading " + what + " at byte " + std::to_string(pos_));
        }
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        std::memcpy(&v, take(4, what), 4);
        return v;
    }

    std::uint16_t u16(const char* what) {
        std::uint16_t v;
        std::memcpy(&v, take(2, what), 2);
        return v;
    }

    bool done() const { return pos_ == bytes_.size(); }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::string& bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_container(const Container& c) {
    std::string out(kCheckpointMagic, 6);
    detail::put_u16(out, kCheckpointVersion);
    std::string header;
    for (const auto& [k, v] : c.header) {
        if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ContractError("checkpoint header entry '" + k + "' contains a reserved character");
        }
        header += k + "=" + v + "\n";
    }
    detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    detail::put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& [name, t] : c.tensors) {
        if (numel_of(t.shape) != t.values.size()) throw DimensionError("checkpoint tensor '" + name + "' is inconsistent");
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
        out.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
    }
    return out;
}

inline Container parse_container(const std::string& bytes, const std::string& source = "checkpoint") {
    detail::ByteReader in(bytes, source);
    if (std::string(in.take(6, "magic"), 6) != kCheckpointMagic) {
        throw LoadError(source + ": not a MAEKIT checkpoint (bad magic)");
    }
    const auto version = in.u16("version");
    if (version != kCheckpointVersion) {
        throw LoadError(source + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                        std::to_string(kCheckpointVersion) + ")");
    }
    Container c;
    const auto header_len = in.u32("header length");
    const std::string header(in.take(header_len, "header"), header_len);
    std::size_t start = 0;
    while (start < header.size()) {
        const auto end = header.find('\n', start);
        if (end == std::string::npos) throw LoadError(source + ": unterminated header line");
        const std::string line = header.substr(start, end - start);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw LoadError(source + ": malformed header line '" + line + "'");
        c.header[line.substr(0, eq)] = line.substr(eq + 1);
        start = end + 1;
    }
    const auto count = in.u32("tensor count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = in.u32("tensor name length");
        std::string name(in.take(name_len, "tensor name"), name_len);
        const auto rank = in.u32("tensor rank");
        if (rank > 8) throw LoadError(source + ": implausible rank " + std::to_string(rank) + " for '" + name + "'");
        StoredTensor t;
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = in.u32("tensor dims");
            if (d == 0) throw LoadError(source + ": zero dimension in '" + name + "'");
            t.shape.push_back(d);
            n *= d;
        }
        if (n > in.remaining() / sizeof(float)) {
            throw LoadError(source + ": truncated checkpoint while reading values of '" + name + "'");
        }
        t.values.resize(n);
        std::memcpy(t.values.data(), in.take(n * sizeof(float), "tensor values"), n * sizeof(float));
        if (!c.tensors.emplace(name, std::move(t)).second) throw LoadError(source + ": duplicate tensor '" + name + "'");
    }
    if (!in.done()) throw LoadError(source + ": " + std::to_string(in.remaining()) + " trailing bytes after tensors");
    return c;
}

inline void write_container(const Container& c, const std::filesystem::path& path) {
    const auto bytes = serialize_container(c);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open checkpoint '" + path.string() + "'");
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_container(bytes, path.string());
}

template <Scalar T>
StoredTensor store(const Tensor<T>& t) {
    return {t.shape(), std::vector<float>(t.data().begin(), t.data().end())};
}

template <Scalar T>
Tensor<T> restore(const StoredTensor& t, bool requires_grad = true) {
    return Tensor<T>(t.shape, std::vector<T>(t.values.begin(), t.values.end()), requires_grad);
}

template <Scalar T>
Container model_container(const MaeModel<T>& model) {
    Container c;
    c.header = model.cfg.to_fields();
    c.header["kind"] = "mae";
    for (const auto& [name, t] : model.named_parameters()) c.tensors.emplace(name, store(t));
    return c;
}

template <Scalar T>
void save_checkpoint(const MaeModel<T>& model, const std::filesystem::path& path) {
    write_container(model_container(model), path);
}

template <Scalar T = float>
MaeModel<T> model_from_container(const Container& c, const std::string& source = "checkpoint") {
    const auto kind = c.header.find("kind");
    if (kind == c.header.end() || kind->second != "mae") {
        throw LoadError(source + ": checkpoint kind is not 'mae'");
    }
    ArchConfig cfg;
    try {
        cfg = ArchConfig::from_fields(c.header);
    } catch (const ConfigError& e) {
        throw LoadError(source + ": " + e.what());
    }
    const auto specs = parameter_specs(cfg);
    if (specs.size() != c.tensors.size()) {
        throw LoadError(source + ": expected " + std::to_string(specs.size()) + " tensors, found " +
                        std::to_string(c.tensors.size()));
    }
    std::map<std::string, Tensor<T>> params;
    for (const auto& spec : specs) {
        auto it = c.tensors.find(spec.name);
        if (it == c.tensors.end()) throw LoadError(source + ": missing tensor '" + spec.name + "'");
        if (it->second.shape != spec.shape) {
            throw LoadError(source + ": tensor '" + spec.name + "' has shape " + to_string(it->second.shape) +
                            ", expected " + to_string(spec.shape));
        }
        params.emplace(spec.name, restore<T>(it->second));
    }
    return assemble_model(cfg, params);
}

template <Scalar T = float>
MaeModel<T> load_checkpoint(const std::filesystem::path& path) {
    return model_from_container<T>(read_container(path), path.string());
}

/// FNV-1a over parameter names, shapes and float32 bit patterns.
template <Scalar T>
std::uint64_t tensor_checksum(const std::vector<std::pair<std::string, Tensor<T>>>& named) {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [name, t] : named) {
        mix(name.data(), name.size());
        for (auto d : t.shape()) {
            const auto d32 = static_cast<std::uint32_t>(d);
            mix(&d32, 4);
        }
        for (T v : t.data()) mix(&v, sizeof(T));
    }
    return h;
}

/// Checksum of the encoder (the part reused by downstream heads).
template <Scalar T>
std::uint64_t backbone_checksum(const MaeModel<T>& model) {
    std::vector<std::pair<std::string, Tensor<T>>> encoder;
    for (const auto& entry : model.named_parameters())
        if (entry.first.starts_with("encoder.")) encoder.push_back(entry);
    return tensor_checksum(encoder);
}

template <Scalar T>
std::uint64_t model_checksum(const MaeModel<T>& model) {
    return tensor_checksum(model.named_parameters());
}

}  // namespace maekit
