#pragma once

// Checkpoint layout (all integers little-endian):
//   "DAMKIT01"
//   repeated until EOF:
//     u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 values[prod(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "damkit/error.hpp"
#include "damkit/num/tensor.hpp"

namespace damkit::num {

inline constexpr std::string_view kCheckpointMagic = "DAMKIT01";

namespace detail {

template <class U>
void put_le(std::vector<unsigned char>& out, U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::vector<unsigned char>& out, double d) { put_le(out, std::bit_cast<std::uint64_t>(d)); }

class ByteReader {
public:
    explicit ByteReader(const std::vector<unsigned char>& b) : bytes_(b) {}
    bool done() const { return pos_ == bytes_.size(); }
    template <class U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
    std::string get_str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace detail

template <class T>
std::vector<unsigned char> serialize_params(const std::vector<const Param<T>*>& params) {
    std::vector<unsigned char> out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    for (const auto* p : params) {
        detail::put_le(out, static_cast<std::uint32_t>(p->name.size()));
        out.insert(out.end(), p->name.begin(), p->name.end());
        detail::put_le(out, static_cast<std::uint32_t>(p->value.rank()));
        for (auto d : p->value.shape()) detail::put_le(out, static_cast<std::uint64_t>(d));
        for (std::size_t i = 0; i < p->value.size(); ++i) detail::put_f64(out, static_cast<double>(p->value[i]));
    }
    return out;
}

inline std::map<std::string, Tensor<double>> deserialize_params(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < kCheckpointMagic.size() ||
        std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
        throw FormatError("not a DAMKIT01 checkpoint");
    std::vector<unsigned char> body(bytes.begin() + kCheckpointMagic.size(), bytes.end());
    detail::ByteReader r(body);
    std::map<std::string, Tensor<double>> out;
    while (!r.done()) {
        const auto name = r.get_str(r.get<std::uint32_t>());
        const auto rank = r.get<std::uint32_t>();
        if (rank > 8) throw FormatError("checkpoint record '" + name + "' has implausible rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
        std::vector<double> data(shape_size(shape));
        for (auto& v : data) v = r.get_f64();
        if (!out.emplace(name, Tensor<double>(shape, std::move(data))).second)
            throw FormatError("duplicate checkpoint record '" + name + "'");
    }
    return out;
}

/// Copies checkpoint records into `params` by name; every param must be present
/// with a matching shape.
template <class T>
void assign_params(const std::map<std::string, Tensor<double>>& records, const ParamRefs<T>& params) {
    for (auto* p : params) {
        auto it = records.find(p->name);
        if (it == records.end()) throw FormatError("checkpoint lacks parameter '" + p->name + "'");
        if (it->second.shape() != p->value.shape())
            throw ShapeMismatch("checkpoint parameter '" + p->name + "' has shape " + shape_str(it->second.shape()) +
                                ", model expects " + shape_str(p->value.shape()));
        p->value = it->second.template cast<T>();
    }
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace damkit::num
