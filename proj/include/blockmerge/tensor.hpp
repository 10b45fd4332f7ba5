#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "blockmerge/errors.hpp"

namespace blockmerge {

enum class Dtype : std::uint8_t { F32, F16 };

inline std::size_t dtype_size(Dtype d) { return d == Dtype::F32 ? 4 : 2; }

inline const char* dtype_name(Dtype d) { return d == Dtype::F32 ? "F32" : "F16"; }

inline Dtype dtype_from_name(const std::string& s) {
    if (s == "F32") return Dtype::F32;
    if (s == "F16") return Dtype::F16;
    throw UnsupportedDtype("unsupported dtype: " + s);
}

namespace detail {

// IEEE 754 binary16 <-> binary32, bit-level. Widening is exact; narrowing
// rounds to nearest even. Round-tripping any half value reproduces its bits.
inline float f16_bits_to_f32(std::uint16_t h) {
    std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1f;
    std::uint32_t frac = h & 0x3ffu;
    std::uint32_t bits;
    if (exp == 0) {
        if (frac == 0) {
            bits = sign;  // +-0
        } else {
            // subnormal half: normalize into f32 (value = frac * 2^-24)
            int shift = 0;
            while ((frac & 0x400u) == 0) {
                frac <<= 1;
                ++shift;
            }
            frac &= 0x3ffu;
            bits = sign | (static_cast<std::uint32_t>(113 - shift) << 23) | (frac << 13);
        }
    } else if (exp == 31) {
        bits = sign | 0x7f800000u | (frac << 13);  // inf / nan, payload kept
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (frac << 13);
    }
    return std::bit_cast<float>(bits);
}

inline std::uint16_t f32_to_f16_bits(float f) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    std::uint32_t sign = (bits >> 16) & 0x8000u;
    std::uint32_t exp = (bits >> 23) & 0xffu;
    std::uint32_t frac = bits & 0x7fffffu;
    if (exp == 0xff) {  // inf / nan
        std::uint16_t payload = static_cast<std::uint16_t>(frac >> 13);
        if (frac != 0 && payload == 0) payload = 1;  // keep nan a nan
        return static_cast<std::uint16_t>(sign | 0x7c00u | payload);
    }
    int e = static_cast<int>(exp) - 127 + 15;
    if (e >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);  // overflow -> inf
    if (e <= 0) {
        if (e < -10) return static_cast<std::uint16_t>(sign);  // underflow -> 0
        // subnormal half: shift in the implicit leading 1, round to nearest even
        std::uint32_t mant = frac | 0x800000u;
        int shift = 14 - e;  // 14..24
        std::uint32_t half = mant >> shift;
        std::uint32_t rem = mant & ((1u << shift) - 1);
        std::uint32_t halfway = 1u << (shift - 1);
        if (rem > halfway || (rem == halfway && (half & 1))) ++half;
        return static_cast<std::uint16_t>(sign | half);
    }
    std::uint16_t h = static_cast<std::uint16_t>(sign | (e << 10) | (frac >> 13));
    std::uint32_t rem = frac & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (h & 1))) ++h;  // may carry into exponent; that is correct
    return h;
}

}  // namespace detail

// Dense tensor. Elements are held widened to F32 for arithmetic; the dtype
// records the on-disk element type and drives narrowing on save.
struct Tensor {
    Dtype dtype = Dtype::F32;
    std::vector<std::uint64_t> shape;
    std::vector<float> data;

    std::uint64_t numel() const {
        std::uint64_t n = 1;
        for (auto e : shape) n *= e;
        return n;
    }

    std::uint64_t byte_length() const { return numel() * dtype_size(dtype); }
};

inline Tensor make_tensor(std::vector<std::uint64_t> shape, std::vector<float> data,
                          Dtype dtype = Dtype::F32) {
    Tensor t;
    t.dtype = dtype;
    t.shape = std::move(shape);
    t.data = std::move(data);
    if (t.numel() != t.data.size())
        throw ShapeMismatch("tensor element count does not match its shape");
    return t;
}

// One checkpoint in memory: ordered name -> tensor plus string metadata.
// Iteration order is the on-disk header order. Immutable-by-convention
// after load; safe to share read-only across threads.
class TensorMap {
public:
    using Item = std::pair<std::string, Tensor>;

    void add(std::string name, Tensor t) {
        if (name.empty()) throw DataError("tensor name must be non-empty");
        if (name.find('\0') != std::string::npos)
            throw DataError("tensor name must not contain NUL bytes");
        if (index_.count(name)) throw DataError("duplicate tensor name: " + name);
        index_.emplace(name, items_.size());
        items_.emplace_back(std::move(name), std::move(t));
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw UnknownParameter("unknown parameter: " + name);
        return items_[it->second].second;
    }

    Tensor& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw UnknownParameter("unknown parameter: " + name);
        return items_[it->second].second;
    }

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(items_.size());
        for (const auto& [n, t] : items_) out.push_back(n);
        return out;
    }

    std::map<std::string, std::string>& metadata() { return metadata_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

private:
    std::vector<Item> items_;
    std::unordered_map<std::string, std::size_t> index_;
    std::map<std::string, std::string> metadata_;
};

// Ordered (name, dtype, shape) triples; element values do not participate.
struct ArchitectureSignature {
    std::vector<std::tuple<std::string, Dtype, std::vector<std::uint64_t>>> entries;

    bool operator==(const ArchitectureSignature&) const = default;
};

inline ArchitectureSignature signature(const TensorMap& m) {
    ArchitectureSignature sig;
    sig.entries.reserve(m.size());
    for (const auto& [name, t] : m) sig.entries.emplace_back(name, t.dtype, t.shape);
    return sig;
}

inline void require_same_signature(const TensorMap& a, const TensorMap& b, const char* what) {
    if (!(signature(a) == signature(b)))
        throw SignatureMismatch(std::string(what) + ": architecture signatures differ");
}

}  // namespace blockmerge
