#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "blockmerge/tensor.hpp"
#include "json.hpp"

namespace blockmerge {

// Checkpoint file layout:
//   bytes 0..7    little-endian u64 N = header byte length
//   bytes 8..8+N  UTF-8 JSON object: name -> {dtype, shape, data_offsets},
//                 optional "__metadata__" string map
//   rest          raw row-major little-endian element buffer
// Offsets are relative to the first byte after the header and must tile the
// buffer exactly (non-overlapping, no gaps).

namespace detail {

inline void append_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void append_element_bytes(std::string& out, const Tensor& t) {
    if (t.dtype == Dtype::F32) {
        for (float f : t.data) {
            std::uint32_t b = std::bit_cast<std::uint32_t>(f);
            out.push_back(static_cast<char>(b & 0xff));
            out.push_back(static_cast<char>((b >> 8) & 0xff));
            out.push_back(static_cast<char>((b >> 16) & 0xff));
            out.push_back(static_cast<char>((b >> 24) & 0xff));
        }
    } else {
        for (float f : t.data) {
            std::uint16_t b = f32_to_f16_bits(f);
            out.push_back(static_cast<char>(b & 0xff));
            out.push_back(static_cast<char>((b >> 8) & 0xff));
        }
    }
}

}  // namespace detail

// Canonical byte serialization: metadata first (sorted keys), then tensors
// in map order with tightly packed ascending offsets, header JSON rendered
// without whitespace.
inline std::string serialize_checkpoint(const TensorMap& m) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    if (!m.metadata().empty()) {
        nlohmann::ordered_json meta = nlohmann::ordered_json::object();
        for (const auto& [k, v] : m.metadata()) meta[k] = v;
        header["__metadata__"] = std::move(meta);
    }
    std::uint64_t offset = 0;
    for (const auto& [name, t] : m) {
        nlohmann::ordered_json entry = nlohmann::ordered_json::object();
        entry["dtype"] = dtype_name(t.dtype);
        entry["shape"] = t.shape;
        entry["data_offsets"] = {offset, offset + t.byte_length()};
        header[name] = std::move(entry);
        offset += t.byte_length();
    }
    std::string header_str = header.dump();

    std::string out;
    out.reserve(8 + header_str.size() + offset);
    detail::append_u64_le(out, header_str.size());
    out += header_str;
    for (const auto& [name, t] : m) detail::append_element_bytes(out, t);
    return out;
}

inline void write_checkpoint(const TensorMap& m, const std::string& path) {
    std::string bytes = serialize_checkpoint(m);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoFailure("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoFailure("write failed: " + path);
}

inline TensorMap parse_checkpoint(const std::string& bytes, const std::string& origin) {
    if (bytes.size() < 8) throw TruncatedFile(origin + ": shorter than the 8-byte length prefix");
    std::uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i)
        header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    if (header_len > bytes.size() - 8)
        throw TruncatedFile(origin + ": file ends inside the JSON header");

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(bytes.begin() + 8,
                                               bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const nlohmann::json::exception& e) {
        throw MalformedHeader(origin + ": header is not valid JSON: " + e.what());
    }
    if (!header.is_object()) throw MalformedHeader(origin + ": header is not a JSON object");

    const std::uint64_t buffer_size = bytes.size() - 8 - header_len;
    const char* buffer = bytes.data() + 8 + header_len;

    TensorMap m;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> segments;
    std::uint64_t max_end = 0;

    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object()) throw MalformedHeader(origin + ": __metadata__ must be an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string())
                    throw MalformedHeader(origin + ": __metadata__ values must be strings");
                m.metadata()[k] = v.get<std::string>();
            }
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets"))
            throw MalformedHeader(origin + ": tensor entry missing dtype/shape/data_offsets: " + name);

        Tensor t;
        if (!entry["dtype"].is_string())
            throw MalformedHeader(origin + ": dtype must be a string: " + name);
        t.dtype = dtype_from_name(entry["dtype"].get<std::string>());

        if (!entry["shape"].is_array())
            throw MalformedHeader(origin + ": shape must be an array: " + name);
        for (const auto& e : entry["shape"]) {
            if (!e.is_number_unsigned())
                throw MalformedHeader(origin + ": shape extents must be non-negative integers: " + name);
            t.shape.push_back(e.get<std::uint64_t>());
        }

        const auto& off = entry["data_offsets"];
        if (!off.is_array() || off.size() != 2 || !off[0].is_number_unsigned() ||
            !off[1].is_number_unsigned())
            throw MalformedHeader(origin + ": data_offsets must be [begin, end]: " + name);
        std::uint64_t begin = off[0].get<std::uint64_t>();
        std::uint64_t end = off[1].get<std::uint64_t>();
        if (end < begin) throw MalformedHeader(origin + ": data_offsets end before begin: " + name);
        if (end - begin != t.numel() * dtype_size(t.dtype))
            throw MalformedHeader(origin + ": data_offsets span does not match shape: " + name);
        if (end > buffer_size) throw TruncatedFile(origin + ": buffer ends inside tensor: " + name);
        segments.emplace_back(begin, end);
        max_end = std::max(max_end, end);

        const std::uint64_t n = t.numel();
        t.data.reserve(n);
        const unsigned char* p = reinterpret_cast<const unsigned char*>(buffer + begin);
        if (t.dtype == Dtype::F32) {
            for (std::uint64_t i = 0; i < n; ++i, p += 4) {
                std::uint32_t b = static_cast<std::uint32_t>(p[0]) |
                                  (static_cast<std::uint32_t>(p[1]) << 8) |
                                  (static_cast<std::uint32_t>(p[2]) << 16) |
                                  (static_cast<std::uint32_t>(p[3]) << 24);
                t.data.push_back(std::bit_cast<float>(b));
            }
        } else {
            for (std::uint64_t i = 0; i < n; ++i, p += 2) {
                std::uint16_t b = static_cast<std::uint16_t>(
                    static_cast<std::uint16_t>(p[0]) | (static_cast<std::uint16_t>(p[1]) << 8));
                t.data.push_back(detail::f16_bits_to_f32(b));
            }
        }
        try {
            m.add(name, std::move(t));
        } catch (const DataError& e) {
            throw MalformedHeader(origin + ": " + e.what());
        }
    }

    // offsets must tile the buffer exactly
    std::sort(segments.begin(), segments.end());
    std::uint64_t cursor = 0;
    for (const auto& [begin, end] : segments) {
        if (begin != cursor)
            throw MalformedHeader(origin + ": data offsets overlap or leave a gap");
        cursor = end;
    }
    if (cursor != buffer_size)
        throw MalformedHeader(origin + ": data buffer is not tightly covered by offsets");
    (void)max_end;
    return m;
}

inline TensorMap read_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoFailure("cannot open: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_checkpoint(bytes, path);
}

}  // namespace blockmerge
