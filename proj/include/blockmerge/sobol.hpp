#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "blockmerge/errors.hpp"
#include "blockmerge/sobol_table.hpp"

namespace blockmerge {

inline constexpr int kSobolMaxDim = detail::kSobolTableDims + 1;

// Base-2 Sobol sequence in Gray-code order (index 0 is the all-zero point
// and is skipped; the sequence starts at index 1). 32-bit direction
// integers, so up to 2^32 points.
class SobolSequence {
public:
    explicit SobolSequence(int dim) : dim_(dim), state_(dim, 0u), index_(0) {
        if (dim < 1) throw DimensionUnsupported("Sobol dimension must be positive");
        if (dim > kSobolMaxDim)
            throw DimensionUnsupported("Sobol dimension " + std::to_string(dim) +
                                       " exceeds the direction-number table (" +
                                       std::to_string(kSobolMaxDim) + ")");
        v_.assign(static_cast<std::size_t>(dim) * kBits, 0u);
        for (int d = 0; d < dim; ++d) init_dimension(d);
    }

    int dim() const { return dim_; }

    // Next point, in-place into `out` (size dim). All coordinates in (0,1).
    void next(std::vector<double>& out) {
        out.resize(dim_);
        const unsigned c = static_cast<unsigned>(std::countr_one(index_));  // lowest zero bit of index
        ++index_;
        for (int d = 0; d < dim_; ++d) {
            state_[d] ^= v_[static_cast<std::size_t>(d) * kBits + c];
            out[d] = static_cast<double>(state_[d]) * 0x1.0p-32;
        }
    }

private:
    static constexpr int kBits = 32;

    void init_dimension(int d) {
        std::uint32_t* v = &v_[static_cast<std::size_t>(d) * kBits];
        if (d == 0) {
            for (int j = 0; j < kBits; ++j) v[j] = 1u << (kBits - 1 - j);
            return;
        }
        const std::uint32_t poly = detail::kSobolPoly[d - 1];
        const int s = 31 - std::countl_zero(poly);  // polynomial degree
        const std::uint32_t a = (poly >> 1) & ((1u << (s - 1)) - 1u);
        const std::uint32_t* m = detail::kSobolMinit[d - 1];
        for (int j = 0; j < s && j < kBits; ++j) v[j] = m[j] << (kBits - 1 - j);
        for (int j = s; j < kBits; ++j) {
            v[j] = v[j - s] ^ (v[j - s] >> s);
            for (int k = 1; k < s; ++k)
                if ((a >> (s - 1 - k)) & 1u) v[j] ^= v[j - k];
        }
    }

    int dim_;
    std::vector<std::uint32_t> v_;
    std::vector<std::uint32_t> state_;
    std::uint64_t index_;
};

// First n points of the sequence (indices 1..n).
inline std::vector<std::vector<double>> sobol_sequence(int dim, int n) {
    SobolSequence seq(dim);
    std::vector<std::vector<double>> points(n);
    for (auto& p : points) seq.next(p);
    return points;
}

}  // namespace blockmerge
