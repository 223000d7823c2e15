#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <string>

#include "cim/errors.hpp"

namespace cim {

// Dense row-major extents, rank 0 (scalar) through 4.
class Shape {
public:
    Shape() = default;

    Shape(std::initializer_list<int64_t> dims) {
        if (dims.size() > 4) throw DimError("rank > 4 not supported");
        for (int64_t d : dims) {
            if (d <= 0) throw DimError("non-positive extent in shape");
            d_[rank_++] = d;
        }
    }

    static Shape scalar() { return Shape{}; }

    int rank() const { return rank_; }

    int64_t numel() const {
        int64_t n = 1;
        for (int i = 0; i < rank_; ++i) n *= d_[i];
        return n;
    }

    int64_t operator[](int i) const { return d_[i]; }

    bool operator==(const Shape& o) const {
        if (rank_ != o.rank_) return false;
        for (int i = 0; i < rank_; ++i)
            if (d_[i] != o.d_[i]) return false;
        return true;
    }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        if (rank_ == 0) return "scalar";
        std::string s;
        for (int i = 0; i < rank_; ++i) {
            if (i) s += "x";
            s += std::to_string(d_[i]);
        }
        return s;
    }

private:
    std::array<int64_t, 4> d_{1, 1, 1, 1};
    int rank_ = 0;
};

}  // namespace cim
