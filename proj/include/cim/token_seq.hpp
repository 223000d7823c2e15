#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cim/errors.hpp"
#include "cim/tensor.hpp"

namespace cim {

enum class Role : uint8_t { avg, patch, cls };

inline char role_char(Role r) {
    switch (r) {
        case Role::avg: return 'a';
        case Role::patch: return 'p';
        default: return 'c';
    }
}

// Activation block [len x dim] with one role label per row. The data tensor
// and the role vector always agree on length.
template <class T>
struct BasicTokenSeq {
    BasicTensor<T> data;      // [len, dim]
    std::vector<Role> roles;  // len entries

    int64_t len() const { return data.shape()[0]; }
    int64_t dim() const { return data.shape()[1]; }

    int64_t count(Role r) const {
        int64_t n = 0;
        for (Role x : roles)
            if (x == r) ++n;
        return n;
    }

    std::string role_str() const {
        std::string s;
        for (Role r : roles) s += role_char(r);
        return s;
    }

    void check() const {
        if (data.shape().rank() != 2)
            throw ContractError("token sequence data must be rank 2, got " + data.shape().str());
        if (static_cast<int64_t>(roles.size()) != len())
            throw ContractError("token sequence roles length " + std::to_string(roles.size()) +
                                " != data rows " + std::to_string(len()));
    }

    // True iff roles are avg*k then patch*n then one trailing cls.
    bool canonical() const {
        if (roles.empty() || roles.back() != Role::cls) return false;
        size_t i = 0;
        while (i < roles.size() && roles[i] == Role::avg) ++i;
        while (i + 1 < roles.size() && roles[i] == Role::patch) ++i;
        return i + 1 == roles.size();
    }
};

using TokenSeq = BasicTokenSeq<float>;
using DTokenSeq = BasicTokenSeq<double>;

inline std::vector<Role> patch_cls_roles(int64_t n) {
    std::vector<Role> r(static_cast<size_t>(n), Role::patch);
    r.push_back(Role::cls);
    return r;
}

}  // namespace cim
