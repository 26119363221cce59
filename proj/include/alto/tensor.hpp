#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "alto/errors.hpp"

namespace alto {

// Dense row-major shape of rank 1..4. Rank-4 tensors are laid out NCHW.
struct Shape {
    std::array<int64_t, 4> dim{1, 1, 1, 1};
    int rank = 0;

    Shape() = default;
    Shape(std::initializer_list<int64_t> dims) {
        assert(dims.size() >= 1 && dims.size() <= 4);
        rank = static_cast<int>(dims.size());
        int i = 0;
        for (int64_t d : dims) dim[i++] = d;
        for (; i < 4; ++i) dim[i] = 1;
    }

    int64_t numel() const { return dim[0] * dim[1] * dim[2] * dim[3]; }
    int64_t operator[](int i) const { return dim[i]; }

    bool operator==(const Shape& o) const { return rank == o.rank && dim == o.dim; }
    bool operator!=(const Shape& o) const { return !(*this == o); }

    std::string str() const {
        std::string s = "(";
        for (int i = 0; i < rank; ++i) s += std::to_string(dim[i]) + (i + 1 < rank ? "," : "");
        return s + ")";
    }
};

// Minimal allocator pinning every buffer to a 64-byte boundary. Vectorized
// reductions (Eigen's and the compiler's) split their work based on the
// runtime alignment of the data pointer; with ordinary malloc that alignment
// varies from run to run with heap layout, and the resulting re-associations
// make same-seed trainings differ in the last bits. A fixed alignment makes
// the split — and therefore every reduction — reproducible.
template <typename S>
struct AlignedAlloc {
    using value_type = S;
    static constexpr std::align_val_t kAlign{64};

    AlignedAlloc() = default;
    template <typename U>
    AlignedAlloc(const AlignedAlloc<U>&) noexcept {}

    S* allocate(size_t n) { return static_cast<S*>(::operator new(n * sizeof(S), kAlign)); }
    void deallocate(S* p, size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAlloc<U>&) const noexcept {
        return true;
    }
};

// Dense row-major tensor. The scalar type is float for training speed or
// double for gradient checks; both instantiations share all code paths.
template <typename S>
struct Tensor {
    Shape shape;
    std::vector<S, AlignedAlloc<S>> d;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(s), d(static_cast<size_t>(s.numel()), S(0)) {}
    Tensor(Shape s, S fill) : shape(s), d(static_cast<size_t>(s.numel()), fill) {}

    static Tensor zeros(Shape s) { return Tensor(s); }
    static Tensor full(Shape s, S v) { return Tensor(s, v); }

    int64_t numel() const { return shape.numel(); }
    S* data() { return d.data(); }
    const S* data() const { return d.data(); }

    S& operator[](int64_t i) { return d[static_cast<size_t>(i)]; }
    const S& operator[](int64_t i) const { return d[static_cast<size_t>(i)]; }

    // NCHW accessors; lower-rank tensors use the leading indices.
    S& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return d[static_cast<size_t>(((n * shape.dim[1] + c) * shape.dim[2] + h) * shape.dim[3] + w)];
    }
    const S& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return d[static_cast<size_t>(((n * shape.dim[1] + c) * shape.dim[2] + h) * shape.dim[3] + w)];
    }
    S& at(int64_t n, int64_t c) { return at(n, c, 0, 0); }
    const S& at(int64_t n, int64_t c) const { return at(n, c, 0, 0); }

    void fill(S v) { std::fill(d.begin(), d.end(), v); }

    bool all_finite() const {
        for (S v : d)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename T>
    Tensor<T> cast() const {
        Tensor<T> out(shape);
        for (size_t i = 0; i < d.size(); ++i) out.d[i] = static_cast<T>(d[i]);
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

} // namespace alto
