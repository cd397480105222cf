#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "bridge/errors.hpp"

namespace bridge {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Allocator that default-initializes on unqualified construct, so vector(n)
// skips the zero fill for trivial T. Fill and copy construction are unchanged.
template <typename T>
struct uninit_alloc : std::allocator<T> {
    using std::allocator<T>::allocator;
    template <typename U>
    struct rebind {
        using other = uninit_alloc<U>;
    };
    template <typename U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <typename U, typename... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

template <typename T>
using TVec = std::vector<T, uninit_alloc<T>>;

// Dense row-major tensor. Plain value type; autodiff bookkeeping lives in Tape.
template <typename T>
struct Tensor {
    Shape shape;
    TVec<T> data;

    Tensor() = default;
    Tensor(Shape s, TVec<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel(shape))
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) {
        TVec<T> d(static_cast<size_t>(numel(s)), T(0));
        return Tensor(std::move(s), std::move(d));
    }
    // every element must be written before it is read
    static Tensor uninit(Shape s) {
        TVec<T> d(static_cast<size_t>(numel(s)));
        return Tensor(std::move(s), std::move(d));
    }
    static Tensor full(Shape s, T v) {
        TVec<T> d(static_cast<size_t>(numel(s)), v);
        return Tensor(std::move(s), std::move(d));
    }
    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    template <typename Rng>
    static Tensor randn(Shape s, Rng& rng, T stddev = T(1)) {
        std::normal_distribution<double> nd(0.0, 1.0);
        TVec<T> d(static_cast<size_t>(numel(s)));
        for (auto& x : d) x = static_cast<T>(nd(rng)) * stddev;
        return Tensor(std::move(s), std::move(d));
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        TVec<U> d(data.size());
        for (size_t i = 0; i < data.size(); ++i) d[i] = static_cast<U>(data[i]);
        return Tensor<U>(shape, std::move(d));
    }
};

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (sizeof(T) == 4) return "f32";
    else return "f64";
}

// TNSR container: one text header line, then raw little-endian row-major values.
//   TNSR v1 <dtype> <rank> <d0> <d1> ...
template <typename T>
void save_tensor(std::ostream& os, const Tensor<T>& t) {
    os << "TNSR v1 " << dtype_name<T>() << " " << t.rank();
    for (int64_t d : t.shape) os << " " << d;
    os << "\n";
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(T)));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    save_tensor(f, t);
}

template <typename T>
Tensor<T> load_tensor(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("tensor: missing header");
    std::istringstream hs(line);
    std::string magic, ver, dtype;
    int64_t rank = -1;
    hs >> magic >> ver >> dtype >> rank;
    if (magic != "TNSR" || ver != "v1") throw DataError("tensor: bad magic '" + magic + "'");
    if (dtype != dtype_name<T>())
        throw DataError("tensor: dtype mismatch, file has " + dtype + ", expected " +
                        dtype_name<T>());
    if (rank < 0 || rank > 8) throw DataError("tensor: bad rank");
    Shape s(static_cast<size_t>(rank));
    for (auto& d : s) {
        if (!(hs >> d) || d < 0) throw DataError("tensor: bad extent");
    }
    Tensor<T> t = Tensor<T>::zeros(s);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(T)));
    if (!is) throw DataError("tensor: truncated payload");
    return t;
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    return load_tensor<T>(f);
}

}  // namespace bridge
