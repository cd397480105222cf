#pragma once

#include <cstring>
#include <random>

#include "bridge/grid.hpp"
#include "bridge/tensor.hpp"

namespace testutil {

template <typename T>
bool bits_equal(const bridge::Tensor<T>& a, const bridge::Tensor<T>& b) {
    if (a.shape != b.shape) return false;
    return std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(T)) == 0;
}

inline bool grids_equal(const bridge::Grid& a, const bridge::Grid& b) {
    if (!a.same_dims(b)) return false;
    return std::memcmp(a.v.data(), b.v.data(), a.v.size() * sizeof(double)) == 0;
}

// random binary mask with a guaranteed nonzero blob
inline bridge::Grid random_mask(std::mt19937_64& rng, int h, int w) {
    bridge::Grid m(1, h, w);
    int cy = (int)(rng() % (uint64_t)h), cx = (int)(rng() % (uint64_t)w);
    int ry = 1 + (int)(rng() % 4), rx = 1 + (int)(rng() % 4);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (std::abs(y - cy) <= ry && std::abs(x - cx) <= rx) m.at(0, y, x) = 1.0;
    // sprinkle extra pixels
    for (int k = 0; k < 6; ++k)
        m.at(0, (int)(rng() % (uint64_t)h), (int)(rng() % (uint64_t)w)) = (rng() % 2) ? 1.0 : 0.0;
    if (std::abs(cy) >= 0) m.at(0, cy, cx) = 1.0;  // keep nonempty
    return m;
}

inline bridge::Grid random_image(std::mt19937_64& rng, int c, int h, int w) {
    bridge::Grid g(c, h, w);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : g.v) v = u(rng);
    return g;
}

inline bridge::Grid complement(const bridge::Grid& m) {
    bridge::Grid o = m;
    for (auto& v : o.v) v = 1.0 - v;
    return o;
}

inline bool subset(const bridge::Grid& a, const bridge::Grid& b) {  // a <= b pointwise
    for (size_t i = 0; i < a.v.size(); ++i)
        if (a.v[i] > b.v[i]) return false;
    return true;
}

}  // namespace testutil
