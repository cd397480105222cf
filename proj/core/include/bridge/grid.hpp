#pragma once

#include <string>
#include <vector>

#include "bridge/tensor.hpp"

namespace bridge {

// Dense channels x height x width array of reals in [0,1]. Used for images,
// per-pixel masks (1 channel) and pixel-space latents.
struct Grid {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int c, int h, int w) : channels(c), height(h), width(w), v((size_t)c * h * w, 0.0) {}

    double& at(int c, int y, int x) { return v[((size_t)c * height + y) * width + x]; }
    double at(int c, int y, int x) const { return v[((size_t)c * height + y) * width + x]; }

    size_t size() const { return v.size(); }
    bool same_dims(const Grid& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// Binary masks are 1-channel Grids with values in {0,1}.
bool is_binary(const Grid& m);

Grid load_ppm(const std::string& path);                  // P6, 8-bit
void save_ppm(const std::string& path, const Grid& g);   // clamps to [0,1]
Grid load_pgm(const std::string& path);                  // P5; 0 -> 0, 255 -> 1
void save_pgm(const std::string& path, const Grid& m);

// Tokens are row-major patches; within a token values are ordered
// channel-major, then patch row, then patch column.
template <typename T>
Tensor<T> patchify(const Grid& g, int patch) {
    if (patch <= 0 || g.height % patch != 0 || g.width % patch != 0)
        throw ShapeError("patchify: patch " + std::to_string(patch) +
                         " does not divide " + std::to_string(g.height) + "x" +
                         std::to_string(g.width));
    int gh = g.height / patch, gw = g.width / patch;
    int64_t td = (int64_t)patch * patch * g.channels;
    Tensor<T> t = Tensor<T>::zeros({(int64_t)gh * gw, td});
    for (int r = 0; r < gh; ++r)
        for (int c = 0; c < gw; ++c) {
            T* tok = t.data.data() + ((int64_t)r * gw + c) * td;
            int64_t k = 0;
            for (int ch = 0; ch < g.channels; ++ch)
                for (int pr = 0; pr < patch; ++pr)
                    for (int pc = 0; pc < patch; ++pc)
                        tok[k++] = static_cast<T>(g.at(ch, r * patch + pr, c * patch + pc));
        }
    return t;
}

template <typename T>
Grid depatchify(const Tensor<T>& t, int channels, int height, int width, int patch) {
    int gh = height / patch, gw = width / patch;
    int64_t td = (int64_t)patch * patch * channels;
    if (t.rank() != 2 || t.shape[0] != (int64_t)gh * gw || t.shape[1] != td)
        throw ShapeError("depatchify: token tensor " + shape_str(t.shape) +
                         " does not match " + std::to_string(channels) + "x" +
                         std::to_string(height) + "x" + std::to_string(width) + " patch " +
                         std::to_string(patch));
    Grid g(channels, height, width);
    for (int r = 0; r < gh; ++r)
        for (int c = 0; c < gw; ++c) {
            const T* tok = t.data.data() + ((int64_t)r * gw + c) * td;
            int64_t k = 0;
            for (int ch = 0; ch < channels; ++ch)
                for (int pr = 0; pr < patch; ++pr)
                    for (int pc = 0; pc < patch; ++pc)
                        g.at(ch, r * patch + pr, c * patch + pc) = static_cast<double>(tok[k++]);
        }
    return g;
}

}  // namespace bridge
