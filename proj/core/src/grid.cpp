#include "bridge/grid.hpp"

#include <algorithm>
#include <fstream>

#include "bridge/errors.hpp"

namespace bridge {

bool is_binary(const Grid& m) {
    if (m.channels != 1) return false;
    for (double x : m.v)
        if (x != 0.0 && x != 1.0) return false;
    return true;
}

namespace {

void read_pnm_header(std::ifstream& f, const std::string& path, const char* magic, int& w,
                     int& h) {
    std::string m;
    f >> m;
    if (m != magic) throw DataError(path + ": expected " + magic + ", got '" + m + "'");
    auto next_int = [&](int& out) {
        // skip whitespace and '#' comments
        for (;;) {
            int c = f.peek();
            if (c == '#') {
                std::string line;
                std::getline(f, line);
            } else if (std::isspace(c)) {
                f.get();
            } else {
                break;
            }
        }
        if (!(f >> out)) throw DataError(path + ": truncated header");
    };
    int maxval = 0;
    next_int(w);
    next_int(h);
    next_int(maxval);
    if (w <= 0 || h <= 0) throw DataError(path + ": bad dimensions");
    if (maxval != 255) throw DataError(path + ": only 8-bit maxval 255 supported");
    f.get();  // single whitespace before payload
}

}  // namespace

Grid load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    int w, h;
    read_pnm_header(f, path, "P6", w, h);
    std::vector<unsigned char> buf((size_t)w * h * 3);
    f.read(reinterpret_cast<char*>(buf.data()), (std::streamsize)buf.size());
    if (!f) throw DataError(path + ": truncated pixel data");
    Grid g(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                g.at(c, y, x) = buf[((size_t)y * w + x) * 3 + c] / 255.0;
    return g;
}

void save_ppm(const std::string& path, const Grid& g) {
    if (g.channels != 3) throw DataError("save_ppm: need 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    f << "P6\n" << g.width << " " << g.height << "\n255\n";
    std::vector<unsigned char> buf((size_t)g.width * g.height * 3);
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp(g.at(c, y, x), 0.0, 1.0);
                buf[((size_t)y * g.width + x) * 3 + c] =
                    (unsigned char)std::lround(v * 255.0);
            }
    f.write(reinterpret_cast<const char*>(buf.data()), (std::streamsize)buf.size());
}

Grid load_pgm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path);
    int w, h;
    read_pnm_header(f, path, "P5", w, h);
    std::vector<unsigned char> buf((size_t)w * h);
    f.read(reinterpret_cast<char*>(buf.data()), (std::streamsize)buf.size());
    if (!f) throw DataError(path + ": truncated pixel data");
    Grid m(1, h, w);
    for (size_t i = 0; i < buf.size(); ++i) m.v[i] = buf[i] >= 128 ? 1.0 : 0.0;
    return m;
}

void save_pgm(const std::string& path, const Grid& m) {
    if (m.channels != 1) throw DataError("save_pgm: need 1 channel");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open for write: " + path);
    f << "P5\n" << m.width << " " << m.height << "\n255\n";
    std::vector<unsigned char> buf((size_t)m.width * m.height);
    for (size_t i = 0; i < buf.size(); ++i)
        buf[i] = m.v[i] >= 0.5 ? (unsigned char)255 : (unsigned char)0;
    f.write(reinterpret_cast<const char*>(buf.data()), (std::streamsize)buf.size());
}

}  // namespace bridge
