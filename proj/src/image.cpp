#include "e2r/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace e2r {

Image image_zeros(int h, int w) {
    Image img;
    img.h = h;
    img.w = w;
    img.px.assign(static_cast<size_t>(h) * w * 3, 0.0);
    return img;
}

Image image_full(int h, int w, double v) {
    Image img = image_zeros(h, w);
    std::fill(img.px.begin(), img.px.end(), v);
    return img;
}

void clamp01(Image& img) {
    for (double& v : img.px) v = std::clamp(v, 0.0, 1.0);
}

namespace {

// next whitespace-separated token, '#' comments run to end of line
std::string next_token(std::istream& is, const std::string& path) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw DataError("ppm: unexpected end of header in " + path);
    return tok;
}

int parse_pos_int(const std::string& tok, const std::string& what, const std::string& path) {
    for (char c : tok)
        if (!std::isdigit(static_cast<unsigned char>(c)))
            throw DataError("ppm: bad " + what + " '" + tok + "' in " + path);
    long v = std::strtol(tok.c_str(), nullptr, 10);
    if (v <= 0 || v > 1 << 20) throw DataError("ppm: bad " + what + " '" + tok + "' in " + path);
    return static_cast<int>(v);
}

}  // namespace

Image read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("ppm: cannot open " + path);
    std::string magic = next_token(f, path);
    if (magic != "P6") throw DataError("ppm: not a P6 file: " + path);
    int w = parse_pos_int(next_token(f, path), "width", path);
    int h = parse_pos_int(next_token(f, path), "height", path);
    std::string maxval = next_token(f, path);
    if (maxval != "255") throw DataError("ppm: only maxval 255 supported, got '" + maxval +
                                         "' in " + path);
    // exactly one whitespace byte separates the header from the payload; it
    // was consumed by next_token already
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<size_t>(f.gcount()) != raw.size())
        throw DataError("ppm: truncated payload in " + path + " (got " +
                        std::to_string(f.gcount()) + " of " + std::to_string(raw.size()) +
                        " bytes)");
    Image img = image_zeros(h, w);
    for (size_t i = 0; i < raw.size(); ++i) img.px[i] = raw[i] / 255.0;
    return img;
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("ppm: cannot write " + path);
    f << "P6\n" << img.w << ' ' << img.h << "\n255\n";
    std::vector<unsigned char> raw(img.px.size());
    for (size_t i = 0; i < raw.size(); ++i) {
        double v = std::clamp(img.px[i], 0.0, 1.0);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw DataError("ppm: write failed for " + path);
}

Image resize_bilinear(const Image& img, int oh, int ow) {
    if (oh <= 0 || ow <= 0) throw DataError("resize: target extents must be positive");
    if (oh == img.h && ow == img.w) return img;
    Image out = image_zeros(oh, ow);
    const double sy = static_cast<double>(img.h) / oh;
    const double sx = static_cast<double>(img.w) / ow;
    for (int oy = 0; oy < oh; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int y0c = std::clamp(y0, 0, img.h - 1);
        int y1c = std::clamp(y0 + 1, 0, img.h - 1);
        for (int ox = 0; ox < ow; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int x0c = std::clamp(x0, 0, img.w - 1);
            int x1c = std::clamp(x0 + 1, 0, img.w - 1);
            for (int c = 0; c < 3; ++c) {
                double top = img.at(y0c, x0c, c) * (1.0 - wx) + img.at(y0c, x1c, c) * wx;
                double bot = img.at(y1c, x0c, c) * (1.0 - wx) + img.at(y1c, x1c, c) * wx;
                out.at(oy, ox, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

Tensor image_to_tensor(const Image& img) { return Tensor::from({img.h, img.w, 3}, img.px); }

Image tensor_to_image(const Tensor& t) {
    if (t.rank() != 3 || t.dim(2) != 3)
        throw ShapeError("tensor_to_image: expected [h x w x 3], got " + shape_str(t.shape()));
    Image img;
    img.h = t.dim(0);
    img.w = t.dim(1);
    img.px = t.vec();
    return img;
}

double image_mse(const Image& a, const Image& b) {
    if (a.h != b.h || a.w != b.w) throw ShapeError("image_mse: image sizes differ");
    double s = 0.0;
    for (size_t i = 0; i < a.px.size(); ++i) {
        double d = a.px[i] - b.px[i];
        s += d * d;
    }
    return s / static_cast<double>(a.px.size());
}

}  // namespace e2r
