#pragma once

#include <string>
#include <vector>

#include "e2r/errors.hpp"
#include "e2r/tensor.hpp"

namespace e2r {

// Interleaved RGB, row-major, values in [0,1]. 8-bit file values map
// linearly (v = byte/255).
struct Image {
    int h = 0;
    int w = 0;
    std::vector<double> px;  // h*w*3

    double& at(int y, int x, int c) { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    double at(int y, int x, int c) const { return px[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

Image image_zeros(int h, int w);
Image image_full(int h, int w, double v);
void clamp01(Image& img);

// binary PPM (P6, maxval 255). write(read(f)) is byte-identical for files in
// canonical form ("P6\n<w> <h>\n255\n" + payload).
Image read_ppm(const std::string& path);
void write_ppm(const Image& img, const std::string& path);

// separable bilinear, align-corners=false, edge clamp; resize to own size is
// an exact identity
Image resize_bilinear(const Image& img, int oh, int ow);

Tensor image_to_tensor(const Image& img);         // shape {h, w, 3}
Image tensor_to_image(const Tensor& t);           // clamps nothing
double image_mse(const Image& a, const Image& b);

}  // namespace e2r
