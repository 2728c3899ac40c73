#pragma once

#include <string>
#include <vector>

namespace pfd {

// Interleaved RGB intensity image in [0,1], row-major.
struct Image {
    int h = 0, w = 0;
    std::vector<double> data;

    static Image zero(int h, int w) {
        Image im;
        im.h = h;
        im.w = w;
        im.data.assign(static_cast<std::size_t>(h) * w * 3, 0.0);
        return im;
    }

    double& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * w + x) * 3 + c];
    }
    double at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * w + x) * 3 + c];
    }
    double luma(int y, int x) const {
        return 0.299 * at(y, x, 0) + 0.587 * at(y, x, 1) + 0.114 * at(y, x, 2);
    }
    std::size_t size() const { return data.size(); }
};

// 8-bit RGB PNG round trip. Values are clipped to [0,1] and quantized on
// write; read returns intensities in [0,1]. Both throw IoError on failure.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// One of the 8 square symmetries: k in [0,8) = rotation by 90*(k%4) degrees,
// then a horizontal flip when k >= 4. k = 0 is the identity.
Image dihedral(const Image& img, int k);

}  // namespace pfd
