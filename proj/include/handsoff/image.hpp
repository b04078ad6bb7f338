#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace handsoff {

/// Interleaved 8-bit RGB raster.
struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> pixels; // r,g,b per pixel, row-major

    RasterImage() = default;
    RasterImage(int w, int h) : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, 0) {}

    uint8_t* pixel(int x, int y) { return pixels.data() + (static_cast<size_t>(y) * width + x) * 3; }
    const uint8_t* pixel(int x, int y) const {
        return pixels.data() + (static_cast<size_t>(y) * width + x) * 3;
    }

    bool operator==(const RasterImage&) const = default;
};

/// Decode a still image by file extension (.ppm/.pgm, .png, .jpg/.jpeg).
/// Grayscale sources expand to RGB. Throws DataError on malformed input.
RasterImage read_image(const std::string& path);

/// Encode by file extension; formats as in read_image (PGM writes as PPM).
void write_image(const std::string& path, const RasterImage& image);

/// Width/height from the file header without decoding pixel data.
std::pair<int, int> read_image_dims(const std::string& path);

/// True when the extension names a supported raster format.
bool is_image_path(const std::string& path);

} // namespace handsoff
