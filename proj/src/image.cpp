#include "handsoff/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "handsoff/errors.hpp"

namespace handsoff {

namespace {

std::string lower_ext(const std::string& path) {
    size_t dot = path.find_last_of('.');
    if (dot == std::string::npos) {
        return "";
    }
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext;
}

// ---- PPM / PGM ----

int read_pnm_token(std::istream& in, const std::string& path) {
    // Skip whitespace and '#' comments between header fields.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') {
                c = in.get();
            }
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF || !std::isdigit(c)) {
        throw DataError(detail::strformat("\"%s\": malformed PNM header", path.c_str()));
    }
    int value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        c = in.get();
    }
    return value;
}

struct PnmHeader {
    int kind = 0; // 5 or 6
    int width = 0;
    int height = 0;
    int maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::string& path) {
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (in.gcount() != 2 || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
        throw DataError(detail::strformat("\"%s\": not a P5/P6 PNM file", path.c_str()));
    }
    PnmHeader h;
    h.kind = magic[1] - '0';
    h.width = read_pnm_token(in, path);
    h.height = read_pnm_token(in, path);
    h.maxval = read_pnm_token(in, path);
    if (h.width <= 0 || h.height <= 0 || h.maxval <= 0 || h.maxval > 255) {
        throw DataError(detail::strformat("\"%s\": unsupported PNM geometry", path.c_str()));
    }
    return h;
}

RasterImage read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(detail::strformat("cannot open image \"%s\"", path.c_str()));
    }
    PnmHeader h = read_pnm_header(in, path);
    RasterImage image(h.width, h.height);
    const size_t count = static_cast<size_t>(h.width) * h.height;
    if (h.kind == 6) {
        in.read(reinterpret_cast<char*>(image.pixels.data()),
                static_cast<std::streamsize>(count * 3));
        if (static_cast<size_t>(in.gcount()) != count * 3) {
            throw DataError(detail::strformat("\"%s\": truncated PPM pixel data", path.c_str()));
        }
    } else {
        std::vector<uint8_t> gray(count);
        in.read(reinterpret_cast<char*>(gray.data()), static_cast<std::streamsize>(count));
        if (static_cast<size_t>(in.gcount()) != count) {
            throw DataError(detail::strformat("\"%s\": truncated PGM pixel data", path.c_str()));
        }
        for (size_t i = 0; i < count; ++i) {
            image.pixels[i * 3] = image.pixels[i * 3 + 1] = image.pixels[i * 3 + 2] = gray[i];
        }
    }
    return image;
}

void write_ppm(const std::string& path, const RasterImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DataError(detail::strformat("cannot write image \"%s\"", path.c_str()));
    }
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()),
              static_cast<std::streamsize>(image.pixels.size()));
    if (!out) {
        throw DataError(detail::strformat("failed writing image \"%s\"", path.c_str()));
    }
}

// ---- PNG ----

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

RasterImage read_png(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) {
        throw DataError(detail::strformat("cannot open image \"%s\"", path.c_str()));
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng initialization failed");
    }
    RasterImage image;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(detail::strformat("\"%s\": PNG decode failed", path.c_str()));
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
    }
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    image.pixels.resize(static_cast<size_t>(image.width) * image.height * 3);
    rows.resize(image.height);
    for (int y = 0; y < image.height; ++y) {
        rows[y] = image.pixels.data() + static_cast<size_t>(y) * image.width * 3;
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_png(const std::string& path, const RasterImage& image) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) {
        throw DataError(detail::strformat("cannot write image \"%s\"", path.c_str()));
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError(detail::strformat("\"%s\": PNG encode failed", path.c_str()));
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(
                               image.pixels.data() + static_cast<size_t>(y) * image.width * 3));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---- JPEG ----

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(mgr->jump, 1);
}

RasterImage read_jpeg(const std::string& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) {
        throw DataError(detail::strformat("cannot open image \"%s\"", path.c_str()));
    }
    jpeg_decompress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError(detail::strformat("\"%s\": JPEG decode failed", path.c_str()));
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    RasterImage image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height));
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = image.pixels.data() +
                       static_cast<size_t>(cinfo.output_scanline) * image.width * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return image;
}

void write_jpeg(const std::string& path, const RasterImage& image, int quality = 92) {
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) {
        throw DataError(detail::strformat("cannot write image \"%s\"", path.c_str()));
    }
    jpeg_compress_struct cinfo;
    JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = jpeg_error_exit;
    if (setjmp(err.jump)) {
        jpeg_destroy_compress(&cinfo);
        throw DataError(detail::strformat("\"%s\": JPEG encode failed", path.c_str()));
    }
    jpeg_create_compress(&cinfo);
    jpeg_stdio_dest(&cinfo, file.get());
    cinfo.image_width = static_cast<JDIMENSION>(image.width);
    cinfo.image_height = static_cast<JDIMENSION>(image.height);
    cinfo.input_components = 3;
    cinfo.in_color_space = JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    std::vector<uint8_t> row_copy(static_cast<size_t>(image.width) * 3);
    while (cinfo.next_scanline < cinfo.image_height) {
        std::memcpy(row_copy.data(),
                    image.pixels.data() + static_cast<size_t>(cinfo.next_scanline) * image.width * 3,
                    row_copy.size());
        JSAMPROW row = row_copy.data();
        jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
}

uint32_t read_be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) | uint32_t(p[3]);
}

std::pair<int, int> png_dims(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    uint8_t buf[24];
    in.read(reinterpret_cast<char*>(buf), sizeof(buf));
    static const uint8_t signature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (in.gcount() != sizeof(buf) || std::memcmp(buf, signature, 8) != 0 ||
        std::memcmp(buf + 12, "IHDR", 4) != 0) {
        throw DataError(detail::strformat("\"%s\": not a PNG file", path.c_str()));
    }
    return {static_cast<int>(read_be32(buf + 16)), static_cast<int>(read_be32(buf + 20))};
}

std::pair<int, int> jpeg_dims(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    uint8_t b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    if (in.gcount() != 2 || b[0] != 0xFF || b[1] != 0xD8) {
        throw DataError(detail::strformat("\"%s\": not a JPEG file", path.c_str()));
    }
    // Walk the marker segments until a start-of-frame carries the dimensions.
    while (in) {
        int c = in.get();
        if (c != 0xFF) {
            continue;
        }
        int marker = in.get();
        while (marker == 0xFF) {
            marker = in.get();
        }
        if (marker == EOF) {
            break;
        }
        if (marker == 0xD8 || marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) {
            continue; // standalone markers
        }
        uint8_t len_buf[2];
        in.read(reinterpret_cast<char*>(len_buf), 2);
        if (in.gcount() != 2) {
            break;
        }
        int length = (len_buf[0] << 8) | len_buf[1];
        const bool is_sof = (marker >= 0xC0 && marker <= 0xCF) && marker != 0xC4 &&
                            marker != 0xC8 && marker != 0xCC;
        if (is_sof) {
            uint8_t frame[5];
            in.read(reinterpret_cast<char*>(frame), 5);
            if (in.gcount() != 5) {
                break;
            }
            int height = (frame[1] << 8) | frame[2];
            int width = (frame[3] << 8) | frame[4];
            return {width, height};
        }
        in.seekg(length - 2, std::ios::cur);
    }
    throw DataError(detail::strformat("\"%s\": no JPEG frame header found", path.c_str()));
}

} // namespace

bool is_image_path(const std::string& path) {
    const std::string ext = lower_ext(path);
    return ext == "ppm" || ext == "pgm" || ext == "png" || ext == "jpg" || ext == "jpeg";
}

RasterImage read_image(const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == "ppm" || ext == "pgm") {
        return read_pnm(path);
    }
    if (ext == "png") {
        return read_png(path);
    }
    if (ext == "jpg" || ext == "jpeg") {
        return read_jpeg(path);
    }
    throw DataError(detail::strformat("unsupported image format \"%s\"", path.c_str()));
}

void write_image(const std::string& path, const RasterImage& image) {
    if (image.width <= 0 || image.height <= 0) {
        throw DataError("cannot write an empty image");
    }
    const std::string ext = lower_ext(path);
    if (ext == "ppm" || ext == "pgm") {
        write_ppm(path, image);
    } else if (ext == "png") {
        write_png(path, image);
    } else if (ext == "jpg" || ext == "jpeg") {
        write_jpeg(path, image);
    } else {
        throw DataError(detail::strformat("unsupported image format \"%s\"", path.c_str()));
    }
}

std::pair<int, int> read_image_dims(const std::string& path) {
    const std::string ext = lower_ext(path);
    if (ext == "ppm" || ext == "pgm") {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw DataError(detail::strformat("cannot open image \"%s\"", path.c_str()));
        }
        PnmHeader h = read_pnm_header(in, path);
        return {h.width, h.height};
    }
    if (ext == "png") {
        return png_dims(path);
    }
    if (ext == "jpg" || ext == "jpeg") {
        return jpeg_dims(path);
    }
    throw DataError(detail::strformat("unsupported image format \"%s\"", path.c_str()));
}

} // namespace handsoff
