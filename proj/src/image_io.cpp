#include "pattlite/image_io.hpp"

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "pattlite/common.hpp"
#include "pattlite/tensor_io.hpp"

namespace pattlite {

namespace {

Tensorf gray_to_rgb(const Tensorf& gray) {
    const int h = gray.extent(0), w = gray.extent(1);
    Tensorf out({h, w, 3});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float v = gray(y, x, 0);
            out(y, x, 0) = v;
            out(y, x, 1) = v;
            out(y, x, 2) = v;
        }
    return out;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Tensorf decode_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open image: " + path);

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng init failed for " + path);
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng init failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("failed to decode PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    // Normalize everything to 8-bit RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);

    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    Tensorf out({h, w, 3});
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out(y, x, c) = static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c]);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

namespace {

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

}  // namespace

Tensorf decode_jpeg(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw DataError("cannot open image: " + path);

    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        throw DataError("failed to decode JPEG: " + path);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const int h = static_cast<int>(cinfo.output_height);
    const int w = static_cast<int>(cinfo.output_width);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
    Tensorf out({h, w, 3});
    unsigned char* rowp = row.data();
    for (int y = 0; y < h; ++y) {
        jpeg_read_scanlines(&cinfo, &rowp, 1);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                out(y, x, c) = static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c]);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

Tensorf load_image(const std::string& path) {
    auto ends_with = [&path](const char* suffix) {
        const std::string s(suffix);
        return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
    };
    if (ends_with(".png") || ends_with(".PNG")) return decode_png(path);
    if (ends_with(".jpg") || ends_with(".jpeg") || ends_with(".JPG") || ends_with(".JPEG"))
        return decode_jpeg(path);
    if (ends_with(".plt") || ends_with(".PLT")) {
        Tensorf t = load_plt<float>(path);
        if (t.rank() == 2) {
            // Grayscale raw tensor: replicate to three channels.
            Tensorf hw1 = t.reshaped({t.extent(0), t.extent(1), 1});
            Tensorf rgb({t.extent(0), t.extent(1), 3});
            for (int y = 0; y < t.extent(0); ++y)
                for (int x = 0; x < t.extent(1); ++x)
                    for (int c = 0; c < 3; ++c) rgb(y, x, c) = hw1(y, x, 0);
            return rgb;
        }
        if (t.rank() == 3 && t.extent(2) == 1) return gray_to_rgb(t);
        if (t.rank() == 3 && t.extent(2) == 3) return t;
        throw DataError("PLT sample must be [H,W], [H,W,1], or [H,W,3]: " + path);
    }
    throw DataError("unsupported image format: " + path);
}

}  // namespace pattlite
