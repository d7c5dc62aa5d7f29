#ifndef NOF1_IMAGE_HPP
#define NOF1_IMAGE_HPP

#include <algorithm>
#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <string>
#include <vector>

#include <jpeglib.h>
#include <png.h>

#include "nof1/common.hpp"
#include "nof1/tensor.hpp"

namespace nof1 {

/// Images are Tensor[3,H,W] with values in [0,1], channel-planar RGB.

namespace detail {

inline Tensor rgb8_to_tensor(const std::vector<unsigned char>& rgb, std::size_t h, std::size_t w) {
    Tensor t = Tensor::zeros({3, h, w});
    double* d = t.data().data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const std::size_t p = (y * w + x) * 3;
            d[0 * h * w + y * w + x] = rgb[p + 0] / 255.0;
            d[1 * h * w + y * w + x] = rgb[p + 1] / 255.0;
            d[2 * h * w + y * w + x] = rgb[p + 2] / 255.0;
        }
    }
    return t;
}

struct JpegErrorMgr {
    jpeg_error_mgr pub;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, err->message);
    std::longjmp(err->jump, 1);
}

inline Tensor decode_jpeg(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError("decode_jpeg: cannot open " + path);

    jpeg_decompress_struct cinfo;
    JpegErrorMgr jerr;
    cinfo.err = jpeg_std_error(&jerr.pub);
    jerr.pub.error_exit = jpeg_error_exit;
    if (setjmp(jerr.jump)) {
        jpeg_destroy_decompress(&cinfo);
        std::fclose(fp);
        throw DataError("decode_jpeg: " + path + ": " + jerr.message);
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, fp);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);

    const std::size_t w = cinfo.output_width, h = cinfo.output_height;
    std::vector<unsigned char> rgb(w * h * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
        unsigned char* row = rgb.data() + cinfo.output_scanline * w * 3;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    std::fclose(fp);
    return rgb8_to_tensor(rgb, h, w);
}

inline Tensor decode_png(const std::string& path) {
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw DataError("decode_png: " + path + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> rgb(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, rgb.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw DataError("decode_png: " + path + ": " + msg);
    }
    return rgb8_to_tensor(rgb, img.height, img.width);
}

}  // namespace detail

/// Decodes a PNG or JPEG file (dispatch on magic bytes) to Tensor[3,H,W].
inline Tensor decode_image(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw DataError("decode_image: cannot open " + path);
    unsigned char magic[4] = {0, 0, 0, 0};
    const std::size_t got = std::fread(magic, 1, 4, fp);
    std::fclose(fp);
    if (got >= 4 && magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G')
        return detail::decode_png(path);
    if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF)
        return detail::decode_jpeg(path);
    throw DataError("decode_image: " + path + " is neither PNG nor JPEG");
}

/// Writes Tensor[3,H,W] (values clamped to [0,1]) as an 8-bit RGB PNG.
inline void write_png(const std::string& path, const Tensor& image) {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3) throw UsageError("write_png: image must be [3,H,W], got " + shape_str(s));
    const std::size_t h = s[1], w = s[2];
    std::vector<unsigned char> rgb(w * h * 3);
    const double* d = image.data().data();
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(d[c * h * w + y * w + x], 0.0, 1.0);
                rgb[(y * w + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
            }
        }
    }
    png_image img;
    std::memset(&img, 0, sizeof(img));
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(w);
    img.height = static_cast<png_uint_32>(h);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, rgb.data(), 0, nullptr))
        throw DataError("write_png: " + path + ": " + img.message);
}

/// Bilinear resize with half-pixel sample centers; output clamped to [0,1].
/// When the target matches the source the result is pixel-identical.
inline Tensor bilinear_resize(const Tensor& image, std::size_t th, std::size_t tw) {
    const Shape& s = image.shape();
    if (s.size() != 3) throw UsageError("bilinear_resize: image must be [C,H,W], got " + shape_str(s));
    if (th == 0 || tw == 0) throw UsageError("bilinear_resize: target must be positive");
    const std::size_t C = s[0], H = s[1], W = s[2];
    Tensor out = Tensor::zeros({C, th, tw});
    const double sy = static_cast<double>(H) / static_cast<double>(th);
    const double sx = static_cast<double>(W) / static_cast<double>(tw);
    const double* in = image.data().data();
    double* o = out.data().data();
    for (std::size_t y = 0; y < th; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, H - 1);
        const double ty = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < tw; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, W - 1);
            const double tx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < C; ++c) {
                const double* plane = in + c * H * W;
                const double v = (1.0 - ty) * ((1.0 - tx) * plane[y0 * W + x0] + tx * plane[y0 * W + x1]) +
                                 ty * ((1.0 - tx) * plane[y1 * W + x0] + tx * plane[y1 * W + x1]);
                o[c * th * tw + y * tw + x] = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

}  // namespace nof1

#endif
