// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/io.hpp"

#include <png.h>
// jpeglib.h needs size_t and FILE declared first
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <fstream>
#include <random>

namespace pygs::io {

float srgb_to_linear(float c) {
    return c <= 0.04045f ? c / 12.92f : std::pow((c + 0.055f) / 1.055f, 2.4f);
}

float linear_to_srgb(float c) {
    c = std::clamp(c, 0.0f, 1.0f);
    return c <= 0.0031308f ? 12.92f * c : 1.055f * std::pow(c, 1.0f / 2.4f) - 0.055f;
}

std::uint8_t encode_srgb8(float linear) {
    return static_cast<std::uint8_t>(std::lround(linear_to_srgb(linear) * 255.0f));
}

namespace {

const std::array<float, 256>& decode_table() {
    static const std::array<float, 256> table = [] {
        std::array<float, 256> t{};
        for (int i = 0; i < 256; ++i) t[i] = srgb_to_linear(static_cast<float>(i) / 255.0f);
        return t;
    }();
    return table;
}

bool has_png_signature(const std::vector<std::uint8_t>& b) {
    return b.size() >= 8 && png_sig_cmp(b.data(), 0, 8) == 0;
}

bool has_jpeg_signature(const std::vector<std::uint8_t>& b) {
    return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
    auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
    (*info->err->format_message)(info, err->message);
    std::longjmp(err->jump, 1);
}

Image<std::uint8_t> decode_jpeg(const std::vector<std::uint8_t>& bytes) {
    jpeg_decompress_struct info{};
    JpegErrorManager err{};
    info.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    Image<std::uint8_t> img;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&info);
        throw DataError(std::string("jpeg decode failed: ") + err.message);
    }
    jpeg_create_decompress(&info);
    jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&info, TRUE);
    info.out_color_space = JCS_RGB;
    jpeg_start_decompress(&info);
    img = Image<std::uint8_t>(static_cast<int>(info.output_width), static_cast<int>(info.output_height), 3);
    while (info.output_scanline < info.output_height) {
        JSAMPROW row = img.data.data() + img.index(0, static_cast<int>(info.output_scanline));
        jpeg_read_scanlines(&info, &row, 1);
    }
    jpeg_finish_decompress(&info);
    jpeg_destroy_decompress(&info);
    return img;
}

} // namespace

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw DataError("read failed for " + path.string());
    return bytes;
}

void write_file_atomic(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    std::random_device rd;
    const fs::path tmp = dir / (path.filename().string() + ".tmp" + std::to_string(rd()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot create " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            fs::remove(tmp, ec);
            throw DataError("write failed for " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw DataError("cannot move file into place at " + path.string());
    }
}

Image<std::uint8_t> decode_png(const std::vector<std::uint8_t>& bytes) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw DataError(std::string("png decode failed: ") + image.message);
    const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0 && !alpha;
    image.format = gray ? PNG_FORMAT_GRAY : alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB;
    Image<std::uint8_t> img(static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : alpha ? 4 : 3);
    if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError(std::string("png decode failed: ") + image.message);
    }
    return img;
}

std::vector<std::uint8_t> encode_png(const Image<std::uint8_t>& img) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    switch (img.channels) {
    case 1: image.format = PNG_FORMAT_GRAY; break;
    case 3: image.format = PNG_FORMAT_RGB; break;
    case 4: image.format = PNG_FORMAT_RGBA; break;
    default: throw std::invalid_argument("png encode: unsupported channel count");
    }
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.data.data(), 0, nullptr))
        throw DataError(std::string("png encode failed: ") + image.message);
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.data.data(), 0, nullptr))
        throw DataError(std::string("png encode failed: ") + image.message);
    out.resize(size);
    return out;
}

Image<std::uint8_t> read_image_u8(const fs::path& path) {
    const auto bytes = read_file(path);
    try {
        if (has_png_signature(bytes)) return decode_png(bytes);
        if (has_jpeg_signature(bytes)) return decode_jpeg(bytes);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    throw DataError(path.string() + ": not a PNG or JPEG image");
}

Image<float> read_image(const fs::path& path, const Vec3f& background) {
    const auto raw = read_image_u8(path);
    const auto& lut = decode_table();
    Image<float> out(raw.width, raw.height, 3);
    for (std::size_t p = 0; p < raw.pixel_count(); ++p) {
        const std::uint8_t* src = raw.data.data() + p * raw.channels;
        const float a = raw.channels == 4 ? static_cast<float>(src[3]) / 255.0f : 1.0f;
        for (int c = 0; c < 3; ++c) {
            const std::uint8_t v = raw.channels == 1 ? src[0] : src[c];
            out.data[3 * p + c] = lut[v] * a + background[c] * (1.0f - a);
        }
    }
    return out;
}

Image<std::uint8_t> to_srgb8(const Image<float>& linear) {
    if (linear.channels != 3) throw std::invalid_argument("to_srgb8 expects RGB");
    Image<std::uint8_t> out(linear.width, linear.height, 3);
    for (std::size_t i = 0; i < linear.data.size(); ++i) out.data[i] = encode_srgb8(linear.data[i]);
    return out;
}

void write_png(const fs::path& path, const Image<std::uint8_t>& img) { write_file_atomic(path, encode_png(img)); }

void write_png(const fs::path& path, const Image<float>& linear) { write_png(path, to_srgb8(linear)); }

} // namespace pygs::io
