#include "orthoseg/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace orthoseg::png {
namespace fs = std::filesystem;

namespace {

struct MemSource {
    const std::uint8_t* data;
    std::size_t size;
    std::size_t pos;
};

void mem_read(png_structp p, png_bytep out, png_size_t n) {
    auto* src = static_cast<MemSource*>(png_get_io_ptr(p));
    if (src->pos + n > src->size)
        png_error(p, "truncated PNG stream");
    std::memcpy(out, src->data + src->pos, n);
    src->pos += n;
}

void mem_write(png_structp p, png_bytep in, png_size_t n) {
    auto* dst = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
    dst->insert(dst->end(), in, in + n);
}

void mem_flush(png_structp) {}

void quiet_warning(png_structp, png_const_charp) {}

// Reads header and installs transforms so every row comes out as RGB8 (or gray8).
// Returns false on libpng error (longjmp target lives in the caller).
void setup_transforms(png_structp p, png_infop info, bool to_gray) {
    png_read_info(p, info);
    const int color = png_get_color_type(p, info);
    const int depth = png_get_bit_depth(p, info);
    if (color == PNG_COLOR_TYPE_PALETTE)
        png_set_palette_to_rgb(p);
    if ((color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) && depth < 8)
        png_set_expand_gray_1_2_4_to_8(p);
    if (depth == 16)
        png_set_strip_16(p);
    if (color & PNG_COLOR_MASK_ALPHA)
        png_set_strip_alpha(p);
    if (png_get_valid(p, info, PNG_INFO_tRNS))
        png_set_tRNS_to_alpha(p), png_set_strip_alpha(p);
    if (to_gray) {
        if (color & PNG_COLOR_MASK_COLOR || color == PNG_COLOR_TYPE_PALETTE)
            png_set_rgb_to_gray_fixed(p, 1, -1, -1);
    } else if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(p);
    }
    png_set_interlace_handling(p);
    png_read_update_info(p, info);
}

struct DecodeOut {
    std::vector<std::uint8_t> pixels;
    int width = 0, height = 0;
    char message[256] = {};
};

// Plain C-style body: no objects with destructors between setjmp and the libpng calls.
bool decode_impl(MemSource* mem, std::FILE* file, bool to_gray, DecodeOut* out) {
    png_structp p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
    if (!p)
        return false;
    png_infop info = png_create_info_struct(p);
    png_bytep* rows = nullptr;
    if (setjmp(png_jmpbuf(p))) {
        std::free(rows);
        png_destroy_read_struct(&p, &info, nullptr);
        std::snprintf(out->message, sizeof(out->message), "corrupt or unsupported PNG");
        return false;
    }
    if (mem)
        png_set_read_fn(p, mem, mem_read);
    else
        png_init_io(p, file);
    setup_transforms(p, info, to_gray);
    const int w = static_cast<int>(png_get_image_width(p, info));
    const int h = static_cast<int>(png_get_image_height(p, info));
    const std::size_t stride = png_get_rowbytes(p, info);
    const std::size_t channels = to_gray ? 1 : 3;
    if (stride != static_cast<std::size_t>(w) * channels)
        png_error(p, "unexpected row layout");
    out->pixels.resize(stride * h);
    rows = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * (h > 0 ? h : 1)));
    for (int y = 0; y < h; ++y)
        rows[y] = out->pixels.data() + stride * y;
    png_read_image(p, rows);
    png_read_end(p, nullptr);
    std::free(rows);
    png_destroy_read_struct(&p, &info, nullptr);
    out->width = w;
    out->height = h;
    return true;
}

bool encode_impl(std::FILE* file, std::vector<std::uint8_t>* mem, const std::uint8_t* data, int w, int h,
                 PixelFormat fmt, int level) {
    png_structp p = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
    if (!p)
        return false;
    png_infop info = png_create_info_struct(p);
    if (setjmp(png_jmpbuf(p))) {
        png_destroy_write_struct(&p, &info);
        return false;
    }
    if (mem)
        png_set_write_fn(p, mem, mem_write, mem_flush);
    else
        png_init_io(p, file);
    png_set_compression_level(p, level);
    const int color = fmt == PixelFormat::rgb8 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    const int depth = fmt == PixelFormat::gray16 ? 16 : 8;
    png_set_IHDR(p, info, w, h, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(p, info);
    if (fmt == PixelFormat::gray16)
        png_set_swap(p);
    const std::size_t stride = static_cast<std::size_t>(w) * (fmt == PixelFormat::rgb8 ? 3 : fmt == PixelFormat::gray8 ? 1 : 2);
    for (int y = 0; y < h; ++y)
        png_write_row(p, const_cast<png_bytep>(data + stride * y));
    png_write_end(p, nullptr);
    png_destroy_write_struct(&p, &info);
    return true;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f)
            std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f)
        fail(ErrorKind::io, "cannot open '" + path.string() + "'");
    return f;
}

} // namespace

bool has_png_signature(std::span<const std::uint8_t> head) {
    return head.size() >= 8 && png_sig_cmp(head.data(), 0, 8) == 0;
}

bool is_png_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::uint8_t sig[8] = {};
    if (!in.read(reinterpret_cast<char*>(sig), 8))
        return false;
    return has_png_signature(sig);
}

ImageRgb read_rgb(const fs::path& path) {
    auto f = open_file(path, "rb");
    DecodeOut out;
    if (!decode_impl(nullptr, f.get(), false, &out))
        fail(ErrorKind::io, "cannot decode PNG '" + path.string() + "'");
    return ImageRgb(out.width, out.height, std::move(out.pixels));
}

ImageRgb decode_rgb(std::span<const std::uint8_t> bytes) {
    if (!has_png_signature(bytes))
        fail(ErrorKind::invalid_argument, "payload is not a PNG image");
    MemSource src{bytes.data(), bytes.size(), 0};
    DecodeOut out;
    if (!decode_impl(&src, nullptr, false, &out))
        fail(ErrorKind::invalid_argument, "cannot decode PNG payload");
    return ImageRgb(out.width, out.height, std::move(out.pixels));
}

std::vector<std::uint8_t> decode_gray8(std::span<const std::uint8_t> bytes, int& width, int& height) {
    if (!has_png_signature(bytes))
        fail(ErrorKind::invalid_argument, "payload is not a PNG image");
    MemSource src{bytes.data(), bytes.size(), 0};
    DecodeOut out;
    if (!decode_impl(&src, nullptr, true, &out))
        fail(ErrorKind::invalid_argument, "cannot decode PNG payload");
    width = out.width;
    height = out.height;
    return std::move(out.pixels);
}

void write_rgb(const fs::path& path, const ImageRgb& img, int level) {
    auto f = open_file(path, "wb");
    if (!encode_impl(f.get(), nullptr, img.bytes().data(), img.width(), img.height(), PixelFormat::rgb8, level))
        fail(ErrorKind::io, "cannot encode PNG '" + path.string() + "'");
}

std::vector<std::uint8_t> encode_rgb(const ImageRgb& img) {
    std::vector<std::uint8_t> out;
    if (!encode_impl(nullptr, &out, img.bytes().data(), img.width(), img.height(), PixelFormat::rgb8,
                     default_compression))
        fail(ErrorKind::internal, "PNG encoding failed");
    return out;
}

std::vector<std::uint8_t> encode_gray8(std::span<const std::uint8_t> pixels, int width, int height) {
    require(pixels.size() == static_cast<std::size_t>(width) * height, "gray buffer size mismatch");
    std::vector<std::uint8_t> out;
    if (!encode_impl(nullptr, &out, pixels.data(), width, height, PixelFormat::gray8, default_compression))
        fail(ErrorKind::internal, "PNG encoding failed");
    return out;
}

std::vector<std::uint16_t> read_gray16(const fs::path& path, int& width, int& height) {
    auto f = open_file(path, "rb");
    png_structp p = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
    png_infop info = png_create_info_struct(p);
    std::vector<std::uint16_t> pixels;
    if (setjmp(png_jmpbuf(p))) {
        png_destroy_read_struct(&p, &info, nullptr);
        fail(ErrorKind::io, "cannot decode 16-bit PNG '" + path.string() + "'");
    }
    png_init_io(p, f.get());
    png_read_info(p, info);
    if (png_get_color_type(p, info) != PNG_COLOR_TYPE_GRAY || png_get_bit_depth(p, info) != 16)
        png_error(p, "not a 16-bit grayscale PNG");
    png_set_swap(p);
    png_read_update_info(p, info);
    width = static_cast<int>(png_get_image_width(p, info));
    height = static_cast<int>(png_get_image_height(p, info));
    pixels.resize(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y)
        png_read_row(p, reinterpret_cast<png_bytep>(pixels.data() + static_cast<std::size_t>(y) * width), nullptr);
    png_destroy_read_struct(&p, &info, nullptr);
    return pixels;
}

// ---------------------------------------------------------------------------

struct RowReader::Impl {
    FilePtr file;
    png_structp png = nullptr;
    png_infop info = nullptr;
    int width = 0, height = 0, next_row = 0;
};

RowReader::RowReader(const fs::path& path) : impl_(std::make_unique<Impl>()) {
    impl_->file = open_file(path, "rb");
    std::uint8_t sig[8] = {};
    if (std::fread(sig, 1, 8, impl_->file.get()) != 8 || !has_png_signature(sig))
        fail(ErrorKind::invalid_argument, "'" + path.string() + "' is not a PNG image");
    std::rewind(impl_->file.get());
    impl_->png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
    impl_->info = png_create_info_struct(impl_->png);
    if (setjmp(png_jmpbuf(impl_->png)))
        fail(ErrorKind::io, "cannot decode PNG header of '" + path.string() + "'");
    png_init_io(impl_->png, impl_->file.get());
    setup_transforms(impl_->png, impl_->info, false);
    if (png_get_interlace_type(impl_->png, impl_->info) != PNG_INTERLACE_NONE)
        png_error(impl_->png, "interlaced PNG cannot be streamed");
    impl_->width = static_cast<int>(png_get_image_width(impl_->png, impl_->info));
    impl_->height = static_cast<int>(png_get_image_height(impl_->png, impl_->info));
}

RowReader::~RowReader() {
    if (impl_ && impl_->png)
        png_destroy_read_struct(&impl_->png, &impl_->info, nullptr);
}

int RowReader::width() const { return impl_->width; }
int RowReader::height() const { return impl_->height; }

void RowReader::read_row(std::span<std::uint8_t> rgb) {
    require(rgb.size() >= static_cast<std::size_t>(impl_->width) * 3, "row buffer too small");
    if (impl_->next_row >= impl_->height)
        fail(ErrorKind::internal, "read past the last PNG row");
    if (setjmp(png_jmpbuf(impl_->png)))
        fail(ErrorKind::io, "corrupt PNG row data");
    png_read_row(impl_->png, rgb.data(), nullptr);
    ++impl_->next_row;
}

struct RowWriter::Impl {
    FilePtr file;
    png_structp png = nullptr;
    png_infop info = nullptr;
    std::size_t stride = 0;
    int rows_left = 0;
    bool finished = false;
};

RowWriter::RowWriter(const fs::path& path, int width, int height, PixelFormat format, int level)
    : impl_(std::make_unique<Impl>()) {
    require(width > 0 && height > 0, "PNG dimensions must be positive");
    impl_->file = open_file(path, "wb");
    impl_->png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, quiet_warning);
    impl_->info = png_create_info_struct(impl_->png);
    if (setjmp(png_jmpbuf(impl_->png)))
        fail(ErrorKind::io, "cannot start PNG '" + path.string() + "'");
    png_init_io(impl_->png, impl_->file.get());
    png_set_compression_level(impl_->png, level);
    const int color = format == PixelFormat::rgb8 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY;
    const int depth = format == PixelFormat::gray16 ? 16 : 8;
    png_set_IHDR(impl_->png, impl_->info, width, height, depth, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(impl_->png, impl_->info);
    if (format == PixelFormat::gray16)
        png_set_swap(impl_->png);
    impl_->stride = static_cast<std::size_t>(width) *
                    (format == PixelFormat::rgb8 ? 3 : format == PixelFormat::gray8 ? 1 : 2);
    impl_->rows_left = height;
}

RowWriter::~RowWriter() {
    if (impl_ && impl_->png)
        png_destroy_write_struct(&impl_->png, &impl_->info);
}

void RowWriter::write_row(std::span<const std::uint8_t> row) {
    require(row.size() >= impl_->stride, "row buffer too small");
    if (impl_->rows_left <= 0)
        fail(ErrorKind::internal, "too many PNG rows written");
    if (setjmp(png_jmpbuf(impl_->png)))
        fail(ErrorKind::io, "PNG row write failed");
    png_write_row(impl_->png, const_cast<png_bytep>(row.data()));
    --impl_->rows_left;
}

void RowWriter::finish() {
    if (impl_->finished)
        return;
    if (impl_->rows_left != 0)
        fail(ErrorKind::internal, "PNG finished with missing rows");
    if (setjmp(png_jmpbuf(impl_->png)))
        fail(ErrorKind::io, "PNG finalisation failed");
    png_write_end(impl_->png, nullptr);
    impl_->finished = true;
    if (std::fflush(impl_->file.get()) != 0)
        fail(ErrorKind::io, "PNG flush failed");
}

} // namespace orthoseg::png
