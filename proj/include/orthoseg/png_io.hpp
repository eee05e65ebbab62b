#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "orthoseg/image.hpp"

namespace orthoseg::png {

enum class PixelFormat { rgb8, gray8, gray16 };

/// zlib level used for every PNG we write. Tiles and label maps are written
/// often, so speed matters more than size.
inline constexpr int default_compression = 1;

bool has_png_signature(std::span<const std::uint8_t> head);
bool is_png_file(const std::filesystem::path& path);

ImageRgb read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const ImageRgb& img, int level = default_compression);

/// 16-bit grayscale, e.g. raw class indices.
std::vector<std::uint16_t> read_gray16(const std::filesystem::path& path, int& width, int& height);

std::vector<std::uint8_t> encode_rgb(const ImageRgb& img);
std::vector<std::uint8_t> encode_gray8(std::span<const std::uint8_t> pixels, int width, int height);
ImageRgb decode_rgb(std::span<const std::uint8_t> bytes);
/// Decodes any PNG to one 8-bit channel; colour inputs are reduced to luma.
std::vector<std::uint8_t> decode_gray8(std::span<const std::uint8_t> bytes, int& width, int& height);

/// Row-streaming decoder. Any PNG colour type is normalised to RGB8.
class RowReader {
public:
    explicit RowReader(const std::filesystem::path& path);
    ~RowReader();
    RowReader(const RowReader&) = delete;
    RowReader& operator=(const RowReader&) = delete;

    int width() const;
    int height() const;
    /// Reads the next row into `rgb` (width*3 bytes).
    void read_row(std::span<std::uint8_t> rgb);

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// Row-streaming encoder.
class RowWriter {
public:
    RowWriter(const std::filesystem::path& path, int width, int height, PixelFormat format,
              int level = default_compression);
    ~RowWriter();
    RowWriter(const RowWriter&) = delete;
    RowWriter& operator=(const RowWriter&) = delete;

    /// `row` holds width*channels samples; gray16 rows are host-order uint16 reinterpreted as bytes.
    void write_row(std::span<const std::uint8_t> row);
    void finish();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace orthoseg::png
