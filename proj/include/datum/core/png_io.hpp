#ifndef DATUM_CORE_PNG_IO_HPP
#define DATUM_CORE_PNG_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace datum {

// Thin libpng wrappers. Writers pin compression level and filter so that
// output bytes depend only on the pixel content.

void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& interleaved_rgb);
void write_png_gray8(const std::string& path, int width, int height,
                     const std::vector<std::uint8_t>& gray);

struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0;  // 1 or 3
    std::vector<std::uint8_t> data;  // interleaved, scanline order
};

PngImage read_png(const std::string& path);

}  // namespace datum

#endif
