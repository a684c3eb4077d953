#pragma once

#include <filesystem>
#include <vector>

namespace stainfocus {

// Grayscale plane, row-major, intensities nominally in [0,1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, double fill = 0.0);

    [[nodiscard]] double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    [[nodiscard]] bool empty() const noexcept { return pixels.empty(); }
    [[nodiscard]] Image transposed() const;

    friend bool operator==(const Image&, const Image&) = default;
};

enum class BitDepth { k8 = 8, k16 = 16 };

// Binary PGM (P5). 16-bit samples are big-endian per the netpbm format.
void write_pgm(const std::filesystem::path& path, const Image& image, BitDepth depth = BitDepth::k16);
// Reads 8- or 16-bit binary PGM and normalizes by maxval.
Image read_pgm(const std::filesystem::path& path);

}  // namespace stainfocus
