#include "stainfocus/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

namespace stainfocus {

Image::Image(int h, int w, double fill) : height(h), width(w) {
    if (h < 0 || w < 0) throw std::invalid_argument("image dimensions must be non-negative");
    pixels.assign(static_cast<std::size_t>(h) * w, fill);
}

Image Image::transposed() const {
    Image t(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) t.at(x, y) = at(y, x);
    return t;
}

void write_pgm(const std::filesystem::path& path, const Image& image, BitDepth depth) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const int maxval = depth == BitDepth::k16 ? 65535 : 255;
    out << "P5\n" << image.width << ' ' << image.height << '\n' << maxval << '\n';
    std::string buffer;
    buffer.reserve(image.pixels.size() * (depth == BitDepth::k16 ? 2 : 1));
    for (double v : image.pixels) {
        const auto q = static_cast<std::uint32_t>(std::lround(std::clamp(v, 0.0, 1.0) * maxval));
        if (depth == BitDepth::k16) buffer.push_back(static_cast<char>((q >> 8) & 0xFF));
        buffer.push_back(static_cast<char>(q & 0xFF));
    }
    out.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

namespace {
int read_header_int(std::istream& in, const std::filesystem::path& path) {
    in >> std::ws;
    while (in.peek() == '#') {
        std::string comment;
        std::getline(in, comment);
        in >> std::ws;
    }
    int value = 0;
    if (!(in >> value)) throw std::runtime_error("malformed PGM header in " + path.string());
    return value;
}
}  // namespace

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5") throw std::runtime_error("unsupported image format in " + path.string() + " (expected binary PGM)");
    const int width = read_header_int(in, path);
    const int height = read_header_int(in, path);
    const int maxval = read_header_int(in, path);
    if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 65535)
        throw std::runtime_error("invalid PGM dimensions or maxval in " + path.string());
    in.get();  // single whitespace before raster

    const bool wide = maxval > 255;
    std::vector<unsigned char> raw(static_cast<std::size_t>(width) * height * (wide ? 2 : 1));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw std::runtime_error("truncated PGM raster in " + path.string());

    Image image(height, width);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const unsigned q = wide ? (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1] : raw[i];
        image.pixels[i] = static_cast<double>(q) / maxval;
    }
    return image;
}

}  // namespace stainfocus
