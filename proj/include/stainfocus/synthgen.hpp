#pragma once

#include "stainfocus/dataset.hpp"
#include "stainfocus/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stainfocus {

struct TextureParams {
    double blob_density = 0.0;  // expected blobs per 1000 px^2
    double blob_radius = 2.0;   // px
    double bandlimit = 0.0;     // cutoff as a fraction of Nyquist; 0 disables the random field
};

// Optical profile of one fluorophore in the simulator.
struct StainOptics {
    std::string stain_name;
    double blur_rate = 0.5;   // blur-radius growth per plane of defocus, px/plane
    double base_sigma = 0.5;  // in-focus blur radius, px
    double background = 0.0;  // additive offset in [0,1)
    double noise_std = 0.0;   // Gaussian read noise in [0, 0.2]
    TextureParams texture;
    double intensity = 1.0;   // peak emission in (0,1]

    void validate() const;  // std::invalid_argument on out-of-range fields
};

enum class BestFocusMode { kCenter, kUniformRandom };

struct GenConfig {
    std::vector<StainOptics> stains;
    int stacks_per_stain = 16;
    int planes_per_stack = 32;
    int image_size = 64;
    BestFocusMode best_focus_mode = BestFocusMode::kCenter;
    std::uint64_t seed = 0;
    int num_levels = 10;
    std::string tissue = "synthetic";

    void validate() const;
};

// Four fluorophore-like profiles with distinct blur growth, background, noise and texture.
std::vector<StainOptics> default_stain_optics();
// Four stains sharing one optical profile; the stain-invariant control.
std::vector<StainOptics> uniform_stain_optics();

struct TextureDraw {
    Image image;
    int blob_count = 0;
};

TextureDraw generate_texture_detailed(const StainOptics& optics, int size, std::uint64_t seed);
Image generate_texture(const StainOptics& optics, int size, std::uint64_t seed);

// sigma(z) = base_sigma + blur_rate * |z - b|
double blur_sigma(const StainOptics& optics, int z, int best_focus);
// Emission falls off with accumulated defocus blur: 1 / (1 + 0.05 * blur_rate * |z - b|).
double defocus_attenuation(const StainOptics& optics, int z, int best_focus);

// Separable Gaussian truncated at 3 sigma with symmetric boundary extension; sigma 0 is the identity.
Image gaussian_blur(const Image& image, double sigma);

ZStack render_stack(const Image& texture, const StainOptics& optics, int planes, int best_focus, std::uint64_t seed,
                    int stain_id = 0, std::string fov_id = {}, std::string tissue = {});

// Writes <out>/<stain>/<fov_id>/zNN.pgm and <out>/manifest.csv (ranks via relabel_zstack).
DatasetManifest generate_dataset(const GenConfig& config, const std::filesystem::path& out_dir);

}  // namespace stainfocus
