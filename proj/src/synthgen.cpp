#include "stainfocus/synthgen.hpp"

#include "stainfocus/random.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <set>
#include <stdexcept>

namespace stainfocus {

void StainOptics::validate() const {
    auto fail = [&](const std::string& what) { throw std::invalid_argument("stain '" + stain_name + "': " + what); };
    if (stain_name.empty()) throw std::invalid_argument("stain optics require a name");
    if (!(blur_rate >= 0.0)) fail("blur_rate must be >= 0");
    if (base_sigma < 0.0) fail("base_sigma must be >= 0");
    if (background < 0.0 || background >= 1.0) fail("background must be in [0,1)");
    if (noise_std < 0.0 || noise_std > 0.2) fail("noise_std must be in [0,0.2]");
    if (!(intensity > 0.0) || intensity > 1.0) fail("intensity must be in (0,1]");
    if (texture.blob_density < 0.0 || texture.blob_radius <= 0.0) fail("blob density/radius out of range");
    if (texture.bandlimit < 0.0 || texture.bandlimit > 1.0) fail("bandlimit must be in [0,1]");
}

void GenConfig::validate() const {
    if (planes_per_stack < 2) throw std::invalid_argument("planes_per_stack must be >= 2");
    if (image_size < 16) throw std::invalid_argument("image_size must be >= 16");
    if (stacks_per_stain < 0) throw std::invalid_argument("stacks_per_stain must be >= 0");
    if (num_levels < 2) throw std::invalid_argument("num_levels must be >= 2");
    std::set<std::string> names;
    for (const auto& s : stains) {
        s.validate();
        if (!(s.blur_rate > 0.0)) throw std::invalid_argument("stain '" + s.stain_name + "': blur_rate must be > 0 for dataset generation");
        if (!names.insert(s.stain_name).second) throw std::invalid_argument("duplicate stain '" + s.stain_name + "'");
    }
}

std::vector<StainOptics> default_stain_optics() {
    return {
        {"hoechst", 0.55, 0.4, 0.02, 0.008, {6.0, 2.0, 0.0}, 0.90},
        {"alexa488", 0.38, 0.7, 0.30, 0.012, {0.0, 4.0, 0.10}, 0.55},
        {"cy3", 0.30, 0.9, 0.12, 0.015, {16.0, 1.2, 0.50}, 0.70},
        {"alexa647", 0.22, 1.1, 0.50, 0.045, {2.0, 5.0, 0.30}, 0.45},
    };
}

std::vector<StainOptics> uniform_stain_optics() {
    std::vector<StainOptics> out;
    const StainOptics base = default_stain_optics().front();
    for (const char* name : {"hoechst", "alexa488", "cy3", "alexa647"}) {
        StainOptics s = base;
        s.stain_name = name;
        out.push_back(s);
    }
    return out;
}

namespace {

// Random field with energy only below `cutoff` (fraction of Nyquist), min-max scaled to [0,1].
std::vector<double> bandlimited_field(int n, double cutoff, Rng& rng) {
    const int half = n / 2 + 1;
    std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(n) * half);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int ky = 0; ky < n; ++ky) {
        const double fy = static_cast<double>(ky <= n / 2 ? ky : ky - n) / n;
        for (int kx = 0; kx < half; ++kx) {
            const double fx = static_cast<double>(kx) / n;
            const double radial = std::sqrt(fx * fx + fy * fy) / 0.5;
            const double re = normal(rng);
            const double im = normal(rng);
            if ((ky == 0 && kx == 0) || radial > cutoff) continue;
            spectrum[static_cast<std::size_t>(ky) * half + kx] = {re, im};
        }
    }
    std::vector<double> field(static_cast<std::size_t>(n) * n);
    fftw_plan plan = fftw_plan_dft_c2r_2d(n, n, reinterpret_cast<fftw_complex*>(spectrum.data()), field.data(), FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);

    const auto [lo, hi] = std::minmax_element(field.begin(), field.end());
    const double mn = *lo;
    const double span = *hi - *lo;
    for (auto& v : field) v = span > 0.0 ? (v - mn) / span : 0.0;
    return field;
}

int reflect_index(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

}  // namespace

TextureDraw generate_texture_detailed(const StainOptics& optics, int size, std::uint64_t seed) {
    optics.validate();
    if (size < 16) throw std::invalid_argument("texture size must be >= 16");
    Rng rng(seed);
    std::vector<double> content(static_cast<std::size_t>(size) * size, 0.0);

    if (optics.texture.bandlimit > 0.0) {
        const auto field = bandlimited_field(size, optics.texture.bandlimit, rng);
        for (std::size_t i = 0; i < content.size(); ++i) content[i] = 0.5 * field[i];
    }

    TextureDraw draw;
    const double expected = optics.texture.blob_density * size * size / 1000.0;
    if (expected > 0.0) {
        draw.blob_count = std::poisson_distribution<int>(expected)(rng);
        std::uniform_real_distribution<double> pos(0.0, static_cast<double>(size));
        std::uniform_real_distribution<double> amp(0.5, 1.0);
        const double s = optics.texture.blob_radius / 2.0;
        const int reach = static_cast<int>(std::ceil(3.0 * s));
        for (int b = 0; b < draw.blob_count; ++b) {
            const double cy = pos(rng);
            const double cx = pos(rng);
            const double a = amp(rng);
            for (int y = std::max(0, static_cast<int>(cy) - reach); y <= std::min(size - 1, static_cast<int>(cy) + reach); ++y)
                for (int x = std::max(0, static_cast<int>(cx) - reach); x <= std::min(size - 1, static_cast<int>(cx) + reach); ++x) {
                    const double dy = y + 0.5 - cy;
                    const double dx = x + 0.5 - cx;
                    content[static_cast<std::size_t>(y) * size + x] += a * std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
                }
        }
    }

    draw.image = Image(size, size);
    for (std::size_t i = 0; i < content.size(); ++i) draw.image.pixels[i] = optics.intensity * std::clamp(content[i], 0.0, 1.0);
    return draw;
}

Image generate_texture(const StainOptics& optics, int size, std::uint64_t seed) {
    return generate_texture_detailed(optics, size, seed).image;
}

double blur_sigma(const StainOptics& optics, int z, int best_focus) {
    return optics.base_sigma + optics.blur_rate * std::abs(z - best_focus);
}

double defocus_attenuation(const StainOptics& optics, int z, int best_focus) {
    return 1.0 / (1.0 + 0.05 * optics.blur_rate * std::abs(z - best_focus));
}

Image gaussian_blur(const Image& image, double sigma) {
    if (sigma < 0.0) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
    if (sigma == 0.0) return image;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += kernel[static_cast<std::size_t>(i + radius)];
    }
    for (auto& k : kernel) k /= total;

    const int h = image.height;
    const int w = image.width;
    Image tmp(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += kernel[static_cast<std::size_t>(i + radius)] * image.at(y, reflect_index(x + i, w));
            tmp.at(y, x) = acc;
        }
    Image out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += kernel[static_cast<std::size_t>(i + radius)] * tmp.at(reflect_index(y + i, h), x);
            out.at(y, x) = acc;
        }
    return out;
}

ZStack render_stack(const Image& texture, const StainOptics& optics, int planes, int best_focus, std::uint64_t seed,
                    int stain_id, std::string fov_id, std::string tissue) {
    optics.validate();
    if (planes < 1) throw std::invalid_argument("render_stack: need at least one plane");
    if (best_focus < 0 || best_focus >= planes)
        throw std::invalid_argument("render_stack: best-focus index " + std::to_string(best_focus) + " outside [0, " +
                                    std::to_string(planes - 1) + "]");
    ZStack stack;
    stack.fov_id = std::move(fov_id);
    stack.tissue = std::move(tissue);
    stack.stain_id = stain_id;
    stack.best_focus_index = best_focus;
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int z = 0; z < planes; ++z) {
        Image plane = gaussian_blur(texture, blur_sigma(optics, z, best_focus));
        const double atten = defocus_attenuation(optics, z, best_focus);
        for (auto& v : plane.pixels) {
            double x = v * atten + optics.background;
            if (optics.noise_std > 0.0) x += optics.noise_std * noise(rng);
            v = std::clamp(x, 0.0, 1.0);
        }
        stack.planes.push_back(std::move(plane));
    }
    return stack;
}

namespace {
std::string zero_pad(int value, int width) {
    std::string s = std::to_string(value);
    return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}
}  // namespace

DatasetManifest generate_dataset(const GenConfig& config, const std::filesystem::path& out_dir) {
    config.validate();
    DatasetManifest manifest;
    manifest.num_levels = config.num_levels;
    manifest.root = out_dir;
    for (const auto& s : config.stains) manifest.stain_vocabulary.push_back(s.stain_name);
    std::filesystem::create_directories(out_dir);

    for (std::size_t l = 0; l < config.stains.size(); ++l) {
        const auto& optics = config.stains[l];
        for (int k = 0; k < config.stacks_per_stain; ++k) {
            const std::uint64_t stack_seed = derive_seed(config.seed, optics.stain_name, static_cast<std::uint64_t>(k));
            int best = config.planes_per_stack / 2;
            if (config.best_focus_mode == BestFocusMode::kUniformRandom) {
                Rng pick(derive_seed(stack_seed, "best_focus"));
                best = std::uniform_int_distribution<int>(0, config.planes_per_stack - 1)(pick);
            }
            const std::string fov = optics.stain_name + "_fov" + zero_pad(k, 3);
            const Image texture = generate_texture(optics, config.image_size, derive_seed(stack_seed, "texture"));
            const ZStack stack = render_stack(texture, optics, config.planes_per_stack, best, derive_seed(stack_seed, "noise"),
                                              static_cast<int>(l), fov, config.tissue);
            const auto ranks = relabel_zstack(stack, config.num_levels);

            const std::filesystem::path rel_dir = std::filesystem::path(optics.stain_name) / fov;
            std::filesystem::create_directories(out_dir / rel_dir);
            for (int z = 0; z < config.planes_per_stack; ++z) {
                const auto rel = rel_dir / ("z" + zero_pad(z, 2) + ".pgm");
                try {
                    write_pgm(out_dir / rel, stack.planes[static_cast<std::size_t>(z)]);
                } catch (const std::exception& e) {
                    throw std::runtime_error("generate_dataset: " + std::string(e.what()));
                }
                manifest.entries.push_back({rel.generic_string(), optics.stain_name, config.tissue, fov, z, ranks[static_cast<std::size_t>(z)]});
            }
        }
    }
    save_manifest(manifest, out_dir / "manifest.csv");
    return manifest;
}

}  // namespace stainfocus
