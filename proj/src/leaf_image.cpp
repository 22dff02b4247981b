#include "scrop/leaf_image.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <numbers>
#include <stdexcept>

namespace scrop::sensors {

namespace {

using Rgb = std::array<double, 3>;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

double unit(std::mt19937_64& engine) {
    return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

double uniform(std::mt19937_64& engine, double lo, double hi) {
    return lo + (hi - lo) * unit(engine);
}

// Per-pixel jitter in [-1, 1], independent of the scene label.
double pixel_noise(std::uint64_t seed, int x, int y) {
    const std::uint64_t h = splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(y) << 32) |
                                                         static_cast<std::uint32_t>(x)));
    return static_cast<double>(h >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

struct LeafGeometry {
    double cx, cy, a, b, cos_t, sin_t;
    Rgb color;

    // Squared normalised radius; <= 1 inside the leaf.
    double radius2(double x, double y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        const double u = (dx * cos_t + dy * sin_t) / a;
        const double v = (-dx * sin_t + dy * cos_t) / b;
        return u * u + v * v;
    }
    double minor(double x, double y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        return (-dx * sin_t + dy * cos_t) / b;
    }
};

LeafGeometry leaf_geometry(std::uint64_t seed) {
    std::mt19937_64 engine(seed);
    LeafGeometry g{};
    g.cx = kVgaWidth / 2.0 + uniform(engine, -40.0, 40.0);
    g.cy = kVgaHeight / 2.0 + uniform(engine, -30.0, 30.0);
    g.a = uniform(engine, 190.0, 250.0);
    g.b = uniform(engine, 120.0, 170.0);
    const double theta = uniform(engine, -0.5, 0.5);
    g.cos_t = std::cos(theta);
    g.sin_t = std::sin(theta);
    g.color = {70.0 + uniform(engine, -15.0, 15.0), 150.0 + uniform(engine, -20.0, 20.0),
               50.0 + uniform(engine, -10.0, 10.0)};
    return g;
}

struct Lesion {
    double x, y, r;
};

Rgb lesion_color(int class_id) {
    switch (class_id) {
        case 1: return {85.0, 55.0, 30.0};    // necrotic brown spots
        case 2: return {150.0, 70.0, 30.0};   // rust pustules
        default: return {60.0, 60.0, 60.0};
    }
}

std::vector<Lesion> place_lesions(const LeafGeometry& g, SceneLabel label, std::uint64_t seed) {
    if (label.is_healthy()) return {};
    if (!disease_catalogue().contains(*label.disease_class)) {
        throw std::invalid_argument("unknown disease class " + std::to_string(*label.disease_class));
    }
    std::mt19937_64 engine(splitmix64(seed ^ 0x5CE1E5A11CE5ull) +
                           static_cast<std::uint64_t>(*label.disease_class));
    const int count = 5 + static_cast<int>(engine() % 5);
    std::vector<Lesion> lesions;
    lesions.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double rho = 0.7 * std::sqrt(unit(engine));
        const double phi = uniform(engine, 0.0, 2.0 * std::numbers::pi);
        const double u = rho * std::cos(phi) * g.a;
        const double v = rho * std::sin(phi) * g.b;
        Lesion l{};
        l.x = g.cx + u * g.cos_t - v * g.sin_t;
        l.y = g.cy + u * g.sin_t + v * g.cos_t;
        l.r = uniform(engine, 16.0, 34.0);
        lesions.push_back(l);
    }
    return lesions;
}

bool in_lesion(const std::vector<Lesion>& lesions, double x, double y) {
    return std::any_of(lesions.begin(), lesions.end(), [&](const Lesion& l) {
        const double dx = x - l.x;
        const double dy = y - l.y;
        return dx * dx + dy * dy <= l.r * l.r;
    });
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

const std::map<int, std::string>& disease_catalogue() {
    static const std::map<int, std::string> catalogue{{1, "early_blight"}, {2, "leaf_rust"}};
    return catalogue;
}

std::vector<bool> lesion_mask(SceneLabel label, std::uint64_t seed) {
    const LeafGeometry g = leaf_geometry(seed);
    const std::vector<Lesion> lesions = place_lesions(g, label, seed);
    std::vector<bool> mask(static_cast<std::size_t>(kVgaWidth) * kVgaHeight, false);
    if (lesions.empty()) return mask;
    for (int y = 0; y < kVgaHeight; ++y) {
        for (int x = 0; x < kVgaWidth; ++x) {
            if (g.radius2(x, y) <= 1.0 && in_lesion(lesions, x, y)) {
                mask[static_cast<std::size_t>(y) * kVgaWidth + x] = true;
            }
        }
    }
    return mask;
}

LeafImage capture_leaf(SceneLabel label, std::uint64_t seed, int channels) {
    if (channels != 1 && channels != 3) {
        throw std::invalid_argument("channels must be 1 or 3");
    }
    const LeafGeometry g = leaf_geometry(seed);
    const std::vector<Lesion> lesions = place_lesions(g, label, seed);
    const Rgb soil{110.0, 85.0, 60.0};
    const Rgb spot = label.is_healthy() ? Rgb{} : lesion_color(*label.disease_class);

    LeafImage image;
    image.width = kVgaWidth;
    image.height = kVgaHeight;
    image.channels = channels;
    image.pixels.resize(image.expected_size());

    auto out = image.pixels.begin();
    for (int y = 0; y < kVgaHeight; ++y) {
        for (int x = 0; x < kVgaWidth; ++x) {
            const double noise = pixel_noise(seed, x, y);
            const double r2 = g.radius2(x, y);
            Rgb px;
            if (r2 > 1.0) {
                for (int c = 0; c < 3; ++c) px[c] = soil[c] + 12.0 * noise;
            } else if (in_lesion(lesions, x, y)) {
                for (int c = 0; c < 3; ++c) px[c] = spot[c] + 6.0 * noise;
            } else {
                const double shade = 1.0 - 0.15 * r2;
                const double rib = std::abs(g.minor(x, y)) < 0.02 ? 30.0 : 0.0;
                for (int c = 0; c < 3; ++c) px[c] = g.color[c] * shade + rib + 6.0 * noise;
            }
            if (channels == 3) {
                for (int c = 0; c < 3; ++c) *out++ = to_byte(px[c]);
            } else {
                *out++ = to_byte(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
            }
        }
    }
    return image;
}

std::string encode_pnm(const LeafImage& image) {
    if (image.channels != 1 && image.channels != 3) {
        throw std::invalid_argument("PNM supports 1 or 3 channels");
    }
    if (image.pixels.size() != image.expected_size()) {
        throw std::invalid_argument("pixel buffer does not match image dimensions");
    }
    std::string out = (image.channels == 3 ? "P6\n" : "P5\n") + std::to_string(image.width) + " " +
                      std::to_string(image.height) + "\n255\n";
    out.append(image.pixels.begin(), image.pixels.end());
    return out;
}

LeafImage decode_pnm(std::string_view bytes) {
    std::size_t pos = 0;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&] {
        skip_space();
        long value = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            value = value * 10 + (bytes[pos++] - '0');
            if (++digits > 9) throw std::invalid_argument("PNM header value too large");
        }
        if (digits == 0) throw std::invalid_argument("malformed PNM header");
        return static_cast<int>(value);
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
        throw std::invalid_argument("not a binary PGM/PPM image");
    }
    pos = 2;
    LeafImage image;
    image.channels = bytes[1] == '6' ? 3 : 1;
    image.width = read_int();
    image.height = read_int();
    const int maxval = read_int();
    if (image.width <= 0 || image.height <= 0) throw std::invalid_argument("empty PNM image");
    if (maxval != 255) throw std::invalid_argument("only 8-bit PNM images are supported");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw std::invalid_argument("malformed PNM header");
    }
    ++pos;
    if (bytes.size() - pos < image.expected_size()) {
        throw std::invalid_argument("truncated PNM pixel data");
    }
    image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                        bytes.begin() + static_cast<std::ptrdiff_t>(pos + image.expected_size()));
    return image;
}

LeafImage read_pnm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image " + path);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    return decode_pnm(bytes);
}

void write_pnm_file(const std::string& path, const LeafImage& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image " + path);
    const std::string bytes = encode_pnm(image);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace scrop::sensors
