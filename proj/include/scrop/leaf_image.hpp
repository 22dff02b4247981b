#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scrop::sensors {

/// Interleaved 8-bit image, row-major, `channels` bytes per pixel.
struct LeafImage {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    std::size_t expected_size() const {
        return static_cast<std::size_t>(width) * height * channels;
    }
    friend bool operator==(const LeafImage&, const LeafImage&) = default;
};

inline constexpr int kVgaWidth = 640;
inline constexpr int kVgaHeight = 480;

/// What the camera is pointed at: a healthy leaf or one carrying lesions of
/// a configured disease class.
struct SceneLabel {
    std::optional<int> disease_class;

    static SceneLabel healthy() { return {}; }
    static SceneLabel diseased(int class_id) { return {class_id}; }
    bool is_healthy() const { return !disease_class.has_value(); }
};

/// Disease classes the camera stub can render, keyed by class id.
const std::map<int, std::string>& disease_catalogue();

/// Deterministic synthetic VGA leaf. The same (label, seed, channels) yields
/// identical bytes; a diseased capture differs from the healthy capture with
/// the same seed only inside lesion_mask(label, seed).
/// Throws std::invalid_argument for an unknown class id or channel count.
LeafImage capture_leaf(SceneLabel label, std::uint64_t seed, int channels = 3);

/// Per-pixel lesion coverage used by capture_leaf (empty mask when healthy).
std::vector<bool> lesion_mask(SceneLabel label, std::uint64_t seed);

/// Binary PPM (P6) for 3 channels, PGM (P5) for 1 channel.
std::string encode_pnm(const LeafImage& image);

/// Parses P5/P6 with maxval 255. Throws std::invalid_argument on malformed input.
LeafImage decode_pnm(std::string_view bytes);

LeafImage read_pnm_file(const std::string& path);
void write_pnm_file(const std::string& path, const LeafImage& image);

}  // namespace scrop::sensors
