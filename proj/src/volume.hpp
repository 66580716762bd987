#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"

namespace comodal {

enum class Modality : uint8_t { A = 0, B = 1 };

inline const char* modality_name(Modality m) { return m == Modality::A ? "a" : "b"; }

// A 3-D scalar intensity grid with physical voxel spacing. Data is row-major
// over (d, h, w): index = (d * H + h) * W + w.
struct Volume {
    std::array<int, 3> shape{0, 0, 0};          // D, H, W
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel per axis
    Modality modality{Modality::A};
    std::vector<float> data;

    static Volume zeros(std::array<int, 3> shape,
                        std::array<double, 3> spacing = {1.0, 1.0, 1.0},
                        Modality modality = Modality::A);

    int64_t numel() const {
        return static_cast<int64_t>(shape[0]) * shape[1] * shape[2];
    }
    int64_t index(int d, int h, int w) const {
        return (static_cast<int64_t>(d) * shape[1] + h) * shape[2] + w;
    }
    float at(int d, int h, int w) const { return data[index(d, h, w)]; }
    float& at(int d, int h, int w) { return data[index(d, h, w)]; }

    // Throws Error(invariant) unless dims >= 1, spacing > 0, payload size
    // matches and every value is finite.
    void validate() const;
};

// A 3-D integer class grid aligned with a Volume. Class 0 is background.
struct LabelMask {
    std::array<int, 3> shape{0, 0, 0};
    int num_classes{2};
    std::vector<int16_t> data;

    static LabelMask zeros(std::array<int, 3> shape, int num_classes);

    int64_t numel() const {
        return static_cast<int64_t>(shape[0]) * shape[1] * shape[2];
    }
    int64_t index(int d, int h, int w) const {
        return (static_cast<int64_t>(d) * shape[1] + h) * shape[2] + w;
    }
    int16_t at(int d, int h, int w) const { return data[index(d, h, w)]; }
    int16_t& at(int d, int h, int w) { return data[index(d, h, w)]; }

    // Voxel count of one class.
    int64_t class_count(int k) const;

    void validate() const;
};

// Binary container used for both volumes and masks:
//   magic "CMCV" | version u8 (=1) | dtype u8 (0 = real32, 1 = int16 mask)
//   dims 3 x u32 LE (D, H, W) | spacing 3 x f64 LE
//   masks only: num_classes u16 LE
//   row-major payload, little-endian
void save_volume(const Volume& vol, const std::string& path);
Volume load_volume(const std::string& path);
void save_mask(const LabelMask& mask, const std::string& path);
LabelMask load_mask(const std::string& path);

// Per-volume z-score: (x - mean) / stddev over all voxels. A constant input
// maps to all zeros (zero-variance guard).
Volume zscore_normalize(const Volume& vol);

}  // namespace comodal
