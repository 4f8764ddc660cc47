#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "volshift/tensor.hpp"

namespace volshift {

// Multi-channel 3D voxel grid, channel-major [c][z][y][x]. Optional head
// mask and lesion label mask share the volume's spatial extents.
struct Volume {
    int64_t channels = 0;
    int64_t depth = 0, height = 0, width = 0;
    std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};  // x, y, z in mm
    std::vector<float> data;
    std::vector<uint8_t> mask;    // head mask; empty when absent
    std::vector<uint8_t> labels;  // lesion mask; empty when absent
    std::string provenance;

    static Volume create(int64_t channels, int64_t depth, int64_t height, int64_t width);

    int64_t voxels() const { return depth * height * width; }
    int64_t index(int64_t c, int64_t z, int64_t y, int64_t x) const {
        return ((c * depth + z) * height + y) * width + x;
    }
    float at(int64_t c, int64_t z, int64_t y, int64_t x) const { return data[size_t(index(c, z, y, x))]; }
    float& at(int64_t c, int64_t z, int64_t y, int64_t x) { return data[size_t(index(c, z, y, x))]; }

    bool has_mask() const { return !mask.empty(); }
    bool has_labels() const { return !labels.empty(); }

    // throws ShapeError/ConfigError when the stated invariants do not hold
    void validate() const;
};

// Named, ordered collection of volumes from one acquisition source.
struct DomainSet {
    std::string name;
    std::vector<Volume> volumes;

    size_t size() const { return volumes.size(); }
    bool empty() const { return volumes.empty(); }
    void validate() const;
};

// Bridges between volumes and network tensors.
Tensor tensor_from_volume(const Volume& v);
Tensor tensor_patch(const Volume& v, int64_t z0, int64_t y0, int64_t x0, int64_t size);
Volume volume_from_tensor(const Tensor& t, const Volume& like);

}  // namespace volshift
