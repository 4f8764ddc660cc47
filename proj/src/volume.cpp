#include "volshift/volume.hpp"

#include <set>

namespace volshift {

Volume Volume::create(int64_t channels, int64_t depth, int64_t height, int64_t width) {
    Volume v;
    v.channels = channels;
    v.depth = depth;
    v.height = height;
    v.width = width;
    v.data.assign(size_t(channels * depth * height * width), 0.0f);
    v.validate();
    return v;
}

void Volume::validate() const {
    if (channels < 1 || channels > 2)
        throw ShapeError(strf("volume: channel count ", channels, " outside {1,2}"));
    if (depth < 1 || height < 1 || width < 1)
        throw ShapeError(strf("volume: extents ", depth, "x", height, "x", width, " must be >= 1"));
    if (int64_t(data.size()) != channels * voxels())
        throw ShapeError(strf("volume: data length ", data.size(), " != ", channels * voxels()));
    for (float s : spacing)
        if (!(s > 0)) throw ShapeError(strf("volume: non-positive spacing ", s));
    if (!mask.empty() && int64_t(mask.size()) != voxels())
        throw ShapeError(strf("volume: mask length ", mask.size(), " != voxel count ", voxels()));
    if (!labels.empty() && int64_t(labels.size()) != voxels())
        throw ShapeError(strf("volume: label length ", labels.size(), " != voxel count ", voxels()));
}

void DomainSet::validate() const {
    if (volumes.empty()) throw ConfigError(strf("domain '", name, "' is empty"));
    int64_t c = volumes.front().channels;
    for (const auto& v : volumes) {
        v.validate();
        if (v.channels != c)
            throw ShapeError(strf("domain '", name, "': mixed channel counts ", c, " and ", v.channels));
    }
}

Tensor tensor_from_volume(const Volume& v) {
    return Tensor::from_data({1, v.channels, v.depth, v.height, v.width}, v.data);
}

Tensor tensor_patch(const Volume& v, int64_t z0, int64_t y0, int64_t x0, int64_t size) {
    if (z0 < 0 || y0 < 0 || x0 < 0 || z0 + size > v.depth || y0 + size > v.height || x0 + size > v.width)
        throw ShapeError(strf("patch origin (", z0, ",", y0, ",", x0, ") size ", size, " outside volume ",
                              v.depth, "x", v.height, "x", v.width));
    auto t = Tensor::zeros({1, v.channels, size, size, size});
    float* dst = t.data();
    for (int64_t c = 0; c < v.channels; ++c)
        for (int64_t z = 0; z < size; ++z)
            for (int64_t y = 0; y < size; ++y) {
                const float* src = v.data.data() + v.index(c, z0 + z, y0 + y, x0);
                std::copy(src, src + size, dst);
                dst += size;
            }
    return t;
}

Volume volume_from_tensor(const Tensor& t, const Volume& like) {
    if (t.rank() != 5 || t.extent(0) != 1)
        throw ShapeError(strf("volume_from_tensor: need [1,C,D,H,W], got ", shape_str(t.shape())));
    Volume v = Volume::create(t.extent(1), t.extent(2), t.extent(3), t.extent(4));
    v.data = t.values();
    v.spacing = like.spacing;
    v.mask = like.mask;
    v.labels = like.labels;
    v.provenance = like.provenance;
    if (v.voxels() != like.voxels()) {
        v.mask.clear();
        v.labels.clear();
    }
    v.validate();
    return v;
}

}  // namespace volshift
