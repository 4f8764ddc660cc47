#include "volshift/volio.hpp"

#include <cstring>
#include <fstream>
#include <iostream>

namespace volshift {

namespace {

// NIfTI-1 header field offsets (348-byte header)
constexpr size_t kOffSizeof = 0;
constexpr size_t kOffDim = 40;       // int16[8]
constexpr size_t kOffDatatype = 70;  // int16
constexpr size_t kOffBitpix = 72;    // int16
constexpr size_t kOffPixdim = 76;    // float[8]
constexpr size_t kOffVoxOffset = 108;
constexpr size_t kOffSclSlope = 112;
constexpr size_t kOffSclInter = 116;
constexpr size_t kOffQformCode = 252;
constexpr size_t kOffSformCode = 254;
constexpr size_t kOffMagic = 344;
constexpr size_t kHeaderSize = 348;

template <typename T>
T load_le(const uint8_t* p, bool swap) {
    T v;
    uint8_t buf[sizeof(T)];
    std::memcpy(buf, p, sizeof(T));
    if (swap)
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

template <typename T>
void store_le(std::vector<uint8_t>& out, size_t off, T v) {
    std::memcpy(out.data() + off, &v, sizeof(T));
}

struct NiftiDims {
    int16_t rank;
    int64_t w, h, d, c;
};

NiftiDims parse_dims(const std::vector<uint8_t>& bytes, bool swap) {
    NiftiDims nd{};
    nd.rank = load_le<int16_t>(bytes.data() + kOffDim, swap);
    nd.w = load_le<int16_t>(bytes.data() + kOffDim + 2, swap);
    nd.h = load_le<int16_t>(bytes.data() + kOffDim + 4, swap);
    nd.d = load_le<int16_t>(bytes.data() + kOffDim + 6, swap);
    nd.c = nd.rank >= 4 ? load_le<int16_t>(bytes.data() + kOffDim + 8, swap) : 1;
    return nd;
}

std::vector<uint8_t> nifti_header(const Volume& v, int16_t datatype, int16_t bitpix) {
    std::vector<uint8_t> h(kHeaderSize + 4, 0);  // 4 pad bytes up to vox_offset 352
    store_le<int32_t>(h, kOffSizeof, 348);
    int16_t rank = v.channels > 1 ? 4 : 3;
    store_le<int16_t>(h, kOffDim, rank);
    store_le<int16_t>(h, kOffDim + 2, int16_t(v.width));
    store_le<int16_t>(h, kOffDim + 4, int16_t(v.height));
    store_le<int16_t>(h, kOffDim + 6, int16_t(v.depth));
    store_le<int16_t>(h, kOffDim + 8, int16_t(rank == 4 ? v.channels : 1));
    for (size_t i = 5; i <= 7; ++i) store_le<int16_t>(h, kOffDim + 2 * i, 1);
    store_le<int16_t>(h, kOffDatatype, datatype);
    store_le<int16_t>(h, kOffBitpix, bitpix);
    store_le<float>(h, kOffPixdim, 1.0f);
    store_le<float>(h, kOffPixdim + 4, v.spacing[0]);
    store_le<float>(h, kOffPixdim + 8, v.spacing[1]);
    store_le<float>(h, kOffPixdim + 12, v.spacing[2]);
    store_le<float>(h, kOffVoxOffset, 352.0f);
    store_le<float>(h, kOffSclSlope, 1.0f);
    store_le<float>(h, kOffSclInter, 0.0f);
    h[kOffMagic] = 'n';
    h[kOffMagic + 1] = '+';
    h[kOffMagic + 2] = '1';
    h[kOffMagic + 3] = '\0';
    return h;
}

}  // namespace

Volume read_nifti(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < kHeaderSize)
        throw ParseError(strf("nifti: file ends at byte ", bytes.size(), ", header needs ", kHeaderSize));
    if (std::memcmp(bytes.data() + kOffMagic, "n+1\0", 4) != 0)
        throw ParseError(strf("nifti: bad magic at byte ", kOffMagic, " (only single-file n+1 supported)"));

    // endianness: dim[0] must land in [1,7]
    bool swap = false;
    int16_t rank = load_le<int16_t>(bytes.data() + kOffDim, false);
    if (rank < 1 || rank > 7) {
        swap = true;
        rank = load_le<int16_t>(bytes.data() + kOffDim, true);
        if (rank < 1 || rank > 7)
            throw ParseError(strf("nifti: dim[0] = ", rank, " implausible after endian swap (byte ", kOffDim, ")"));
    }
    NiftiDims nd = parse_dims(bytes, swap);
    if (nd.rank != 3 && nd.rank != 4)
        throw ParseError(strf("nifti: dim[0] = ", nd.rank, ", only 3-D or 4-D supported (byte ", kOffDim, ")"));
    if (nd.c < 1 || nd.c > 2)
        throw ParseError(strf("nifti: dim[4] = ", nd.c, " channels outside {1,2}"));
    if (nd.w < 1 || nd.h < 1 || nd.d < 1)
        throw ParseError(strf("nifti: non-positive spatial dims ", nd.w, "x", nd.h, "x", nd.d));

    int16_t datatype = load_le<int16_t>(bytes.data() + kOffDatatype, swap);
    int bytes_per = 0;
    switch (datatype) {
        case 2: bytes_per = 1; break;   // uint8
        case 4: bytes_per = 2; break;   // int16
        case 16: bytes_per = 4; break;  // float32
        case 64: bytes_per = 8; break;  // float64
        default:
            throw ParseError(strf("nifti: unsupported datatype code ", datatype, " (byte ", kOffDatatype, ")"));
    }

    float vox_offset = load_le<float>(bytes.data() + kOffVoxOffset, swap);
    size_t off = size_t(vox_offset);
    if (vox_offset < float(kHeaderSize) || float(off) != vox_offset)
        throw ParseError(strf("nifti: bad vox_offset ", vox_offset, " (byte ", kOffVoxOffset, ")"));

    float slope = load_le<float>(bytes.data() + kOffSclSlope, swap);
    float inter = load_le<float>(bytes.data() + kOffSclInter, swap);
    if (slope == 0.0f) slope = 1.0f;

    if (load_le<int16_t>(bytes.data() + kOffQformCode, swap) != 0 ||
        load_le<int16_t>(bytes.data() + kOffSformCode, swap) != 0)
        std::cerr << "[volio] warning: qform/sform orientation present but ignored\n";

    Volume v = Volume::create(nd.c, nd.d, nd.h, nd.w);
    v.spacing = {load_le<float>(bytes.data() + kOffPixdim + 4, swap),
                 load_le<float>(bytes.data() + kOffPixdim + 8, swap),
                 load_le<float>(bytes.data() + kOffPixdim + 12, swap)};
    for (auto& s : v.spacing)
        if (!(s > 0)) s = 1.0f;

    size_t nvox = size_t(nd.c * nd.d * nd.h * nd.w);
    size_t need = off + nvox * size_t(bytes_per);
    if (bytes.size() < need)
        throw ParseError(strf("nifti: data truncated at byte ", bytes.size(), ", expected ", need));

    const uint8_t* p = bytes.data() + off;
    // file order is x fastest, then y, z, channel — matches [c][z][y][x]
    for (size_t i = 0; i < nvox; ++i) {
        double raw;
        switch (datatype) {
            case 2: raw = double(p[i]); break;
            case 4: raw = double(load_le<int16_t>(p + 2 * i, swap)); break;
            case 16: raw = double(load_le<float>(p + 4 * i, swap)); break;
            default: raw = load_le<double>(p + 8 * i, swap); break;
        }
        v.data[i] = float(double(slope) * raw + double(inter));
    }
    return v;
}

std::vector<uint8_t> write_nifti(const Volume& v) {
    v.validate();
    auto out = nifti_header(v, 16, 32);
    size_t off = out.size();
    out.resize(off + v.data.size() * 4);
    std::memcpy(out.data() + off, v.data.data(), v.data.size() * 4);
    return out;
}

std::vector<uint8_t> write_nifti_labels(const Volume& v) {
    if (!v.has_labels()) throw ConfigError("write_nifti_labels: volume has no label mask");
    Volume shell = v;
    shell.channels = 1;
    shell.data.assign(size_t(v.voxels()), 0.0f);
    auto out = nifti_header(shell, 2, 8);
    size_t off = out.size();
    out.resize(off + v.labels.size());
    for (size_t i = 0; i < v.labels.size(); ++i) out[off + i] = v.labels[i] ? 1 : 0;
    return out;
}

namespace {
constexpr char kVvolMagic[6] = {'V', 'V', 'O', 'L', '1', '\0'};
}

std::vector<uint8_t> write_vvol(const Volume& v) {
    v.validate();
    std::vector<uint8_t> out(6 + 4 * 5 + 4 * 3 + 2, 0);
    std::memcpy(out.data(), kVvolMagic, 6);
    size_t o = 6;
    for (uint32_t field : {uint32_t(1), uint32_t(v.channels), uint32_t(v.depth), uint32_t(v.height),
                           uint32_t(v.width)}) {
        store_le<uint32_t>(out, o, field);
        o += 4;
    }
    for (float s : v.spacing) {
        store_le<float>(out, o, s);
        o += 4;
    }
    out[o++] = 0;  // dtype f32
    out[o++] = v.has_mask() ? 1 : 0;
    size_t data_off = out.size();
    out.resize(data_off + v.data.size() * 4);
    std::memcpy(out.data() + data_off, v.data.data(), v.data.size() * 4);
    if (v.has_mask()) {
        size_t mask_off = out.size();
        size_t mask_bytes = (v.mask.size() + 7) / 8;
        out.resize(mask_off + mask_bytes, 0);
        for (size_t i = 0; i < v.mask.size(); ++i)
            if (v.mask[i]) out[mask_off + i / 8] |= uint8_t(1u << (i % 8));
    }
    return out;
}

Volume read_vvol(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 6 + 20 + 12 + 2)
        throw ParseError(strf("vvol: file ends at byte ", bytes.size(), ", header needs ", 6 + 20 + 12 + 2));
    if (std::memcmp(bytes.data(), kVvolMagic, 6) != 0) throw ParseError("vvol: bad magic");
    size_t o = 6;
    auto read_u32 = [&](const char* what) {
        uint32_t v = load_le<uint32_t>(bytes.data() + o, false);
        (void)what;
        o += 4;
        return v;
    };
    uint32_t version = read_u32("version");
    if (version != 1) throw ParseError(strf("vvol: unsupported version ", version));
    uint32_t c = read_u32("channels"), d = read_u32("depth"), h = read_u32("height"), w = read_u32("width");
    Volume v = Volume::create(int64_t(c), int64_t(d), int64_t(h), int64_t(w));
    for (auto& s : v.spacing) {
        s = load_le<float>(bytes.data() + o, false);
        o += 4;
    }
    uint8_t dtype = bytes[o++];
    if (dtype != 0) throw ParseError(strf("vvol: unsupported dtype code ", int(dtype)));
    uint8_t mask_present = bytes[o++];

    size_t need = o + v.data.size() * 4;
    if (bytes.size() < need)
        throw ParseError(strf("vvol: data truncated, file has ", bytes.size(), " bytes, expected ", need));
    std::memcpy(v.data.data(), bytes.data() + o, v.data.size() * 4);
    o += v.data.size() * 4;
    if (mask_present) {
        size_t mask_bytes = (size_t(v.voxels()) + 7) / 8;
        if (bytes.size() < o + mask_bytes)
            throw ParseError(strf("vvol: mask truncated, file has ", bytes.size(), " bytes, expected ",
                                  o + mask_bytes));
        v.mask.assign(size_t(v.voxels()), 0);
        for (size_t i = 0; i < v.mask.size(); ++i)
            v.mask[i] = (bytes[o + i / 8] >> (i % 8)) & 1u;
    }
    return v;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError(strf("cannot open ", path));
    f.seekg(0, std::ios::end);
    auto n = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(n));
    f.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!f) throw IoError(strf("short read from ", path));
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(strf("cannot open ", path, " for writing"));
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!f) throw IoError(strf("short write to ", path));
}

namespace {
bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}
}  // namespace

Volume load_volume(const std::string& path) {
    auto bytes = read_file(path);
    Volume v = ends_with(path, ".vvol") ? read_vvol(bytes) : read_nifti(bytes);
    v.provenance = path;
    return v;
}

void save_volume(const Volume& v, const std::string& path) {
    write_file(path, ends_with(path, ".vvol") ? write_vvol(v) : write_nifti(v));
}

void save_labels_nifti(const Volume& v, const std::string& path) { write_file(path, write_nifti_labels(v)); }

void load_labels_into(Volume& target, const std::string& path) {
    Volume lab = read_nifti(read_file(path));
    if (lab.voxels() != target.voxels())
        throw ShapeError(strf("labels ", path, ": ", lab.voxels(), " voxels vs volume ", target.voxels()));
    target.labels.assign(size_t(target.voxels()), 0);
    for (int64_t i = 0; i < target.voxels(); ++i) target.labels[size_t(i)] = lab.data[size_t(i)] > 0.5f ? 1 : 0;
}

}  // namespace volshift
