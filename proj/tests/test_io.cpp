#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "test_util.hpp"
#include "volshift/volio.hpp"

using namespace volshift;

namespace {

template <typename T>
void put_le(std::vector<uint8_t>& buf, size_t off, T v) {
    std::memcpy(buf.data() + off, &v, sizeof(T));
}

template <typename T>
void put_be(std::vector<uint8_t>& buf, size_t off, T v) {
    uint8_t tmp[sizeof(T)];
    std::memcpy(tmp, &v, sizeof(T));
    for (size_t i = 0; i < sizeof(T); ++i) buf[off + i] = tmp[sizeof(T) - 1 - i];
}

Volume sample_volume(uint64_t seed, int64_t channels = 2) {
    Rng rng(seed);
    Volume v = Volume::create(channels, 4, 5, 6);
    for (auto& d : v.data) d = float(rng.uniform(-10.0, 10.0));
    v.spacing = {0.96f, 0.95f, 3.0f};
    return v;
}

}  // namespace

TEST_CASE("nifti round-trip is bit-exact") {
    Volume v = sample_volume(1);
    auto bytes = write_nifti(v);
    Volume r = read_nifti(bytes);
    REQUIRE(r.channels == v.channels);
    REQUIRE(r.depth == v.depth);
    REQUIRE(r.height == v.height);
    REQUIRE(r.width == v.width);
    for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);
    for (int i = 0; i < 3; ++i) CHECK(r.spacing[size_t(i)] == v.spacing[size_t(i)]);
}

TEST_CASE("nifti header is 348 bytes plus 4 padding before data") {
    Volume v = sample_volume(2, 1);
    auto bytes = write_nifti(v);
    CHECK(bytes.size() == 352 + v.data.size() * 4);
    int32_t sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    CHECK(sizeof_hdr == 348);
    float vox_offset;
    std::memcpy(&vox_offset, bytes.data() + 108, 4);
    CHECK(vox_offset == 352.0f);
}

TEST_CASE("independent field-offset oracle agrees with the writer") {
    // offsets per the published NIfTI-1 header table, decoded separately
    // from the library's implementation
    Volume v = sample_volume(3);
    auto b = write_nifti(v);
    auto rd16 = [&](size_t off) {
        int16_t x;
        std::memcpy(&x, b.data() + off, 2);
        return x;
    };
    auto rdf = [&](size_t off) {
        float x;
        std::memcpy(&x, b.data() + off, 4);
        return x;
    };
    CHECK(rd16(40) == 4);           // dim[0]
    CHECK(rd16(42) == v.width);     // dim[1] = nx
    CHECK(rd16(44) == v.height);    // dim[2] = ny
    CHECK(rd16(46) == v.depth);     // dim[3] = nz
    CHECK(rd16(48) == v.channels);  // dim[4] = nt
    CHECK(rd16(70) == 16);          // DT_FLOAT32
    CHECK(rd16(72) == 32);          // bitpix
    CHECK(rdf(80) == v.spacing[0]);
    CHECK(rdf(84) == v.spacing[1]);
    CHECK(rdf(88) == v.spacing[2]);
    CHECK(rdf(112) == 1.0f);  // scl_slope
    CHECK(rdf(116) == 0.0f);  // scl_inter
    CHECK(std::memcmp(b.data() + 344, "n+1\0", 4) == 0);
    // first voxel value sits at vox_offset
    float v0;
    std::memcpy(&v0, b.data() + 352, 4);
    CHECK(v0 == v.data[0]);
}

TEST_CASE("nifti applies scl_slope and scl_inter to int16 data") {
    // 2x2x2 int16 volume with slope 2, inter 1
    std::vector<uint8_t> b(352 + 8 * 2, 0);
    put_le<int32_t>(b, 0, 348);
    put_le<int16_t>(b, 40, 3);
    put_le<int16_t>(b, 42, 2);
    put_le<int16_t>(b, 44, 2);
    put_le<int16_t>(b, 46, 2);
    put_le<int16_t>(b, 70, 4);   // int16
    put_le<int16_t>(b, 72, 16);  // bitpix
    put_le<float>(b, 80, 1.0f);
    put_le<float>(b, 84, 1.0f);
    put_le<float>(b, 88, 1.0f);
    put_le<float>(b, 108, 352.0f);
    put_le<float>(b, 112, 2.0f);
    put_le<float>(b, 116, 1.0f);
    std::memcpy(b.data() + 344, "n+1\0", 4);
    for (int i = 0; i < 8; ++i) put_le<int16_t>(b, 352 + 2 * size_t(i), int16_t(i - 3));
    Volume v = read_nifti(b);
    for (int i = 0; i < 8; ++i) CHECK(v.data[size_t(i)] == float(2 * (i - 3) + 1));
}

TEST_CASE("nifti slope zero treated as one") {
    Volume v = sample_volume(4, 1);
    auto b = write_nifti(v);
    put_le<float>(b, 112, 0.0f);
    Volume r = read_nifti(b);
    for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);
}

TEST_CASE("byte-swapped nifti header parses identically") {
    // big-endian variant of the int16 fixture
    std::vector<uint8_t> b(352 + 8 * 2, 0);
    put_be<int32_t>(b, 0, 348);
    put_be<int16_t>(b, 40, 3);
    put_be<int16_t>(b, 42, 2);
    put_be<int16_t>(b, 44, 2);
    put_be<int16_t>(b, 46, 2);
    put_be<int16_t>(b, 70, 4);
    put_be<int16_t>(b, 72, 16);
    put_be<float>(b, 80, 1.5f);
    put_be<float>(b, 84, 1.5f);
    put_be<float>(b, 88, 2.5f);
    put_be<float>(b, 108, 352.0f);
    put_be<float>(b, 112, 1.0f);
    put_be<float>(b, 116, 0.0f);
    std::memcpy(b.data() + 344, "n+1\0", 4);
    for (int i = 0; i < 8; ++i) put_be<int16_t>(b, 352 + 2 * size_t(i), int16_t(100 + i));
    Volume v = read_nifti(b);
    CHECK(v.depth == 2);
    CHECK(v.spacing[2] == 2.5f);
    for (int i = 0; i < 8; ++i) CHECK(v.data[size_t(i)] == float(100 + i));
}

TEST_CASE("nifti error paths") {
    SUBCASE("dim[0] = 9 rejected after swap attempt") {
        Volume v = sample_volume(5, 1);
        auto b = write_nifti(v);
        put_le<int16_t>(b, 40, 9);
        CHECK_THROWS_AS(read_nifti(b), ParseError);
    }
    SUBCASE("bad magic") {
        Volume v = sample_volume(6, 1);
        auto b = write_nifti(v);
        b[344] = 'x';
        CHECK_THROWS_AS(read_nifti(b), ParseError);
    }
    SUBCASE("unsupported datatype") {
        Volume v = sample_volume(7, 1);
        auto b = write_nifti(v);
        put_le<int16_t>(b, 70, 8);  // int32: outside the supported subset
        CHECK_THROWS_AS(read_nifti(b), ParseError);
    }
    SUBCASE("truncated data names the byte offset") {
        Volume v = sample_volume(8, 1);
        auto b = write_nifti(v);
        b.resize(b.size() - 10);
        CHECK_THROWS_WITH_AS(read_nifti(b), doctest::Contains("truncated"), ParseError);
    }
}

TEST_CASE("vvol round-trip with mask flag") {
    Volume v = sample_volume(9);
    Rng rng(10);
    v.mask.assign(size_t(v.voxels()), 0);
    for (auto& m : v.mask) m = rng.bernoulli(0.4) ? 1 : 0;
    auto bytes = write_vvol(v);
    Volume r = read_vvol(bytes);
    REQUIRE(r.channels == v.channels);
    REQUIRE(r.voxels() == v.voxels());
    for (size_t i = 0; i < v.data.size(); ++i) CHECK(r.data[i] == v.data[i]);
    REQUIRE(r.has_mask());
    for (size_t i = 0; i < v.mask.size(); ++i) CHECK(r.mask[i] == v.mask[i]);
    for (int i = 0; i < 3; ++i) CHECK(r.spacing[size_t(i)] == v.spacing[size_t(i)]);

    Volume nomask = sample_volume(11, 1);
    Volume r2 = read_vvol(write_vvol(nomask));
    CHECK(!r2.has_mask());
}

TEST_CASE("vvol corruption reports expected vs actual size") {
    Volume v = sample_volume(12, 1);
    auto bytes = write_vvol(v);
    bytes.resize(bytes.size() - 7);
    CHECK_THROWS_WITH_AS(read_vvol(bytes), doctest::Contains("expected"), ParseError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(read_vvol(bad), ParseError);
}

TEST_CASE("path helpers choose format by extension") {
    Volume v = sample_volume(13);
    v.labels.assign(size_t(v.voxels()), 0);
    v.labels[3] = 1;
    v.labels[17] = 1;
    std::string dir = "/tmp/volshift_io_test";
    std::system(("mkdir -p " + dir).c_str());
    save_volume(v, dir + "/a.vvol");
    save_volume(v, dir + "/a.nii");
    save_labels_nifti(v, dir + "/a_label.nii");
    Volume rv = load_volume(dir + "/a.vvol");
    Volume rn = load_volume(dir + "/a.nii");
    for (size_t i = 0; i < v.data.size(); ++i) {
        CHECK(rv.data[i] == v.data[i]);
        CHECK(rn.data[i] == v.data[i]);
    }
    load_labels_into(rn, dir + "/a_label.nii");
    REQUIRE(rn.has_labels());
    for (size_t i = 0; i < v.labels.size(); ++i) CHECK(rn.labels[i] == v.labels[i]);
}
