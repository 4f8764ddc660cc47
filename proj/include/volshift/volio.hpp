#pragma once

// Volume file I/O: a minimal uncompressed NIfTI-1 subset and the internal
// .vvol container. Both round-trip bit-exactly for float32 volumes.

#include <string>
#include <vector>

#include "volshift/volume.hpp"

namespace volshift {

// NIfTI-1, single-file .nii: 348-byte header, magic "n+1"; dtypes uint8,
// int16, float32, float64; dim[0] in {3,4}; scl_slope/scl_inter applied
// (slope 0 treated as 1); byte-swapped headers detected via dim[0].
Volume read_nifti(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> write_nifti(const Volume& v);

// uint8 label/mask variant, values {0,1}
std::vector<uint8_t> write_nifti_labels(const Volume& v);

Volume read_vvol(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> write_vvol(const Volume& v);

// Path helpers; format chosen by extension (.nii / .vvol).
Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);
void save_labels_nifti(const Volume& v, const std::string& path);
// Reads a uint8/int NIfTI into the labels field of `target`.
void load_labels_into(Volume& target, const std::string& path);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace volshift
