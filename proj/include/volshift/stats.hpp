#pragma once

// Domain-shift measurement: head masks, z-score normalization, masked
// intensity histograms, base-2 Jensen-Shannon divergence, pairwise
// divergence aggregates, and the histogram-matching baseline.

#include <string>
#include <vector>

#include "volshift/volume.hpp"

namespace volshift {

struct HistogramDist {
    int bins = 128;
    double lo = 0.0, hi = 1.0;
    std::vector<double> p;  // probabilities, sum exactly normalized
    int64_t source_voxels = 0;
};

enum class DivergenceMode { Inter, Intra };

struct DivergenceReport {
    std::string domain_a, domain_b;
    DivergenceMode mode = DivergenceMode::Inter;
    size_t rows = 0, cols = 0;
    std::vector<double> matrix;  // row-major pairwise JS
    double aggregate = 0.0;

    double at(size_t i, size_t j) const { return matrix[i * cols + j]; }
};

// Threshold at 5% of the channel-0 99th percentile, then keep the largest
// 6-connected component. An already attached mask always wins.
std::vector<uint8_t> compute_head_mask(const Volume& v);
void attach_head_mask(Volume& v);  // no-op when a mask is present

Volume zscore_normalize(const Volume& v, const std::vector<uint8_t>& mask);

// Channel-0 histogram over mask voxels, values clipped into [lo, hi].
HistogramDist intensity_histogram(const Volume& v, const std::vector<uint8_t>& mask, int bins, double lo,
                                  double hi);

// Base-2, in [0,1]; requires identical binning.
double js_divergence(const HistogramDist& p, const HistogramDist& q);

// Pairwise JS between masked channel-0 histograms; each pair is binned over
// the pooled min/max of the two images. Intra mode ignores B and excludes
// self-pairs.
DivergenceReport delta_js(const DomainSet& a, const DomainSet& b, DivergenceMode mode, int bins = 128);

// Index of the x in X with smallest JS(hist(y), hist(x)); ties break low.
size_t nearest_reference(const Volume& y, const DomainSet& x_set, int bins = 128);

// Piecewise-linear quantile mapping of y's masked intensities onto x_ref's,
// per channel; background voxels pass through unchanged.
Volume histogram_match(const Volume& y, const Volume& x_ref, int levels = 1024, int match_points = 7);

std::string divergence_report_json(const DivergenceReport& r);
std::string divergence_report_csv(const DivergenceReport& r);

}  // namespace volshift
