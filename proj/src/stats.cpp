#include "volshift/stats.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

#include <json.hpp>

#include "volshift/common.hpp"

namespace volshift {

namespace {

double percentile(std::vector<float> values, double q) {
    if (values.empty()) throw Error("percentile of empty set");
    size_t idx = size_t(q * double(values.size() - 1) + 0.5);
    std::nth_element(values.begin(), values.begin() + std::ptrdiff_t(idx), values.end());
    return double(values[idx]);
}

std::vector<float> masked_channel0(const Volume& v, const std::vector<uint8_t>& mask) {
    if (int64_t(mask.size()) != v.voxels())
        throw ShapeError(strf("mask length ", mask.size(), " != voxel count ", v.voxels()));
    std::vector<float> out;
    out.reserve(mask.size() / 2);
    for (int64_t i = 0; i < v.voxels(); ++i)
        if (mask[size_t(i)]) out.push_back(v.data[size_t(i)]);
    return out;
}

}  // namespace

std::vector<uint8_t> compute_head_mask(const Volume& v) {
    v.validate();
    std::vector<float> ch0(v.data.begin(), v.data.begin() + v.voxels());
    double p99 = percentile(ch0, 0.99);
    double threshold = 0.05 * p99;

    std::vector<uint8_t> above(size_t(v.voxels()), 0);
    int64_t n_above = 0;
    for (int64_t i = 0; i < v.voxels(); ++i)
        if (double(ch0[size_t(i)]) > threshold) {
            above[size_t(i)] = 1;
            ++n_above;
        }
    if (n_above == 0)
        throw Error("head mask is empty (no voxel above 5% of the 99th percentile); "
                    "supply an explicit mask file instead");

    // largest 6-connected component
    const int64_t d = v.depth, h = v.height, w = v.width;
    std::vector<int32_t> comp(size_t(v.voxels()), -1);
    int32_t n_comp = 0;
    int64_t best_size = 0;
    int32_t best_comp = -1;
    std::deque<int64_t> queue;
    for (int64_t start = 0; start < v.voxels(); ++start) {
        if (!above[size_t(start)] || comp[size_t(start)] >= 0) continue;
        int32_t id = n_comp++;
        int64_t size = 0;
        queue.push_back(start);
        comp[size_t(start)] = id;
        while (!queue.empty()) {
            int64_t cur = queue.front();
            queue.pop_front();
            ++size;
            int64_t z = cur / (h * w), y = (cur / w) % h, x = cur % w;
            const int64_t dz[6] = {-1, 1, 0, 0, 0, 0};
            const int64_t dy[6] = {0, 0, -1, 1, 0, 0};
            const int64_t dx[6] = {0, 0, 0, 0, -1, 1};
            for (int k = 0; k < 6; ++k) {
                int64_t nz = z + dz[k], ny = y + dy[k], nx = x + dx[k];
                if (nz < 0 || nz >= d || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                int64_t ni = (nz * h + ny) * w + nx;
                if (above[size_t(ni)] && comp[size_t(ni)] < 0) {
                    comp[size_t(ni)] = id;
                    queue.push_back(ni);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_comp = id;
        }
    }
    std::vector<uint8_t> mask(size_t(v.voxels()), 0);
    for (int64_t i = 0; i < v.voxels(); ++i) mask[size_t(i)] = comp[size_t(i)] == best_comp ? 1 : 0;
    return mask;
}

void attach_head_mask(Volume& v) {
    if (!v.has_mask()) v.mask = compute_head_mask(v);
}

Volume zscore_normalize(const Volume& v, const std::vector<uint8_t>& mask) {
    if (int64_t(mask.size()) != v.voxels())
        throw ShapeError(strf("zscore: mask length ", mask.size(), " != voxel count ", v.voxels()));
    int64_t n_mask = 0;
    for (uint8_t m : mask) n_mask += m ? 1 : 0;
    if (n_mask == 0) throw Error("zscore: empty mask");
    Volume out = v;
    for (int64_t c = 0; c < v.channels; ++c) {
        const float* ch = v.data.data() + c * v.voxels();
        double mean = 0;
        for (int64_t i = 0; i < v.voxels(); ++i)
            if (mask[size_t(i)]) mean += double(ch[i]);
        mean /= double(n_mask);
        double var = 0;
        for (int64_t i = 0; i < v.voxels(); ++i)
            if (mask[size_t(i)]) {
                double e = double(ch[i]) - mean;
                var += e * e;
            }
        var /= double(n_mask);
        if (var == 0) throw Error(strf("zscore: zero variance within mask on channel ", c));
        double inv = 1.0 / std::sqrt(var);
        float* och = out.data.data() + c * v.voxels();
        for (int64_t i = 0; i < v.voxels(); ++i) och[i] = float((double(ch[i]) - mean) * inv);
    }
    return out;
}

HistogramDist intensity_histogram(const Volume& v, const std::vector<uint8_t>& mask, int bins, double lo,
                                  double hi) {
    if (bins < 2) throw ConfigError(strf("histogram: bins must be >= 2, got ", bins));
    if (!(lo < hi)) throw ConfigError(strf("histogram: range [", lo, ",", hi, ") empty"));
    auto vals = masked_channel0(v, mask);
    if (vals.empty()) throw Error("histogram: empty mask");
    HistogramDist hd;
    hd.bins = bins;
    hd.lo = lo;
    hd.hi = hi;
    hd.source_voxels = int64_t(vals.size());
    std::vector<int64_t> counts(size_t(bins), 0);
    double scale = double(bins) / (hi - lo);
    for (float f : vals) {
        double x = std::clamp(double(f), lo, hi);
        int b = std::min(bins - 1, int((x - lo) * scale));
        counts[size_t(b)]++;
    }
    hd.p.resize(size_t(bins));
    for (int b = 0; b < bins; ++b) hd.p[size_t(b)] = double(counts[size_t(b)]) / double(vals.size());
    return hd;
}

double js_divergence(const HistogramDist& p, const HistogramDist& q) {
    if (p.bins != q.bins || p.lo != q.lo || p.hi != q.hi)
        throw ShapeError(strf("js: binning mismatch (", p.bins, " over [", p.lo, ",", p.hi, "]) vs (", q.bins,
                              " over [", q.lo, ",", q.hi, "])"));
    // one commutative term per bin keeps JS(P,Q) == JS(Q,P) bit-exact
    double acc = 0;
    for (int b = 0; b < p.bins; ++b) {
        double pi = p.p[size_t(b)], qi = q.p[size_t(b)];
        double m = 0.5 * (pi + qi);
        double tp = pi > 0 ? 0.5 * pi * std::log2(pi / m) : 0.0;
        double tq = qi > 0 ? 0.5 * qi * std::log2(qi / m) : 0.0;
        acc += tp + tq;
    }
    return acc;
}

namespace {

struct MaskedValues {
    std::vector<float> vals;
    double lo = 0, hi = 0;
};

MaskedValues extract(const Volume& v) {
    MaskedValues mv;
    std::vector<uint8_t> mask = v.has_mask() ? v.mask : compute_head_mask(v);
    mv.vals = masked_channel0(v, mask);
    if (mv.vals.empty()) throw Error("delta_js: empty mask");
    auto [mn, mx] = std::minmax_element(mv.vals.begin(), mv.vals.end());
    mv.lo = double(*mn);
    mv.hi = double(*mx);
    return mv;
}

HistogramDist hist_of(const MaskedValues& mv, int bins, double lo, double hi) {
    HistogramDist hd;
    hd.bins = bins;
    hd.lo = lo;
    hd.hi = hi;
    hd.source_voxels = int64_t(mv.vals.size());
    std::vector<int64_t> counts(size_t(bins), 0);
    double scale = double(bins) / (hi - lo);
    for (float f : mv.vals) {
        double x = std::clamp(double(f), lo, hi);
        counts[size_t(std::min(bins - 1, int((x - lo) * scale)))]++;
    }
    hd.p.resize(size_t(bins));
    for (int b = 0; b < bins; ++b) hd.p[size_t(b)] = double(counts[size_t(b)]) / double(mv.vals.size());
    return hd;
}

double pair_js(const MaskedValues& a, const MaskedValues& b, int bins) {
    double lo = std::min(a.lo, b.lo);
    double hi = std::max(a.hi, b.hi);
    if (!(lo < hi)) hi = lo + 1.0;  // both volumes constant
    return js_divergence(hist_of(a, bins, lo, hi), hist_of(b, bins, lo, hi));
}

}  // namespace

DivergenceReport delta_js(const DomainSet& a, const DomainSet& b, DivergenceMode mode, int bins) {
    DivergenceReport rep;
    rep.mode = mode;
    rep.domain_a = a.name;
    if (mode == DivergenceMode::Intra) {
        if (a.size() < 2) throw ConfigError(strf("delta_js intra: domain '", a.name, "' needs >= 2 volumes"));
        rep.domain_b = a.name;
    } else {
        if (a.empty() || b.empty()) throw ConfigError("delta_js: empty domain");
        rep.domain_b = b.name;
    }
    const DomainSet& bb = mode == DivergenceMode::Intra ? a : b;

    std::vector<MaskedValues> va(a.size());
    for (size_t i = 0; i < a.size(); ++i) va[i] = extract(a.volumes[i]);
    std::vector<MaskedValues> vb;
    if (mode == DivergenceMode::Intra) {
        vb = va;
    } else {
        vb.resize(bb.size());
        for (size_t j = 0; j < bb.size(); ++j) vb[j] = extract(bb.volumes[j]);
    }

    rep.rows = va.size();
    rep.cols = vb.size();
    rep.matrix.assign(rep.rows * rep.cols, 0.0);
    parallel_for(int64_t(rep.rows * rep.cols), [&](int64_t lo, int64_t hi) {
        for (int64_t u = lo; u < hi; ++u) {
            size_t i = size_t(u) / rep.cols, j = size_t(u) % rep.cols;
            if (mode == DivergenceMode::Intra && i == j) continue;
            rep.matrix[size_t(u)] = pair_js(va[i], vb[j], bins);
        }
    });
    double total = 0;
    int64_t pairs = 0;
    for (size_t i = 0; i < rep.rows; ++i)
        for (size_t j = 0; j < rep.cols; ++j) {
            if (mode == DivergenceMode::Intra && i == j) continue;
            total += rep.at(i, j);
            ++pairs;
        }
    rep.aggregate = total / double(pairs);
    return rep;
}

size_t nearest_reference(const Volume& y, const DomainSet& x_set, int bins) {
    if (x_set.empty()) throw ConfigError("nearest_reference: empty reference domain");
    MaskedValues my = extract(y);
    size_t best = 0;
    double best_js = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < x_set.size(); ++i) {
        double js = pair_js(my, extract(x_set.volumes[i]), bins);
        if (js < best_js) {
            best_js = js;
            best = i;
        }
    }
    return best;
}

namespace {

// inverse CDF at `m` evenly spaced quantiles, from a `levels`-bin histogram
std::vector<double> quantile_anchors(const std::vector<float>& vals, int levels, int match_points) {
    auto [mn_it, mx_it] = std::minmax_element(vals.begin(), vals.end());
    double lo = double(*mn_it), hi = double(*mx_it);
    if (!(lo < hi)) return std::vector<double>(size_t(match_points), lo);
    std::vector<double> cdf(static_cast<size_t>(levels), 0.0);
    double scale = double(levels) / (hi - lo);
    for (float f : vals) cdf[size_t(std::min(levels - 1, int((double(f) - lo) * scale)))] += 1.0;
    double run = 0;
    for (auto& c : cdf) {
        run += c;
        c = run / double(vals.size());
    }
    double bin_w = (hi - lo) / double(levels);
    std::vector<double> anchors(static_cast<size_t>(match_points));
    for (int k = 0; k < match_points; ++k) {
        double q = double(k) / double(match_points - 1);
        if (q <= 0) {
            anchors[size_t(k)] = lo;
            continue;
        }
        if (q >= 1) {
            anchors[size_t(k)] = hi;
            continue;
        }
        auto it = std::lower_bound(cdf.begin(), cdf.end(), q);
        size_t b = size_t(it - cdf.begin());
        double c_hi = cdf[b];
        double c_lo = b > 0 ? cdf[b - 1] : 0.0;
        double frac = c_hi > c_lo ? (q - c_lo) / (c_hi - c_lo) : 0.5;
        anchors[size_t(k)] = lo + (double(b) + frac) * bin_w;
    }
    for (size_t k = 1; k < anchors.size(); ++k) anchors[k] = std::max(anchors[k], anchors[k - 1]);
    return anchors;
}

}  // namespace

Volume histogram_match(const Volume& y, const Volume& x_ref, int levels, int match_points) {
    if (match_points < 2) throw ConfigError(strf("histogram_match: match_points must be >= 2"));
    if (levels < match_points)
        throw ConfigError(strf("histogram_match: levels ", levels, " < match_points ", match_points));
    std::vector<uint8_t> ymask = y.has_mask() ? y.mask : compute_head_mask(y);
    std::vector<uint8_t> xmask = x_ref.has_mask() ? x_ref.mask : compute_head_mask(x_ref);

    Volume out = y;
    out.mask = ymask;
    const size_t m = size_t(match_points);
    for (int64_t c = 0; c < y.channels; ++c) {
        std::vector<float> yvals, xvals;
        for (int64_t i = 0; i < y.voxels(); ++i)
            if (ymask[size_t(i)]) yvals.push_back(y.data[size_t(c * y.voxels() + i)]);
        for (int64_t i = 0; i < x_ref.voxels(); ++i)
            if (xmask[size_t(i)]) xvals.push_back(x_ref.data[size_t(c * x_ref.voxels() + i)]);
        if (yvals.empty() || xvals.empty()) throw Error("histogram_match: empty mask");

        auto sq = quantile_anchors(yvals, levels, match_points);
        auto rq = quantile_anchors(xvals, levels, match_points);

        auto remap = [&](double v) {
            if (v <= sq[0]) return rq[0];
            if (v >= sq[m - 1]) return rq[m - 1];
            size_t k = 0;
            while (k + 2 < m && v > sq[k + 1]) ++k;
            double w = sq[k + 1] > sq[k] ? (v - sq[k]) / (sq[k + 1] - sq[k]) : 0.0;
            return rq[k] + w * (rq[k + 1] - rq[k]);
        };
        float* och = out.data.data() + c * y.voxels();
        for (int64_t i = 0; i < y.voxels(); ++i)
            if (ymask[size_t(i)]) och[i] = float(remap(double(och[i])));
    }
    return out;
}

std::string divergence_report_json(const DivergenceReport& r) {
    nlohmann::json j;
    j["domain_a"] = r.domain_a;
    j["domain_b"] = r.domain_b;
    j["mode"] = r.mode == DivergenceMode::Inter ? "inter" : "intra";
    j["delta_js"] = r.aggregate;
    nlohmann::json rows = nlohmann::json::array();
    for (size_t i = 0; i < r.rows; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (size_t jx = 0; jx < r.cols; ++jx) row.push_back(r.at(i, jx));
        rows.push_back(row);
    }
    j["matrix"] = rows;
    return j.dump(2);
}

std::string divergence_report_csv(const DivergenceReport& r) {
    std::ostringstream os;
    os << "img_a,img_b,js\n";
    for (size_t i = 0; i < r.rows; ++i)
        for (size_t j = 0; j < r.cols; ++j) {
            if (r.mode == DivergenceMode::Intra && i == j) continue;
            os << i << "," << j << "," << r.at(i, j) << "\n";
        }
    return os.str();
}

}  // namespace volshift
