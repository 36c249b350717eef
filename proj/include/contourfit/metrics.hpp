#ifndef CONTOURFIT_METRICS_HPP
#define CONTOURFIT_METRICS_HPP

#include <algorithm>
#include <cstddef>
#include <tuple>
#include <vector>

#include "contourfit/errors.hpp"
#include "contourfit/grid.hpp"

namespace contourfit {

/// Intersection over union; 1 when both masks are empty.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
    if (!a.same_dims(b)) throw DimensionError("iou: mask dimensions differ");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool pa = a.data[i] != 0, pb = b.data[i] != 0;
        inter += pa && pb;
        uni += pa || pb;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

/// IoU restricted to the band of pixels within eps_d (Euclidean, pixel
/// centers) of the reference contour. The band is |phi_ref| <= eps_d with
/// phi_ref the exact signed distance of `ref`; a uniform reference has no
/// contour and is rejected.
inline double weighted_iou(const BinaryMask& pred, const BinaryMask& ref, double eps_d) {
    if (!pred.same_dims(ref)) throw DimensionError("weighted_iou: mask dimensions differ");
    if (eps_d <= 0.0) throw ArgumentError("weighted_iou: eps_d must be positive");
    const std::size_t fg = ref.area();
    if (fg == 0 || fg == ref.size())
        throw ArgumentError("weighted_iou: reference mask has no contour");

    const double big = static_cast<double>(ref.width + ref.height) + eps_d + 1.0;
    const LevelSet phi = signed_distance(ref, big);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (std::abs(phi.data[i]) > eps_d) continue;
        const bool pa = pred.data[i] != 0, pb = ref.data[i] != 0;
        inter += pa && pb;
        uni += pa || pb;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

struct MatchReport {
    double precision = 0.0;
    double recall = 0.0;
    double iou_min = 0.0;
    // (pred index, gt index, iou) for every matched pair
    std::vector<std::tuple<int, int, double>> matches;
};

/// Greedy one-to-one matching in descending IoU order; pairs with IoU
/// below iou_min stay unmatched. Ties are broken by lower (pred, gt)
/// index pair. precision = matched/|preds|, recall = matched/|gts|; an
/// empty side yields 0 unless both sides are empty (then 1).
inline MatchReport match_instances(const std::vector<BinaryMask>& preds,
                                   const std::vector<BinaryMask>& gts, double iou_min) {
    MatchReport report;
    report.iou_min = iou_min;
    if (preds.empty() && gts.empty()) {
        report.precision = report.recall = 1.0;
        return report;
    }

    struct Cand {
        double v;
        int p, g;
    };
    std::vector<Cand> cands;
    cands.reserve(preds.size() * gts.size());
    for (int p = 0; p < static_cast<int>(preds.size()); ++p)
        for (int g = 0; g < static_cast<int>(gts.size()); ++g) {
            const double v = iou(preds[p], gts[g]);
            if (v >= iou_min) cands.push_back({v, p, g});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.v != b.v) return a.v > b.v;
        if (a.p != b.p) return a.p < b.p;
        return a.g < b.g;
    });

    std::vector<char> p_used(preds.size(), 0), g_used(gts.size(), 0);
    for (const Cand& c : cands) {
        if (p_used[c.p] || g_used[c.g]) continue;
        p_used[c.p] = g_used[c.g] = 1;
        report.matches.emplace_back(c.p, c.g, c.v);
    }
    const double matched = static_cast<double>(report.matches.size());
    report.precision = preds.empty() ? 0.0 : matched / static_cast<double>(preds.size());
    report.recall = gts.empty() ? 0.0 : matched / static_cast<double>(gts.size());
    return report;
}

} // namespace contourfit

#endif
