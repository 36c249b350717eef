#ifndef CONTOURFIT_ACCUM_HPP
#define CONTOURFIT_ACCUM_HPP

#include <cmath>
#include <cstdint>

namespace contourfit {

/// Order-independent accumulator for per-pixel reductions.
///
/// Terms are quantized at 2^-44 and summed in a 128-bit integer, so the
/// result does not depend on traversal order. Image-space sums must be
/// invariant under integer translations of the scene (the same terms
/// arrive in a different order); ordinary floating-point accumulation
/// breaks that bitwise and lets optimizer trajectories drift.
class ExactAccumulator {
public:
    void add(double term) { acc_ += static_cast<__int128>(std::llround(term * kScale)); }

    double value() const { return static_cast<double>(acc_) * kInvScale; }

private:
    static constexpr double kScale = 17592186044416.0;      // 2^44
    static constexpr double kInvScale = 1.0 / 17592186044416.0;
    __int128 acc_ = 0;
};

} // namespace contourfit

#endif
