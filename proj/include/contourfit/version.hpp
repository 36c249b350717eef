#ifndef CONTOURFIT_VERSION_HPP
#define CONTOURFIT_VERSION_HPP

namespace contourfit {

inline constexpr const char* kVersion = "0.1.0";

} // namespace contourfit

#endif
