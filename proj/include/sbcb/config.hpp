#pragma once

// The library is built twice: single precision for training and evaluation,
// double precision for finite-difference gradient checks. Each build lives in
// its own inline namespace so both can be linked into one binary.
#if defined(SBCB_DOUBLE_PRECISION)
#define SBCB_PRECISION_NS f64
#else
#define SBCB_PRECISION_NS f32
#endif

#define SBCB_NAMESPACE_BEGIN namespace sbcb { inline namespace SBCB_PRECISION_NS {
#define SBCB_NAMESPACE_END } }

SBCB_NAMESPACE_BEGIN

#if defined(SBCB_DOUBLE_PRECISION)
using real = double;
inline constexpr const char* kRealTypeName = "float64";
#else
using real = float;
inline constexpr const char* kRealTypeName = "float32";
#endif

SBCB_NAMESPACE_END
