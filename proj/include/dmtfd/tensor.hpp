#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dmtfd {

// Training re-allocates many >128 KiB activation buffers per step; with the
// default glibc thresholds those round-trip through mmap/munmap and fault in
// fresh pages every batch. Raising the thresholds lets the allocator recycle
// them. Idempotent; a no-op off glibc.
inline void tune_allocator_for_training() {
#if defined(__GLIBC__)
  static const bool done = [] {
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    return true;
  }();
  (void)done;
#endif
}

template <class Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;

template <class Real>
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

using MatX = Mat<double>;

template <class Real>
bool all_finite(const Mat<Real>& m) {
  return m.allFinite();
}

template <class Real>
Mat<Real> cast_matrix(const MatX& m) {
  return m.template cast<Real>();
}

}  // namespace dmtfd
