#pragma once

#include <Eigen/Core>

namespace edgekt {
namespace detail {

// Thin wrappers over Eigen's single-threaded GEMM. All matrices are
// row-major dense buffers. Accumulating forms are what conv/fc backward
// passes need; the forward form overwrites.

template <class Real>
using MatMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Real>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// C = A(m,k) * B(k,n)
template <class Real>
void gemm_nn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  MatMap<Real>(c, m, n).noalias() = CMatMap<Real>(a, m, k) * CMatMap<Real>(b, k, n);
}

/// C += A(m,k) * B(k,n)
template <class Real>
void gemm_nn_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  MatMap<Real>(c, m, n).noalias() += CMatMap<Real>(a, m, k) * CMatMap<Real>(b, k, n);
}

/// C = A(m,k) * B(n,k)^T
template <class Real>
void gemm_nt(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  MatMap<Real>(c, m, n).noalias() = CMatMap<Real>(a, m, k) * CMatMap<Real>(b, n, k).transpose();
}

/// C += A(m,k) * B(n,k)^T
template <class Real>
void gemm_nt_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  MatMap<Real>(c, m, n).noalias() += CMatMap<Real>(a, m, k) * CMatMap<Real>(b, n, k).transpose();
}

/// C = A(k,m)^T * B(k,n)
template <class Real>
void gemm_tn(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  MatMap<Real>(c, m, n).noalias() = CMatMap<Real>(a, k, m).transpose() * CMatMap<Real>(b, k, n);
}

/// C += A(k,m)^T * B(k,n)
template <class Real>
void gemm_tn_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
  MatMap<Real>(c, m, n).noalias() += CMatMap<Real>(a, k, m).transpose() * CMatMap<Real>(b, k, n);
}

}  // namespace detail
}  // namespace edgekt
