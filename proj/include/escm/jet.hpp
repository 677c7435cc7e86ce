#pragma once

// Forward-mode differentiation scalars.
//
// Jet carries a value, a dense gradient and a packed upper-triangular Hessian over a
// fixed number of seed directions. Every Hessian entry is computed once, so the
// expanded matrix is symmetric bit for bit.
//
// Dual<T> is the classic first-order dual number; nesting it (Dual<Dual<Dual<double>>>)
// yields exact mixed third derivatives along chosen directions.

#include <cmath>
#include <cstddef>
#include <vector>

namespace escm {

class Jet {
 public:
  Jet() = default;
  Jet(std::size_t dims, double value) : v_(value), g_(dims, 0.0), h_(dims * (dims + 1) / 2, 0.0), n_(dims) {}

  static Jet variable(std::size_t dims, std::size_t slot, double value) {
    Jet j(dims, value);
    j.g_[slot] = 1.0;
    return j;
  }

  double value() const { return v_; }
  std::size_t dims() const { return n_; }
  double grad(std::size_t i) const { return g_[i]; }
  double& grad(std::size_t i) { return g_[i]; }
  // Symmetric access; (i, j) and (j, i) read the same storage.
  double hess(std::size_t i, std::size_t j) const { return h_[index(i, j)]; }

  friend Jet operator+(const Jet& a, const Jet& b) {
    Jet r(a.n_, a.v_ + b.v_);
    for (std::size_t i = 0; i < a.g_.size(); ++i) r.g_[i] = a.g_[i] + b.g_[i];
    for (std::size_t i = 0; i < a.h_.size(); ++i) r.h_[i] = a.h_[i] + b.h_[i];
    return r;
  }
  friend Jet operator-(const Jet& a, const Jet& b) {
    Jet r(a.n_, a.v_ - b.v_);
    for (std::size_t i = 0; i < a.g_.size(); ++i) r.g_[i] = a.g_[i] - b.g_[i];
    for (std::size_t i = 0; i < a.h_.size(); ++i) r.h_[i] = a.h_[i] - b.h_[i];
    return r;
  }
  friend Jet operator-(const Jet& a) {
    Jet r(a.n_, -a.v_);
    for (std::size_t i = 0; i < a.g_.size(); ++i) r.g_[i] = -a.g_[i];
    for (std::size_t i = 0; i < a.h_.size(); ++i) r.h_[i] = -a.h_[i];
    return r;
  }
  friend Jet operator*(const Jet& a, const Jet& b) {
    Jet r(a.n_, a.v_ * b.v_);
    for (std::size_t i = 0; i < a.n_; ++i) r.g_[i] = a.v_ * b.g_[i] + b.v_ * a.g_[i];
    std::size_t k = 0;
    for (std::size_t i = 0; i < a.n_; ++i) {
      for (std::size_t j = i; j < a.n_; ++j, ++k) {
        r.h_[k] = a.v_ * b.h_[k] + b.v_ * a.h_[k] + a.g_[i] * b.g_[j] + a.g_[j] * b.g_[i];
      }
    }
    return r;
  }

  // Composition with a scalar function given its value and first two derivatives at v().
  Jet chain(double f0, double f1, double f2) const {
    Jet r(n_, f0);
    for (std::size_t i = 0; i < n_; ++i) r.g_[i] = f1 * g_[i];
    std::size_t k = 0;
    for (std::size_t i = 0; i < n_; ++i) {
      for (std::size_t j = i; j < n_; ++j, ++k) r.h_[k] = f1 * h_[k] + f2 * g_[i] * g_[j];
    }
    return r;
  }

 private:
  std::size_t index(std::size_t i, std::size_t j) const {
    if (i > j) std::swap(i, j);
    return i * n_ - i * (i - 1) / 2 + (j - i);
  }

  double v_ = 0.0;
  std::vector<double> g_;
  std::vector<double> h_;
  std::size_t n_ = 0;
};

template <class T>
struct Dual {
  T v{};
  T d{};
};

template <class T>
Dual<T> operator+(const Dual<T>& a, const Dual<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T>
Dual<T> operator-(const Dual<T>& a, const Dual<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T>
Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <class T>
Dual<T> operator*(const Dual<T>& a, const Dual<T>& b) { return {a.v * b.v, a.v * b.d + a.d * b.v}; }

// Innermost double of a (possibly nested) scalar.
inline double primal(double x) { return x; }
inline double primal(const Jet& x) { return x.value(); }
template <class T>
double primal(const Dual<T>& x) { return primal(x.v); }

}  // namespace escm
