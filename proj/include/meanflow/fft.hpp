#pragma once

// Thin RAII wrapper over FFTW's 2-D real-to-complex transforms on an n x n grid.
// Plans are created once per n (FFTW planning is not thread-safe, so creation is
// serialized) and executed through the new-array interface, which is safe to
// call concurrently with per-call buffers.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace meanflow::detail {

class SpectralPlan {
public:
  explicit SpectralPlan(int n) : n_(n) {
    std::vector<double> real(static_cast<std::size_t>(n) * n);
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(n) * (n / 2 + 1));
    auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    forward_ = fftw_plan_dft_r2c_2d(n, n, real.data(), cplx, flags);
    backward_ = fftw_plan_dft_c2r_2d(n, n, cplx, real.data(), flags);
  }
  SpectralPlan(const SpectralPlan&) = delete;
  SpectralPlan& operator=(const SpectralPlan&) = delete;
  ~SpectralPlan() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  [[nodiscard]] int n() const noexcept { return n_; }
  [[nodiscard]] std::size_t spectral_size() const noexcept {
    return static_cast<std::size_t>(n_) * (n_ / 2 + 1);
  }

  /// Unnormalized forward transform. `in` is not modified.
  void forward(std::span<const double> in, std::span<std::complex<double>> out) const {
    // r2c with FFTW_UNALIGNED does not write to its input.
    fftw_execute_dft_r2c(forward_, const_cast<double*>(in.data()),
                         reinterpret_cast<fftw_complex*>(out.data()));
  }

  /// Unnormalized inverse transform; destroys `in`.
  void backward(std::span<std::complex<double>> in, std::span<double> out) const {
    fftw_execute_dft_c2r(backward_, reinterpret_cast<fftw_complex*>(in.data()), out.data());
  }

  static const SpectralPlan& get(int n) {
    static std::mutex mutex;
    static std::map<int, std::unique_ptr<SpectralPlan>> cache;
    std::lock_guard lock(mutex);
    auto& slot = cache[n];
    if (!slot) {
      slot = std::make_unique<SpectralPlan>(n);
    }
    return *slot;
  }

private:
  int n_;
  fftw_plan forward_ = nullptr;
  fftw_plan backward_ = nullptr;
};

}  // namespace meanflow::detail
