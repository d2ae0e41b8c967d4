#pragma once

#include <fftw3.h>

#include <bit>
#include <complex>
#include <map>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

namespace whilter::fft {

namespace detail {

struct PlanDeleter {
  void operator()(fftw_plan p) const { fftw_destroy_plan(p); }
};
using Plan = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDeleter>;

// Plans are cached per (size, direction) and executed on arbitrary buffers.
inline fftw_plan plan_for(std::size_t n, bool inverse) {
  thread_local std::map<std::pair<std::size_t, bool>, Plan> cache;
  auto& slot = cache[{n, inverse}];
  if (!slot) {
    std::vector<fftw_complex> scratch(n);
    slot.reset(fftw_plan_dft_1d(static_cast<int>(n), scratch.data(), scratch.data(),
                                inverse ? FFTW_BACKWARD : FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED));
    if (!slot) throw std::runtime_error("fft: planning failed");
  }
  return slot.get();
}

}  // namespace detail

/// In-place FFT of a power-of-two length. `inverse` applies the 1/n scaling.
inline void transform(std::vector<std::complex<double>>& a, bool inverse = false) {
  const std::size_t n = a.size();
  if (n == 0 || !std::has_single_bit(n)) throw std::invalid_argument("fft: size must be a power of two");
  auto* buf = reinterpret_cast<fftw_complex*>(a.data());
  fftw_execute_dft(detail::plan_for(n, inverse), buf, buf);
  if (inverse) {
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

inline std::size_t next_pow2(std::size_t n) { return n <= 1 ? 1 : std::bit_ceil(n); }

}  // namespace whilter::fft
