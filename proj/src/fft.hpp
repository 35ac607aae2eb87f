#pragma once

#include <complex>
#include <span>

namespace matchcut::detail {

using cplx = std::complex<double>;

/// Real 2-D transforms of one h x w plane through FFTW. Plans are created
/// once per size and shared; executing them is thread-safe.
class Fft2 {
public:
    Fft2(int h, int w);

    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    /// Number of complex coefficients per plane: h * (w / 2 + 1).
    int spectrum_size() const noexcept { return h_ * (w_ / 2 + 1); }

    void forward(std::span<const double> in, std::span<cplx> out) const;
    /// Normalized inverse (divides by h * w). `in` is left untouched.
    void inverse(std::span<const cplx> in, std::span<double> out) const;

private:
    int h_;
    int w_;
    void* forward_plan_;
    void* inverse_plan_;
};

}  // namespace matchcut::detail
