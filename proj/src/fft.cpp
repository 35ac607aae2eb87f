#include "fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <utility>
#include <vector>

#include "matchcut/error.hpp"

namespace matchcut::detail {

namespace {

struct Plans {
    fftw_plan forward;
    fftw_plan inverse;
};

Plans plans_for(int h, int w) {
    static std::mutex mu;
    static std::map<std::pair<int, int>, Plans> cache;
    std::lock_guard lock(mu);
    auto it = cache.find({h, w});
    if (it != cache.end()) return it->second;
    std::vector<double> real(static_cast<std::size_t>(h) * w);
    std::vector<cplx> spec(static_cast<std::size_t>(h) * (w / 2 + 1));
    auto* sp = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    Plans p{fftw_plan_dft_r2c_2d(h, w, real.data(), sp, flags), fftw_plan_dft_c2r_2d(h, w, sp, real.data(), flags)};
    if (!p.forward || !p.inverse) throw Error("FFTW planning failed");
    cache.emplace(std::make_pair(h, w), p);
    return p;
}

}  // namespace

Fft2::Fft2(int h, int w) : h_(h), w_(w) {
    const auto p = plans_for(h, w);
    forward_plan_ = p.forward;
    inverse_plan_ = p.inverse;
}

void Fft2::forward(std::span<const double> in, std::span<cplx> out) const {
    fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), const_cast<double*>(in.data()),
                         reinterpret_cast<fftw_complex*>(out.data()));
}

void Fft2::inverse(std::span<const cplx> in, std::span<double> out) const {
    // c2r overwrites its input.
    thread_local std::vector<cplx> scratch;
    scratch.assign(in.begin(), in.end());
    fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_), reinterpret_cast<fftw_complex*>(scratch.data()),
                         out.data());
    const double scale = 1.0 / (static_cast<double>(h_) * w_);
    for (double& v : out) v *= scale;
}

}  // namespace matchcut::detail
