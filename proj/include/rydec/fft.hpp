#pragma once

#include <complex>
#include <fftw3.h>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace rydec {

/// Forward DFT, X_j = sum_k x_k e^{-2 pi i j k / N}. Plan creation is
/// serialized; FFTW_ESTIMATE keeps results reproducible run to run.
class Fft {
public:
    explicit Fft(int n) : n_(n) {
        if (n < 2) throw std::invalid_argument("Fft: n < 2");
        static std::mutex plan_mutex;
        std::lock_guard<std::mutex> lock(plan_mutex);
        in_ = fftw_alloc_complex(n);
        out_ = fftw_alloc_complex(n);
        plan_ = fftw_plan_dft_1d(n, in_, out_, FFTW_FORWARD, FFTW_ESTIMATE);
        if (!plan_) throw std::runtime_error("Fft: planning failed");
    }
    Fft(const Fft&) = delete;
    Fft& operator=(const Fft&) = delete;
    ~Fft() {
        fftw_destroy_plan(plan_);
        fftw_free(in_);
        fftw_free(out_);
    }

    int size() const { return n_; }

    /// in may be shorter than n; the rest is zero padding.
    void forward(const std::vector<std::complex<double>>& in,
                 std::vector<std::complex<double>>& out) {
        if (static_cast<int>(in.size()) > n_) throw std::invalid_argument("Fft: input too long");
        for (int i = 0; i < n_; ++i) {
            const std::complex<double> v = i < static_cast<int>(in.size()) ? in[i] : 0.0;
            in_[i][0] = v.real();
            in_[i][1] = v.imag();
        }
        fftw_execute(plan_);
        out.resize(n_);
        for (int i = 0; i < n_; ++i) out[i] = {out_[i][0], out_[i][1]};
    }

private:
    int n_;
    fftw_plan plan_;
    fftw_complex* in_;
    fftw_complex* out_;
};

} // namespace rydec
