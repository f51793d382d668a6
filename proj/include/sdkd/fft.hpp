#pragma once

#include <complex>
#include <vector>

#include "sdkd/tensor.hpp"

namespace sdkd::fft {

using cplx = std::complex<double>;

// Row-major H x W complex grid indexed [ky][kx]. Frequencies follow the usual
// DFT layout: index k maps to signed wavenumber k for k <= N/2, k - N above.
struct ComplexGrid {
    int h = 0;
    int w = 0;
    std::vector<cplx> v;

    ComplexGrid() = default;
    ComplexGrid(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_) {}

    cplx& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    const cplx& at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

bool is_power_of_two(int n);

// signed wavenumber for DFT bin index k of an N-point transform
inline int signed_freq(int k, int n) { return k <= n / 2 ? k : k - n; }

// In-place unnormalized transform of a length-n power-of-two vector.
// inverse=true applies the conjugate transform and divides by n, so
// ifft(fft(x)) == x.
void fft_1d(cplx* data, int n, bool inverse);

// Unnormalized forward 2D DFT of a real [H, W] slice (field.data() + offset).
ComplexGrid fft2(const double* field, int h, int w);

// Inverse of fft2 (normalized by H*W); returns the real part and optionally
// reports the largest imaginary residue, which is a Hermitian-symmetry check.
void ifft2_real(const ComplexGrid& spec, double* out, double* max_imag = nullptr);

ComplexGrid fft2(const Tensor& field);         // field must be rank 2
Tensor ifft2_real_tensor(const ComplexGrid& spec);

// max |F(k) - conj(F(-k))| over the grid; 0 for spectra of real fields
double hermitian_asymmetry(const ComplexGrid& spec);

}  // namespace sdkd::fft
