#pragma once

#include <functional>
#include <vector>

#include "sdkd/fft.hpp"
#include "sdkd/tensor.hpp"

namespace sdkd::spectral {

// Radial cutoff in wavenumber units. A Fourier index (kx, ky) with signed
// frequencies is "low" when kx^2 + ky^2 <= cutoff^2; everything else is
// "high". Cutoffs at or above the radial Nyquist floor(min(H,W)/2)*sqrt(2)
// make the whole grid low.
struct SpectralConfig {
    double cutoff = 0.0;
    int h = 0;
    int w = 0;

    SpectralConfig() = default;
    SpectralConfig(double cutoff_, int h_, int w_);

    static double default_cutoff(int h, int w) { return std::min(h, w) / 8; }
    double radial_nyquist() const;
};

struct BandMask {
    int h = 0;
    int w = 0;
    std::vector<bool> low;  // row-major [ky][kx]; high = !low

    static BandMask make(const SpectralConfig& cfg);
    bool is_low(int ky, int kx) const { return low[static_cast<size_t>(ky) * w + kx]; }
    int64_t low_count() const;
};

struct SpectralFeatures {
    Tensor low_component;
    Tensor high_component;
};

// Splits a real field into low/high band components: mask in the Fourier
// domain, inverse transform back to space. Trailing two axes are the grid;
// leading axes map independently.
SpectralFeatures band_split(const Tensor& field, const SpectralConfig& cfg);

// Energy per integer shell: E[k] = sum over bins with round(|omega|) == k of
// |F(omega)|^2 / (H*W)^2, i.e. shell contributions to the spatial mean square.
std::vector<double> radial_energy_spectrum(const Tensor& field);

int n_shells(int h, int w);

struct BandErrors {
    double low = 0.0;
    double high = 0.0;
    double total = 0.0;
};

// Exact split of the squared error by band. The convention is the per-slice
// sum of squared residuals averaged over leading axes, i.e. MSE * (H*W), so
// low + high == total to roundoff by the Plancherel identity.
BandErrors plancherel_decompose_error(const Tensor& pred, const Tensor& target,
                                      const SpectralConfig& cfg);

// OLS slope of log E[k] vs log k over shells k0..k1 inclusive.
double fit_spectrum_slope(const std::vector<double>& energy, int k0, int k1);

// Feeds unit single-shell probes (cosine modes along kx, replicated across
// channels) through a block and reports output/input mean-square energy per
// shell. Covers shells 0..min(H,W)/2.
std::vector<double> frequency_response_probe(
    const std::function<Tensor(const Tensor&)>& block, int channels, const SpectralConfig& cfg);

}  // namespace sdkd::spectral
