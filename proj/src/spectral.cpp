#include "sdkd/spectral.hpp"

#include <cmath>
#include <stdexcept>

namespace sdkd::spectral {

using fft::ComplexGrid;
using fft::signed_freq;

SpectralConfig::SpectralConfig(double cutoff_, int h_, int w_) : cutoff(cutoff_), h(h_), w(w_) {
    if (cutoff < 0.0) throw std::invalid_argument("spectral: cutoff must be >= 0");
    if (!fft::is_power_of_two(h) || !fft::is_power_of_two(w))
        throw std::invalid_argument("spectral: grid dimensions must be powers of two");
}

double SpectralConfig::radial_nyquist() const {
    return (std::min(h, w) / 2) * std::sqrt(2.0);
}

BandMask BandMask::make(const SpectralConfig& cfg) {
    BandMask m;
    m.h = cfg.h;
    m.w = cfg.w;
    m.low.assign(static_cast<size_t>(cfg.h) * cfg.w, false);
    const double c2 = cfg.cutoff * cfg.cutoff;
    for (int y = 0; y < cfg.h; ++y) {
        const double ky = signed_freq(y, cfg.h);
        for (int x = 0; x < cfg.w; ++x) {
            const double kx = signed_freq(x, cfg.w);
            m.low[static_cast<size_t>(y) * cfg.w + x] = (kx * kx + ky * ky <= c2);
        }
    }
    return m;
}

int64_t BandMask::low_count() const {
    int64_t n = 0;
    for (bool b : low) n += b ? 1 : 0;
    return n;
}

namespace {

void check_grid(const Tensor& field, const SpectralConfig& cfg, const char* op) {
    if (field.ndim() < 2) throw std::invalid_argument(std::string(op) + ": need at least 2 axes");
    const int h = field.dim(field.ndim() - 2);
    const int w = field.dim(field.ndim() - 1);
    if (h != cfg.h || w != cfg.w)
        throw std::invalid_argument(std::string(op) + ": grid/config mismatch");
}

int64_t leading_count(const Tensor& field) {
    const int h = field.dim(field.ndim() - 2);
    const int w = field.dim(field.ndim() - 1);
    return field.numel() / (static_cast<int64_t>(h) * w);
}

}  // namespace

SpectralFeatures band_split(const Tensor& field, const SpectralConfig& cfg) {
    check_grid(field, cfg, "band_split");
    const int h = cfg.h, w = cfg.w;
    const int64_t slice = static_cast<int64_t>(h) * w;
    const int64_t n = leading_count(field);
    const BandMask mask = BandMask::make(cfg);

    SpectralFeatures out;
    out.low_component = Tensor::zeros_like(field);
    out.high_component = Tensor::zeros_like(field);
    for (int64_t s = 0; s < n; ++s) {
        ComplexGrid spec = fft::fft2(field.data() + s * slice, h, w);
        ComplexGrid lo(h, w), hi(h, w);
        for (int64_t i = 0; i < slice; ++i) {
            if (mask.low[static_cast<size_t>(i)])
                lo.v[static_cast<size_t>(i)] = spec.v[static_cast<size_t>(i)];
            else
                hi.v[static_cast<size_t>(i)] = spec.v[static_cast<size_t>(i)];
        }
        fft::ifft2_real(lo, out.low_component.data() + s * slice);
        fft::ifft2_real(hi, out.high_component.data() + s * slice);
    }
    return out;
}

int n_shells(int h, int w) {
    return static_cast<int>(std::llround(std::hypot(h / 2, w / 2))) + 1;
}

std::vector<double> radial_energy_spectrum(const Tensor& field) {
    if (field.ndim() != 2) throw std::invalid_argument("radial_energy_spectrum: expected [H, W]");
    const int h = field.dim(0), w = field.dim(1);
    ComplexGrid spec = fft::fft2(field);
    std::vector<double> energy(static_cast<size_t>(n_shells(h, w)), 0.0);
    const double norm = 1.0 / (static_cast<double>(h) * w * h * w);
    for (int y = 0; y < h; ++y) {
        const int ky = signed_freq(y, h);
        for (int x = 0; x < w; ++x) {
            const int kx = signed_freq(x, w);
            const int shell = static_cast<int>(std::llround(std::hypot(kx, ky)));
            energy[static_cast<size_t>(shell)] += std::norm(spec.at(y, x)) * norm;
        }
    }
    return energy;
}

BandErrors plancherel_decompose_error(const Tensor& pred, const Tensor& target,
                                      const SpectralConfig& cfg) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("plancherel_decompose_error: shape mismatch " +
                                    pred.shape_str() + " vs " + target.shape_str());
    check_grid(pred, cfg, "plancherel_decompose_error");
    const int h = cfg.h, w = cfg.w;
    const int64_t slice = static_cast<int64_t>(h) * w;
    const int64_t n = leading_count(pred);
    const BandMask mask = BandMask::make(cfg);

    BandErrors err;
    std::vector<double> residual(static_cast<size_t>(slice));
    const double spec_norm = 1.0 / (static_cast<double>(h) * w);
    for (int64_t s = 0; s < n; ++s) {
        double total = 0.0;
        for (int64_t i = 0; i < slice; ++i) {
            const double r = pred[s * slice + i] - target[s * slice + i];
            residual[static_cast<size_t>(i)] = r;
            total += r * r;
        }
        ComplexGrid spec = fft::fft2(residual.data(), h, w);
        double lo = 0.0, hi = 0.0;
        for (int64_t i = 0; i < slice; ++i) {
            const double e = std::norm(spec.v[static_cast<size_t>(i)]) * spec_norm;
            if (mask.low[static_cast<size_t>(i)])
                lo += e;
            else
                hi += e;
        }
        err.total += total;
        err.low += lo;
        err.high += hi;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    err.total *= inv_n;
    err.low *= inv_n;
    err.high *= inv_n;
    return err;
}

double fit_spectrum_slope(const std::vector<double>& energy, int k0, int k1) {
    if (k0 < 1 || k1 < k0 || k1 >= static_cast<int>(energy.size()))
        throw std::invalid_argument("fit_spectrum_slope: bad shell range");
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    const int n = k1 - k0 + 1;
    for (int k = k0; k <= k1; ++k) {
        const double e = energy[static_cast<size_t>(k)];
        if (e <= 0.0)
            throw std::domain_error("fit_spectrum_slope: zero energy in shell " + std::to_string(k));
        const double x = std::log(static_cast<double>(k));
        const double y = std::log(e);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<double> frequency_response_probe(
    const std::function<Tensor(const Tensor&)>& block, int channels, const SpectralConfig& cfg) {
    const int h = cfg.h, w = cfg.w;
    const int k_max = std::min(h, w) / 2;
    std::vector<double> gain(static_cast<size_t>(k_max) + 1, 0.0);
    for (int k = 0; k <= k_max; ++k) {
        Tensor probe({1, channels, h, w});
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    probe.at(0, c, y, x) =
                        k == 0 ? 1.0 : std::cos(6.283185307179586 * k * x / w);
        const double in_ms = sum_sq(probe) / static_cast<double>(probe.numel());
        Tensor out = block(probe);
        const double out_ms = sum_sq(out) / static_cast<double>(out.numel());
        gain[static_cast<size_t>(k)] = out_ms / in_ms;
    }
    return gain;
}

}  // namespace sdkd::spectral
