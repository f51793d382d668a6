#include "sdkd/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace sdkd::fft {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// twiddle table per (n, direction); reused across calls
const std::vector<cplx>& twiddles(int n, bool inverse) {
    thread_local std::vector<cplx> fwd, inv;
    thread_local int fwd_n = 0, inv_n = 0;
    std::vector<cplx>& tab = inverse ? inv : fwd;
    int& cached = inverse ? inv_n : fwd_n;
    if (cached != n) {
        tab.resize(static_cast<size_t>(n) / 2);
        const double sign = inverse ? 1.0 : -1.0;
        for (int i = 0; i < n / 2; ++i) {
            double a = sign * kTwoPi * i / n;
            tab[static_cast<size_t>(i)] = cplx(std::cos(a), std::sin(a));
        }
        cached = n;
    }
    return tab;
}

}  // namespace

void fft_1d(cplx* data, int n, bool inverse) {
    if (!is_power_of_two(n)) throw std::invalid_argument("fft: length must be a power of two");
    // bit-reversal permutation
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(data[i], data[j]);
    }
    const std::vector<cplx>& tw = twiddles(n, inverse);
    for (int len = 2; len <= n; len <<= 1) {
        const int step = n / len;
        for (int i = 0; i < n; i += len) {
            for (int k = 0; k < len / 2; ++k) {
                cplx u = data[i + k];
                cplx t = data[i + k + len / 2] * tw[static_cast<size_t>(k) * step];
                data[i + k] = u + t;
                data[i + k + len / 2] = u - t;
            }
        }
    }
    if (inverse) {
        const double scale = 1.0 / n;
        for (int i = 0; i < n; ++i) data[i] *= scale;
    }
}

static void fft2_inplace(ComplexGrid& g, bool inverse) {
    if (!is_power_of_two(g.h) || !is_power_of_two(g.w))
        throw std::invalid_argument("fft2: grid dimensions must be powers of two");
    for (int y = 0; y < g.h; ++y) fft_1d(&g.v[static_cast<size_t>(y) * g.w], g.w, inverse);
    std::vector<cplx> col(static_cast<size_t>(g.h));
    for (int x = 0; x < g.w; ++x) {
        for (int y = 0; y < g.h; ++y) col[static_cast<size_t>(y)] = g.at(y, x);
        fft_1d(col.data(), g.h, inverse);
        for (int y = 0; y < g.h; ++y) g.at(y, x) = col[static_cast<size_t>(y)];
    }
}

ComplexGrid fft2(const double* field, int h, int w) {
    ComplexGrid g(h, w);
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) g.v[static_cast<size_t>(i)] = field[i];
    fft2_inplace(g, false);
    return g;
}

void ifft2_real(const ComplexGrid& spec, double* out, double* max_imag) {
    ComplexGrid g = spec;
    fft2_inplace(g, true);
    double mi = 0.0;
    for (int64_t i = 0; i < static_cast<int64_t>(g.h) * g.w; ++i) {
        const cplx& c = g.v[static_cast<size_t>(i)];
        out[i] = c.real();
        mi = std::max(mi, std::abs(c.imag()));
    }
    if (max_imag) *max_imag = mi;
}

ComplexGrid fft2(const Tensor& field) {
    if (field.ndim() != 2) throw std::invalid_argument("fft2: expected a rank-2 tensor");
    return fft2(field.data(), field.dim(0), field.dim(1));
}

Tensor ifft2_real_tensor(const ComplexGrid& spec) {
    Tensor out({spec.h, spec.w});
    ifft2_real(spec, out.data());
    return out;
}

double hermitian_asymmetry(const ComplexGrid& spec) {
    double m = 0.0;
    for (int y = 0; y < spec.h; ++y) {
        for (int x = 0; x < spec.w; ++x) {
            int ym = (spec.h - y) % spec.h;
            int xm = (spec.w - x) % spec.w;
            m = std::max(m, std::abs(spec.at(y, x) - std::conj(spec.at(ym, xm))));
        }
    }
    return m;
}

}  // namespace sdkd::fft
