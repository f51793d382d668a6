#include "sdkd/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "sdkd/train.hpp"

namespace sdkd::eval {

using data::Dataset;
using data::Split;
using nn::Model;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double mse(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse");
    double s = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const double r = pred[i] - target[i];
        s += r * r;
    }
    return s / static_cast<double>(pred.numel());
}

double mae(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mae");
    double s = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) s += std::abs(pred[i] - target[i]);
    return s / static_cast<double>(pred.numel());
}

double psnr(const Tensor& pred, const Tensor& target, double data_range) {
    if (data_range <= 0.0) throw std::invalid_argument("psnr: data_range must be > 0");
    const double m = mse(pred, target);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / m);
}

double ssim(const Tensor& pred, const Tensor& target, const SsimConfig& cfg) {
    require_same_shape(pred, target, "ssim");
    if (pred.ndim() < 2) throw std::invalid_argument("ssim: need trailing [H, W] axes");
    const int h = pred.dim(pred.ndim() - 2), w = pred.dim(pred.ndim() - 1);
    const int win = cfg.window;
    if (win % 2 == 0 || win > std::min(h, w))
        throw std::invalid_argument("ssim: window must be odd and <= min(H, W)");
    const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
    const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
    const int64_t slice = static_cast<int64_t>(h) * w;
    const int64_t n_slices = pred.numel() / slice;
    const double inv_n = 1.0 / static_cast<double>(win * win);

    double total = 0.0;
    int64_t windows = 0;
    for (int64_t s = 0; s < n_slices; ++s) {
        const double* a = pred.data() + s * slice;
        const double* b = target.data() + s * slice;
        for (int y0 = 0; y0 + win <= h; ++y0)
            for (int x0 = 0; x0 + win <= w; ++x0) {
                double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
                for (int y = y0; y < y0 + win; ++y)
                    for (int x = x0; x < x0 + win; ++x) {
                        const double va = a[static_cast<int64_t>(y) * w + x];
                        const double vb = b[static_cast<int64_t>(y) * w + x];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                const double mu_a = sa * inv_n, mu_b = sb * inv_n;
                const double var_a = saa * inv_n - mu_a * mu_a;
                const double var_b = sbb * inv_n - mu_b * mu_b;
                const double cov = sab * inv_n - mu_a * mu_b;
                total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                         ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                ++windows;
            }
    }
    return total / static_cast<double>(windows);
}

// ===========================================================================
// Split-level evaluation
// ===========================================================================

namespace {

// runs the model over a split and hands (pred, target) batches to a sink
template <typename Sink>
void for_each_batch(const Model& model, const Dataset& ds, Split split, int batch_size,
                    Sink&& sink) {
    const auto tasks = ds.tasks(split);
    if (tasks.empty()) throw std::invalid_argument("eval: empty split");
    std::vector<int> order(tasks.size());
    for (size_t i = 0; i < tasks.size(); ++i) order[i] = static_cast<int>(i);
    for (size_t first = 0; first < tasks.size(); first += static_cast<size_t>(batch_size)) {
        const size_t count = std::min(tasks.size() - first, static_cast<size_t>(batch_size));
        Tensor x, y;
        train::assemble_batch(tasks, order, first, count, x, y);
        sink(model.forward(x), y);
    }
}

}  // namespace

MetricReport evaluate_model(const Model& model, const Dataset& ds, Split split, double cutoff,
                            int batch_size) {
    const auto& m = ds.manifest;
    const spectral::SpectralConfig scfg(cutoff, m.h, m.w);
    const double range = std::max(ds.train_data_range(), 1e-12);
    SsimConfig ssim_cfg;
    ssim_cfg.data_range = range;

    MetricReport rep;
    double se = 0.0, ae = 0.0, ssim_sum = 0.0, low = 0.0, high = 0.0;
    int64_t n_el = 0, n_batches = 0, n_samples = 0, n_slices = 0;
    for_each_batch(model, ds, split, batch_size, [&](const Tensor& pred, const Tensor& y) {
        for (int64_t i = 0; i < y.numel(); ++i) {
            const double r = pred[i] - y[i];
            se += r * r;
            ae += std::abs(r);
        }
        n_el += y.numel();
        ssim_sum += ssim(pred, y, ssim_cfg) * pred.dim(0);
        const spectral::BandErrors be = spectral::plancherel_decompose_error(pred, y, scfg);
        const int64_t slices = y.numel() / (static_cast<int64_t>(m.h) * m.w);
        low += be.low * static_cast<double>(slices);
        high += be.high * static_cast<double>(slices);
        n_slices += slices;
        n_samples += pred.dim(0);
        ++n_batches;
    });
    rep.mse = se / static_cast<double>(n_el);
    rep.mae = ae / static_cast<double>(n_el);
    rep.psnr = rep.mse == 0.0 ? std::numeric_limits<double>::infinity()
                              : 10.0 * std::log10(range * range / rep.mse);
    rep.ssim = ssim_sum / static_cast<double>(n_samples);
    rep.low_band_err = low / static_cast<double>(n_slices);
    rep.high_band_err = high / static_cast<double>(n_slices);
    rep.n_samples = static_cast<int>(n_samples);
    return rep;
}

std::string metric_report_csv(const MetricReport& r, const std::string& model_name) {
    std::string s = "model,mse,mae,psnr,ssim,low_band_err,high_band_err,n_samples\n";
    s += model_name + ',' + fmt(r.mse) + ',' + fmt(r.mae) + ',' + fmt(r.psnr) + ',' +
         fmt(r.ssim) + ',' + fmt(r.low_band_err) + ',' + fmt(r.high_band_err) + ',' +
         std::to_string(r.n_samples) + '\n';
    return s;
}

SpectralReport spectral_report(const Model& model, const Dataset& ds, Split split, double cutoff,
                               int batch_size) {
    const auto& m = ds.manifest;
    const spectral::SpectralConfig scfg(cutoff, m.h, m.w);
    SpectralReport rep;
    rep.pred_spectrum.assign(static_cast<size_t>(spectral::n_shells(m.h, m.w)), 0.0);
    rep.target_spectrum.assign(rep.pred_spectrum.size(), 0.0);
    const int64_t slice = static_cast<int64_t>(m.h) * m.w;
    int64_t n_slices = 0;
    for_each_batch(model, ds, split, batch_size, [&](const Tensor& pred, const Tensor& y) {
        const spectral::BandErrors be = spectral::plancherel_decompose_error(pred, y, scfg);
        const int64_t slices = y.numel() / slice;
        rep.low_err += be.low * static_cast<double>(slices);
        rep.high_err += be.high * static_cast<double>(slices);
        rep.total_err += be.total * static_cast<double>(slices);
        for (int64_t s = 0; s < slices; ++s) {
            Tensor pf({m.h, m.w}), tf({m.h, m.w});
            for (int64_t i = 0; i < slice; ++i) {
                pf[i] = pred[s * slice + i];
                tf[i] = y[s * slice + i];
            }
            const auto ps = spectral::radial_energy_spectrum(pf);
            const auto ts = spectral::radial_energy_spectrum(tf);
            for (size_t k = 0; k < ps.size(); ++k) {
                rep.pred_spectrum[k] += ps[k];
                rep.target_spectrum[k] += ts[k];
            }
        }
        n_slices += slices;
    });
    const double inv = 1.0 / static_cast<double>(n_slices);
    rep.low_err *= inv;
    rep.high_err *= inv;
    rep.total_err *= inv;
    for (auto& e : rep.pred_spectrum) e *= inv;
    for (auto& e : rep.target_spectrum) e *= inv;
    return rep;
}

void write_spectra_csv(const std::filesystem::path& path, const SpectralReport& rep) {
    std::ofstream os(path, std::ios::trunc);
    os << "shell,pred_energy,target_energy\n";
    for (size_t k = 0; k < rep.pred_spectrum.size(); ++k)
        os << k << ',' << fmt(rep.pred_spectrum[k]) << ',' << fmt(rep.target_spectrum[k]) << '\n';
}

void write_band_errors_csv(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, SpectralReport>>& reports) {
    std::ofstream os(path, std::ios::trunc);
    os << "model,band,error\n";
    for (const auto& [name, rep] : reports) {
        os << name << ",low," << fmt(rep.low_err) << '\n';
        os << name << ",high," << fmt(rep.high_err) << '\n';
        os << name << ",total," << fmt(rep.total_err) << '\n';
    }
}

// ===========================================================================
// Timing
// ===========================================================================

std::vector<TimingReport> bench_inference(const std::vector<const Model*>& models,
                                          const std::vector<std::string>& names,
                                          const std::vector<int>& input_shape, int repeats,
                                          int warmup, int groups) {
    if (models.empty() || models.size() != names.size())
        throw std::invalid_argument("bench: need matching models and names");
    std::vector<TimingReport> out;
    Tensor x(input_shape);
    // deterministic non-trivial input
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::sin(0.01 * static_cast<double>(i));

    const int per_group = std::max(1, repeats / groups);
    for (size_t mi = 0; mi < models.size(); ++mi) {
        const Model& m = *models[mi];
        for (int i = 0; i < warmup; ++i) (void)m.forward(x);
        std::vector<double> group_means;
        for (int gi = 0; gi < groups; ++gi) {
            const auto t0 = std::chrono::steady_clock::now();
            for (int i = 0; i < per_group; ++i) (void)m.forward(x);
            const auto t1 = std::chrono::steady_clock::now();
            group_means.push_back(std::chrono::duration<double>(t1 - t0).count() / per_group);
        }
        std::sort(group_means.begin(), group_means.end());
        TimingReport r;
        r.name = names[mi];
        r.mean_forward_s = group_means[group_means.size() / 2];  // median of means
        r.flops = nn::count_flops(m, input_shape);
        r.params = nn::count_params(m);
        out.push_back(r);
    }
    for (auto& r : out) r.speedup_vs_first = out[0].mean_forward_s / r.mean_forward_s;
    return out;
}

void write_timing_csv(const std::filesystem::path& path, const std::vector<TimingReport>& reports) {
    std::ofstream os(path, std::ios::trunc);
    os << "model,mean_forward_s,flops,params,speedup_vs_first\n";
    for (const auto& r : reports)
        os << r.name << ',' << fmt(r.mean_forward_s) << ',' << r.flops << ',' << r.params << ','
           << fmt(r.speedup_vs_first) << '\n';
}

// ===========================================================================
// SVG plots
// ===========================================================================

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b"};

struct Frame {
    double x0 = 70, y0 = 20, x1 = 560, y1 = 340;  // plot area in a 640x400 canvas
    double map_x(double u) const { return x0 + u * (x1 - x0); }
    double map_y(double u) const { return y1 - u * (y1 - y0); }
};

void svg_header(std::ofstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
          "viewBox=\"0 0 640 400\">\n"
       << "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n"
       << "<text x=\"320\" y=\"385\" text-anchor=\"middle\" font-size=\"13\" "
          "font-family=\"sans-serif\">"
       << title << "</text>\n";
}

}  // namespace

void write_spectra_svg(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, SpectralReport>>& reports) {
    std::ofstream os(path, std::ios::trunc);
    svg_header(os, "radial energy spectra (log-log): prediction vs target");
    Frame f;
    // collect log-log ranges over positive shells/energies
    double lx0 = 1e300, lx1 = -1e300, ly0 = 1e300, ly1 = -1e300;
    auto scan = [&](const std::vector<double>& e) {
        for (size_t k = 1; k < e.size(); ++k)
            if (e[k] > 0.0) {
                lx0 = std::min(lx0, std::log10(static_cast<double>(k)));
                lx1 = std::max(lx1, std::log10(static_cast<double>(k)));
                ly0 = std::min(ly0, std::log10(e[k]));
                ly1 = std::max(ly1, std::log10(e[k]));
            }
    };
    for (const auto& [name, rep] : reports) {
        scan(rep.pred_spectrum);
        scan(rep.target_spectrum);
    }
    if (lx1 <= lx0) {
        os << "</svg>\n";
        return;
    }
    if (ly1 <= ly0) ly1 = ly0 + 1.0;
    auto polyline = [&](const std::vector<double>& e, const char* color, const char* dash) {
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\"" << dash
           << " points=\"";
        for (size_t k = 1; k < e.size(); ++k)
            if (e[k] > 0.0)
                os << f.map_x((std::log10(static_cast<double>(k)) - lx0) / (lx1 - lx0)) << ','
                   << f.map_y((std::log10(e[k]) - ly0) / (ly1 - ly0)) << ' ';
        os << "\"/>\n";
    };
    os << "<rect x=\"" << f.x0 << "\" y=\"" << f.y0 << "\" width=\"" << f.x1 - f.x0
       << "\" height=\"" << f.y1 - f.y0 << "\" fill=\"none\" stroke=\"black\"/>\n";
    int ci = 0;
    double ly = 35;
    for (const auto& [name, rep] : reports) {
        const char* color = kPalette[ci % 6];
        polyline(rep.pred_spectrum, color, "");
        polyline(rep.target_spectrum, color, " stroke-dasharray=\"4 3\"");
        os << "<text x=\"575\" y=\"" << ly << "\" font-size=\"11\" font-family=\"sans-serif\" "
           << "fill=\"" << color << "\">" << name << "</text>\n";
        ly += 15;
        ++ci;
    }
    os << "<text x=\"575\" y=\"" << ly << "\" font-size=\"10\" font-family=\"sans-serif\">"
       << "dashed = target</text>\n";
    os << "</svg>\n";
}

void write_band_errors_svg(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, SpectralReport>>& reports) {
    std::ofstream os(path, std::ios::trunc);
    svg_header(os, "band errors per model (left: low band, right: high band)");
    Frame f;
    double emax = 0.0;
    for (const auto& [name, rep] : reports) emax = std::max({emax, rep.low_err, rep.high_err});
    if (emax <= 0.0) emax = 1.0;
    const size_t n = reports.size();
    const double group_w = (f.x1 - f.x0) / static_cast<double>(n);
    os << "<rect x=\"" << f.x0 << "\" y=\"" << f.y0 << "\" width=\"" << f.x1 - f.x0
       << "\" height=\"" << f.y1 - f.y0 << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (size_t i = 0; i < n; ++i) {
        const auto& [name, rep] = reports[i];
        const double gx = f.x0 + group_w * static_cast<double>(i);
        const double bw = group_w / 3.0;
        auto bar = [&](double x, double v, const char* color) {
            const double hgt = (f.y1 - f.y0) * (v / emax);
            os << "<rect x=\"" << x << "\" y=\"" << f.y1 - hgt << "\" width=\"" << bw
               << "\" height=\"" << hgt << "\" fill=\"" << color << "\"/>\n";
        };
        bar(gx + bw * 0.4, rep.low_err, "#1f77b4");
        bar(gx + bw * 1.6, rep.high_err, "#d62728");
        os << "<text x=\"" << gx + group_w / 2 << "\" y=\"355\" text-anchor=\"middle\" "
           << "font-size=\"11\" font-family=\"sans-serif\">" << name << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace sdkd::eval
