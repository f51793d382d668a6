#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sdkd/dataset.hpp"
#include "sdkd/models.hpp"
#include "sdkd/spectral.hpp"

namespace sdkd::eval {

double mse(const Tensor& pred, const Tensor& target);
double mae(const Tensor& pred, const Tensor& target);

// 10*log10(range^2 / mse); +inf when mse == 0 (the caller formats it)
double psnr(const Tensor& pred, const Tensor& target, double data_range);

struct SsimConfig {
    int window = 7;  // uniform window, valid positions only
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

// mean windowed SSIM over all leading slices of [.., H, W]
double ssim(const Tensor& pred, const Tensor& target, const SsimConfig& cfg);

struct MetricReport {
    double mse = 0.0;
    double mae = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    double low_band_err = 0.0;
    double high_band_err = 0.0;
    int n_samples = 0;
};

// full-split evaluation; data_range comes from the train split
MetricReport evaluate_model(const nn::Model& model, const data::Dataset& ds, data::Split split,
                            double cutoff, int batch_size = 8);

std::string metric_report_csv(const MetricReport& r, const std::string& model_name);

// Per-band error table plus mean radial spectra of predictions and targets.
struct SpectralReport {
    double low_err = 0.0;
    double high_err = 0.0;
    double total_err = 0.0;
    std::vector<double> pred_spectrum;    // mean over samples/frames
    std::vector<double> target_spectrum;
};

SpectralReport spectral_report(const nn::Model& model, const data::Dataset& ds, data::Split split,
                               double cutoff, int batch_size = 8);

void write_spectra_csv(const std::filesystem::path& path, const SpectralReport& rep);
void write_band_errors_csv(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, SpectralReport>>& reports);

struct TimingReport {
    std::string name;
    double mean_forward_s = 0.0;
    int64_t flops = 0;
    int64_t params = 0;
    double speedup_vs_first = 1.0;
};

// median-of-means over groups x repeats after warmup passes
std::vector<TimingReport> bench_inference(const std::vector<const nn::Model*>& models,
                                          const std::vector<std::string>& names,
                                          const std::vector<int>& input_shape, int repeats = 30,
                                          int warmup = 5, int groups = 5);

void write_timing_csv(const std::filesystem::path& path, const std::vector<TimingReport>& reports);

// Minimal SVG plots (log-log spectra, band-error bars); text output keeps
// results diffable.
void write_spectra_svg(const std::filesystem::path& path,
                       const std::vector<std::pair<std::string, SpectralReport>>& reports);
void write_band_errors_svg(const std::filesystem::path& path,
                           const std::vector<std::pair<std::string, SpectralReport>>& reports);

}  // namespace sdkd::eval
