#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdkd/fft.hpp"
#include "sdkd/rng.hpp"
#include "sdkd/tensor.hpp"

namespace sdkd::data {

// Dense grid sequence, the universal sample type. data is [T, C, H, W];
// dt is the time between frames. H and W must be powers of two.
struct SpatioTemporalSequence {
    Tensor data;
    double dt = 1.0;

    int t() const { return data.dim(0); }
    int c() const { return data.dim(1); }
    int h() const { return data.dim(2); }
    int w() const { return data.dim(3); }

    void validate() const;  // finiteness + shape invariants
};

// Deterministic split of one sequence into (input frames, target frames).
struct ForecastTask {
    int input_len = 0;
    int horizon = 0;
    const SpatioTemporalSequence* sequence = nullptr;

    Tensor input() const;   // [input_len, C, H, W]
    Tensor target() const;  // [horizon, C, H, W]
};

struct NsConfig {
    int h = 32;
    int w = 32;
    double viscosity = 1e-3;
    double forcing_amplitude = 0.0;
    int forcing_wavenumber = 4;
    double dt = 0.01;          // solver step
    int steps_per_frame = 10;  // frame interval = dt * steps_per_frame
    uint64_t seed = 42;

    void validate() const;
};

struct WaveMode {
    int kx = 0;
    int ky = 0;
    double amplitude = 0.0;
    double phase_speed = 0.0;
    double phase = 0.0;
};

struct BlobInfo {
    std::string file;
    std::string crc32;
    int count = 0;
};

struct DatasetManifest {
    std::string name;
    std::string kind;  // "ns" or "wave"
    int n_train = 0, n_eval = 0, n_test = 0;
    int t = 0, c = 0, h = 0, w = 0;
    int input_len = 0, horizon = 0;
    double dt = 1.0;
    std::string generator_json;  // config echo, verbatim
    BlobInfo blobs[3];           // train, eval, test

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

enum class Split { train = 0, eval = 1, test = 2 };
const char* split_name(Split s);

struct Dataset {
    DatasetManifest manifest;
    std::vector<SpatioTemporalSequence> splits[3];

    const std::vector<SpatioTemporalSequence>& split(Split s) const {
        return splits[static_cast<int>(s)];
    }
    std::vector<ForecastTask> tasks(Split s) const;
    // max - min over the train split; PSNR/SSIM data range
    double train_data_range() const;
};

// ---------------------------------------------------------------------------
// Pseudo-spectral 2D Navier-Stokes, vorticity form:
//   dw/dt + u . grad(w) = nu * lap(w) + f
// 2/3-rule dealiasing; RK2 (midpoint) on advection with an exact integrating
// factor for diffusion, so pure-diffusion modes decay as exp(-nu k^2 t).
// ---------------------------------------------------------------------------

// One step on the vorticity spectrum. Throws CflError when
// dt * max|u| * max(H, W) / (2*pi) >= 1.
fft::ComplexGrid ns_step(const fft::ComplexGrid& vorticity_hat, const NsConfig& cfg);

struct CflError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Kinetic energy (1/2) <|u|^2> of the flow induced by a vorticity spectrum.
double kinetic_energy(const fft::ComplexGrid& vorticity_hat);

// Random solenoidal vorticity field: band-limited spectrum with random
// phases, normalized to a fixed max |w|.
fft::ComplexGrid random_vorticity_spectrum(int h, int w, Rng& rng);

// Split sizes by sequence index: the default rule is 8/1/1; explicit counts
// (summing to n_sequences) override it.
struct SplitCounts {
    int train = -1;
    int eval = -1;
    int test = -1;

    bool explicit_counts() const { return train >= 0; }
    void resolve(int n_sequences);
};

// Generators. Both write manifest.json plus one blob per split under dir,
// and return the loaded dataset.
Dataset generate_ns_dataset(const NsConfig& cfg, int n_sequences, int t_frames, int input_len,
                            int horizon, const std::filesystem::path& dir,
                            SplitCounts splits = {});
Dataset generate_wave_dataset(int n_sequences, int t_frames, const std::vector<WaveMode>& modes,
                              int h, int w, int input_len, int horizon,
                              const std::filesystem::path& dir, double dt = 1.0,
                              SplitCounts splits = {});

// Analytic wave frame: sum_i a_i cos(kx_i x + ky_i y - c_i t + phi_i) on the
// 2*pi torus.
void wave_frame(const std::vector<WaveMode>& modes, double time, int h, int w, double* out);

Dataset load_dataset(const std::filesystem::path& dir);
// fills in the manifest's blob records as a side effect
void save_dataset(Dataset& ds, const std::filesystem::path& dir);

void split_counts(int n_sequences, int& n_train, int& n_eval, int& n_test);

}  // namespace sdkd::data
