#include "sdkd/dataset.hpp"

#include <cmath>
#include <iostream>
#include <memory>

#include "json.hpp"
#include "sdkd/io.hpp"

namespace sdkd::data {

using fft::ComplexGrid;
using fft::cplx;
using fft::signed_freq;
using nlohmann::json;

constexpr double kTwoPi = 6.283185307179586476925286766559;

// ===========================================================================
// Sample types
// ===========================================================================

void SpatioTemporalSequence::validate() const {
    if (data.ndim() != 4) throw std::invalid_argument("sequence: data must be [T, C, H, W]");
    if (t() < 1 || c() < 1) throw std::invalid_argument("sequence: T and C must be >= 1");
    if (!fft::is_power_of_two(h()) || !fft::is_power_of_two(w()))
        throw std::invalid_argument("sequence: H and W must be powers of two");
    if (!data.all_finite()) throw std::invalid_argument("sequence: non-finite entries");
}

static Tensor frame_range(const SpatioTemporalSequence& seq, int first, int count) {
    Tensor out({count, seq.c(), seq.h(), seq.w()});
    const int64_t frame = static_cast<int64_t>(seq.c()) * seq.h() * seq.w();
    for (int64_t i = 0; i < count * frame; ++i) out[i] = seq.data[first * frame + i];
    return out;
}

Tensor ForecastTask::input() const { return frame_range(*sequence, 0, input_len); }
Tensor ForecastTask::target() const { return frame_range(*sequence, input_len, horizon); }

void NsConfig::validate() const {
    if (!fft::is_power_of_two(h) || !fft::is_power_of_two(w))
        throw std::invalid_argument("ns: grid must be powers of two");
    if (viscosity <= 0.0) throw std::invalid_argument("ns: viscosity must be > 0");
    if (forcing_amplitude < 0.0) throw std::invalid_argument("ns: forcing amplitude must be >= 0");
    if (dt <= 0.0) throw std::invalid_argument("ns: dt must be > 0");
    if (steps_per_frame < 1) throw std::invalid_argument("ns: steps_per_frame must be >= 1");
}

// ===========================================================================
// Pseudo-spectral solver
// ===========================================================================

namespace {

struct NsWorkspace {
    int h, w;
    std::vector<double> k2;        // kx^2 + ky^2 per bin
    std::vector<double> kx, ky;    // signed wavenumbers (zeroed at Nyquist for derivatives)
    std::vector<bool> dealias;     // true where the 2/3-rule keeps the mode

    explicit NsWorkspace(int h_, int w_) : h(h_), w(w_) {
        const size_t n = static_cast<size_t>(h) * w;
        k2.resize(n);
        kx.resize(n);
        ky.resize(n);
        dealias.resize(n);
        for (int y = 0; y < h; ++y) {
            const int sy = signed_freq(y, h);
            for (int x = 0; x < w; ++x) {
                const int sx = signed_freq(x, w);
                const size_t i = static_cast<size_t>(y) * w + x;
                k2[i] = static_cast<double>(sx) * sx + static_cast<double>(sy) * sy;
                // Nyquist derivative modes are zeroed to keep fields real
                kx[i] = (x == w / 2) ? 0.0 : sx;
                ky[i] = (y == h / 2) ? 0.0 : sy;
                dealias[i] = (std::abs(sx) <= w / 3) && (std::abs(sy) <= h / 3);
            }
        }
    }
};

const NsWorkspace& workspace(int h, int w) {
    thread_local std::unique_ptr<NsWorkspace> ws;
    if (!ws || ws->h != h || ws->w != w) ws = std::make_unique<NsWorkspace>(h, w);
    return *ws;
}

// -(u . grad w) with 2/3 dealiasing; also reports max |velocity component|
ComplexGrid nonlinear_term(const ComplexGrid& w_hat, const NsWorkspace& ws, double* max_vel) {
    const int h = ws.h, w = ws.w;
    const size_t n = static_cast<size_t>(h) * w;

    ComplexGrid u_hat(h, w), v_hat(h, w), wx_hat(h, w), wy_hat(h, w);
    for (size_t i = 0; i < n; ++i) {
        const cplx wv = w_hat.v[i];
        // streamfunction: lap(psi) = -w  =>  psi_hat = w_hat / k^2
        const cplx psi = ws.k2[i] > 0.0 ? wv / ws.k2[i] : cplx(0.0, 0.0);
        const cplx j(0.0, 1.0);
        u_hat.v[i] = j * ws.ky[i] * psi;    // u = d(psi)/dy
        v_hat.v[i] = -j * ws.kx[i] * psi;   // v = -d(psi)/dx
        wx_hat.v[i] = j * ws.kx[i] * wv;
        wy_hat.v[i] = j * ws.ky[i] * wv;
    }

    std::vector<double> u(n), v(n), wx(n), wy(n);
    fft::ifft2_real(u_hat, u.data());
    fft::ifft2_real(v_hat, v.data());
    fft::ifft2_real(wx_hat, wx.data());
    fft::ifft2_real(wy_hat, wy.data());

    double mv = 0.0;
    std::vector<double> adv(n);
    for (size_t i = 0; i < n; ++i) {
        adv[i] = -(u[i] * wx[i] + v[i] * wy[i]);
        mv = std::max(mv, std::max(std::abs(u[i]), std::abs(v[i])));
    }
    if (max_vel) *max_vel = mv;

    ComplexGrid out = fft::fft2(adv.data(), h, w);
    for (size_t i = 0; i < n; ++i)
        if (!ws.dealias[i]) out.v[i] = 0.0;
    return out;
}

// steady Kolmogorov-type vorticity forcing, spectral form
ComplexGrid forcing_spectrum(const NsConfig& cfg) {
    ComplexGrid f(cfg.h, cfg.w);
    if (cfg.forcing_amplitude > 0.0) {
        // f(x, y) = A cos(k_f y): two conjugate bins at (0, +-k_f)
        const double half = 0.5 * cfg.forcing_amplitude * cfg.h * cfg.w;
        f.at(cfg.forcing_wavenumber % cfg.h, 0) += half;
        f.at((cfg.h - cfg.forcing_wavenumber % cfg.h) % cfg.h, 0) += half;
    }
    return f;
}

}  // namespace

fft::ComplexGrid ns_step(const ComplexGrid& w_hat, const NsConfig& cfg) {
    cfg.validate();
    if (w_hat.h != cfg.h || w_hat.w != cfg.w)
        throw std::invalid_argument("ns_step: spectrum/config grid mismatch");
    const NsWorkspace& ws = workspace(cfg.h, cfg.w);
    const size_t n = static_cast<size_t>(cfg.h) * cfg.w;
    const double dt = cfg.dt;

    const ComplexGrid f_hat = forcing_spectrum(cfg);

    double max_vel = 0.0;
    ComplexGrid n1 = nonlinear_term(w_hat, ws, &max_vel);
    const double cfl = dt * max_vel * std::max(cfg.h, cfg.w) / kTwoPi;
    if (cfl >= 1.0)
        throw CflError("ns_step: CFL violation (dt*max|u|*N/(2pi) = " + std::to_string(cfl) +
                       " >= 1); reduce dt");

    // integrating factor: exact diffusion over dt/2 and dt
    ComplexGrid mid(cfg.h, cfg.w), out(cfg.h, cfg.w);
    for (size_t i = 0; i < n; ++i) {
        const double e_half = std::exp(-cfg.viscosity * ws.k2[i] * 0.5 * dt);
        mid.v[i] = e_half * (w_hat.v[i] + 0.5 * dt * (n1.v[i] + f_hat.v[i]));
    }
    ComplexGrid n2 = nonlinear_term(mid, ws, nullptr);
    for (size_t i = 0; i < n; ++i) {
        const double e_half = std::exp(-cfg.viscosity * ws.k2[i] * 0.5 * dt);
        const double e_full = e_half * e_half;
        out.v[i] = e_full * w_hat.v[i] + dt * e_half * (n2.v[i] + f_hat.v[i]);
    }
    return out;
}

double kinetic_energy(const ComplexGrid& w_hat) {
    const NsWorkspace& ws = workspace(w_hat.h, w_hat.w);
    const double cell = 1.0 / (static_cast<double>(w_hat.h) * w_hat.w);
    double e = 0.0;
    for (size_t i = 0; i < ws.k2.size(); ++i) {
        if (ws.k2[i] <= 0.0) continue;
        // |u_hat|^2 + |v_hat|^2 = k^2 |psi_hat|^2 = |w_hat|^2 / k^2
        e += std::norm(w_hat.v[i]) / ws.k2[i];
    }
    return 0.5 * e * cell * cell;
}

ComplexGrid random_vorticity_spectrum(int h, int w, Rng& rng) {
    ComplexGrid spec(h, w);
    // |w_hat(k)|^2 ~ (1 + (k/k0)^4)^-1 gives a shell spectrum E(k) ~ k / (1 +
    // (k/k0)^4): flat at the largest scales, ~k^-3 beyond k0
    const double k0 = 3.0;
    for (int y = 0; y < h; ++y) {
        const int ky = signed_freq(y, h);
        for (int x = 0; x < w; ++x) {
            const int kx = signed_freq(x, w);
            const double k = std::hypot(kx, ky);
            if (k == 0.0 || x == w / 2 || y == h / 2) continue;
            const double r4 = std::pow(k / k0, 4.0);
            const double amp = 1.0 / std::sqrt(1.0 + r4);
            const double phase = rng.uniform(0.0, kTwoPi);
            spec.at(y, x) += cplx(amp * std::cos(phase), amp * std::sin(phase));
        }
    }
    // Hermitian-symmetrize so the field is real, then normalize max |w|
    ComplexGrid sym(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int ym = (h - y) % h, xm = (w - x) % w;
            sym.at(y, x) = 0.5 * (spec.at(y, x) + std::conj(spec.at(ym, xm)));
        }
    Tensor field = fft::ifft2_real_tensor(sym);
    const double target_max = 5.0;
    const double scale = field.max_abs() > 0.0 ? target_max / field.max_abs() : 1.0;
    for (auto& c : sym.v) c *= scale;
    return sym;
}

// ===========================================================================
// Generators
// ===========================================================================

void split_counts(int n_sequences, int& n_train, int& n_eval, int& n_test) {
    // 8/1/1 by sequence index; remainders go to train
    n_eval = n_sequences / 10;
    n_test = n_sequences / 10;
    n_train = n_sequences - n_eval - n_test;
}

void SplitCounts::resolve(int n_sequences) {
    if (!explicit_counts()) {
        split_counts(n_sequences, train, eval, test);
        return;
    }
    if (eval < 0 || test < 0 || train + eval + test != n_sequences)
        throw std::invalid_argument("splits: explicit counts must sum to n_sequences");
}

namespace {

const char* kSplitNames[3] = {"train", "eval", "test"};

std::vector<double> flatten_split(const std::vector<SpatioTemporalSequence>& seqs) {
    std::vector<double> flat;
    for (const auto& s : seqs)
        for (int64_t i = 0; i < s.data.numel(); ++i) flat.push_back(s.data[i]);
    return flat;
}

// round through f32 so in-memory tensors match the serialized blobs exactly
void quantize_f32(Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(static_cast<float>(t[i]));
}

Dataset assemble_and_save(DatasetManifest manifest,
                          std::vector<SpatioTemporalSequence> sequences,
                          const std::filesystem::path& dir) {
    Dataset ds;
    int counts[3] = {manifest.n_train, manifest.n_eval, manifest.n_test};
    size_t pos = 0;
    for (int s = 0; s < 3; ++s)
        for (int i = 0; i < counts[s]; ++i) ds.splits[s].push_back(std::move(sequences[pos++]));
    ds.manifest = std::move(manifest);
    save_dataset(ds, dir);
    return ds;
}

}  // namespace

const char* split_name(Split s) { return kSplitNames[static_cast<int>(s)]; }

Dataset generate_ns_dataset(const NsConfig& cfg, int n_sequences, int t_frames, int input_len,
                            int horizon, const std::filesystem::path& dir, SplitCounts splits) {
    cfg.validate();
    if (n_sequences < 1) throw std::invalid_argument("generate_ns_dataset: n_sequences >= 1");
    if (input_len + horizon > t_frames)
        throw std::invalid_argument("generate_ns_dataset: input_len + horizon must be <= T");

    std::vector<SpatioTemporalSequence> sequences;
    const int64_t frame = static_cast<int64_t>(cfg.h) * cfg.w;
    for (int s = 0; s < n_sequences; ++s) {
        // sub-seed loop: blow-ups are regenerated with a fresh stream
        for (uint64_t attempt = 0;; ++attempt) {
            Rng rng = Rng::derive(cfg.seed, 0x6e73 /* "ns" */, static_cast<uint64_t>(s) +
                                                                   (attempt << 32));
            ComplexGrid w_hat = random_vorticity_spectrum(cfg.h, cfg.w, rng);
            SpatioTemporalSequence seq;
            seq.data = Tensor({t_frames, 1, cfg.h, cfg.w});
            seq.dt = cfg.dt * cfg.steps_per_frame;
            bool ok = true;
            for (int t = 0; t < t_frames; ++t) {
                if (t > 0)
                    for (int k = 0; k < cfg.steps_per_frame; ++k) w_hat = ns_step(w_hat, cfg);
                Tensor field = fft::ifft2_real_tensor(w_hat);
                if (field.max_abs() > 1e6 || !field.all_finite()) {
                    ok = false;
                    break;
                }
                for (int64_t i = 0; i < frame; ++i) seq.data[t * frame + i] = field[i];
            }
            if (ok) {
                quantize_f32(seq.data);
                seq.validate();
                sequences.push_back(std::move(seq));
                break;
            }
            std::cerr << "[sdkd] ns sequence " << s << " blew up; regenerating (attempt "
                      << attempt + 1 << ")\n";
        }
    }

    DatasetManifest m;
    m.name = "ns";
    m.kind = "ns";
    splits.resolve(n_sequences);
    m.n_train = splits.train;
    m.n_eval = splits.eval;
    m.n_test = splits.test;
    m.t = t_frames;
    m.c = 1;
    m.h = cfg.h;
    m.w = cfg.w;
    m.input_len = input_len;
    m.horizon = horizon;
    m.dt = cfg.dt * cfg.steps_per_frame;
    m.generator_json = json{{"h", cfg.h},
                            {"w", cfg.w},
                            {"viscosity", cfg.viscosity},
                            {"forcing_amplitude", cfg.forcing_amplitude},
                            {"forcing_wavenumber", cfg.forcing_wavenumber},
                            {"dt", cfg.dt},
                            {"steps_per_frame", cfg.steps_per_frame},
                            {"seed", cfg.seed}}
                           .dump();
    return assemble_and_save(std::move(m), std::move(sequences), dir);
}

void wave_frame(const std::vector<WaveMode>& modes, double time, int h, int w, double* out) {
    for (int y = 0; y < h; ++y) {
        const double yy = kTwoPi * y / h;
        for (int x = 0; x < w; ++x) {
            const double xx = kTwoPi * x / w;
            double v = 0.0;
            for (const auto& m : modes)
                v += m.amplitude * std::cos(m.kx * xx + m.ky * yy - m.phase_speed * time + m.phase);
            out[static_cast<int64_t>(y) * w + x] = v;
        }
    }
}

Dataset generate_wave_dataset(int n_sequences, int t_frames, const std::vector<WaveMode>& modes,
                              int h, int w, int input_len, int horizon,
                              const std::filesystem::path& dir, double dt, SplitCounts splits) {
    if (n_sequences < 1) throw std::invalid_argument("generate_wave_dataset: n_sequences >= 1");
    if (input_len + horizon > t_frames)
        throw std::invalid_argument("generate_wave_dataset: input_len + horizon must be <= T");
    for (const auto& m : modes)
        if (std::abs(m.kx) >= w / 2 || std::abs(m.ky) >= h / 2)
            throw std::invalid_argument("generate_wave_dataset: mode beyond Nyquist");

    // sequences differ by a per-sequence phase offset in time
    std::vector<SpatioTemporalSequence> sequences;
    const int64_t frame = static_cast<int64_t>(h) * w;
    for (int s = 0; s < n_sequences; ++s) {
        SpatioTemporalSequence seq;
        seq.data = Tensor({t_frames, 1, h, w});
        seq.dt = dt;
        for (int t = 0; t < t_frames; ++t)
            wave_frame(modes, (s * t_frames + t) * dt, h, w, seq.data.data() + t * frame);
        quantize_f32(seq.data);
        seq.validate();
        sequences.push_back(std::move(seq));
    }

    json jmodes = json::array();
    for (const auto& m : modes)
        jmodes.push_back({{"kx", m.kx},
                          {"ky", m.ky},
                          {"amplitude", m.amplitude},
                          {"phase_speed", m.phase_speed},
                          {"phase", m.phase}});

    DatasetManifest m;
    m.name = "wave";
    m.kind = "wave";
    splits.resolve(n_sequences);
    m.n_train = splits.train;
    m.n_eval = splits.eval;
    m.n_test = splits.test;
    m.t = t_frames;
    m.c = 1;
    m.h = h;
    m.w = w;
    m.input_len = input_len;
    m.horizon = horizon;
    m.dt = dt;
    m.generator_json = json{{"modes", jmodes}, {"dt", dt}}.dump();
    return assemble_and_save(std::move(m), std::move(sequences), dir);
}

// ===========================================================================
// Container
// ===========================================================================

std::string DatasetManifest::to_json() const {
    json j;
    j["name"] = name;
    j["kind"] = kind;
    j["counts"] = {{"train", n_train}, {"eval", n_eval}, {"test", n_test}};
    j["shape"] = {{"t", t}, {"c", c}, {"h", h}, {"w", w}};
    j["input_len"] = input_len;
    j["horizon"] = horizon;
    j["dt"] = dt;
    j["generator"] = json::parse(generator_json.empty() ? "{}" : generator_json);
    json jb;
    for (int s = 0; s < 3; ++s)
        jb[kSplitNames[s]] = {{"file", blobs[s].file},
                              {"crc32", blobs[s].crc32},
                              {"count", blobs[s].count}};
    j["blobs"] = jb;
    return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text) {
    json j = json::parse(text);
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.kind = j.at("kind").get<std::string>();
    m.n_train = j.at("counts").at("train").get<int>();
    m.n_eval = j.at("counts").at("eval").get<int>();
    m.n_test = j.at("counts").at("test").get<int>();
    m.t = j.at("shape").at("t").get<int>();
    m.c = j.at("shape").at("c").get<int>();
    m.h = j.at("shape").at("h").get<int>();
    m.w = j.at("shape").at("w").get<int>();
    m.input_len = j.at("input_len").get<int>();
    m.horizon = j.at("horizon").get<int>();
    m.dt = j.at("dt").get<double>();
    m.generator_json = j.at("generator").dump();
    for (int s = 0; s < 3; ++s) {
        const json& b = j.at("blobs").at(kSplitNames[s]);
        m.blobs[s].file = b.at("file").get<std::string>();
        m.blobs[s].crc32 = b.at("crc32").get<std::string>();
        m.blobs[s].count = b.at("count").get<int>();
    }
    return m;
}

void save_dataset(Dataset& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (int s = 0; s < 3; ++s) {
        std::vector<double> flat = flatten_split(ds.splits[s]);
        const std::string file = std::string(kSplitNames[s]) + ".f32";
        io::write_blob(dir / file, flat, "f32");
        ds.manifest.blobs[s].file = file;
        ds.manifest.blobs[s].crc32 = io::crc32_hex(io::blob_crc(flat, "f32"));
        ds.manifest.blobs[s].count = static_cast<int>(ds.splits[s].size());
    }
    io::write_text_file(dir / "manifest.json", ds.manifest.to_json());
}

Dataset load_dataset(const std::filesystem::path& dir) {
    Dataset ds;
    ds.manifest = DatasetManifest::from_json(io::read_text_file(dir / "manifest.json"));
    const DatasetManifest& m = ds.manifest;
    if (m.input_len + m.horizon > m.t)
        throw std::runtime_error("dataset: input_len + horizon exceeds T");
    const int counts[3] = {m.n_train, m.n_eval, m.n_test};
    const int64_t seq_numel = static_cast<int64_t>(m.t) * m.c * m.h * m.w;
    for (int s = 0; s < 3; ++s) {
        if (counts[s] != m.blobs[s].count)
            throw std::runtime_error("dataset: manifest count mismatch for split " +
                                     std::string(kSplitNames[s]));
        std::vector<double> flat =
            io::read_blob(dir / m.blobs[s].file, seq_numel * counts[s], "f32");
        const std::string crc = io::crc32_hex(io::blob_crc(flat, "f32"));
        if (crc != m.blobs[s].crc32)
            throw std::runtime_error("dataset: checksum mismatch in blob " + m.blobs[s].file +
                                     " (expected " + m.blobs[s].crc32 + ", got " + crc + ")");
        for (int i = 0; i < counts[s]; ++i) {
            SpatioTemporalSequence seq;
            seq.data = Tensor({m.t, m.c, m.h, m.w});
            seq.dt = m.dt;
            for (int64_t k = 0; k < seq_numel; ++k) seq.data[k] = flat[i * seq_numel + k];
            seq.validate();
            ds.splits[s].push_back(std::move(seq));
        }
    }
    return ds;
}

std::vector<ForecastTask> Dataset::tasks(Split s) const {
    std::vector<ForecastTask> out;
    for (const auto& seq : split(s))
        out.push_back(ForecastTask{manifest.input_len, manifest.horizon, &seq});
    return out;
}

double Dataset::train_data_range() const {
    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& seq : split(Split::train)) {
        const double mn = seq.data.min_value(), mx = seq.data.max_value();
        if (first) {
            lo = mn;
            hi = mx;
            first = false;
        } else {
            lo = std::min(lo, mn);
            hi = std::max(hi, mx);
        }
    }
    return hi - lo;
}

}  // namespace sdkd::data
