// Acceptance suite: one pass/fail line per criterion. Criterion 5 runs the
// full distillation-trend experiment and dominates the runtime; run a subset
// with --criterion N (repeatable) during development.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "sdkd/checkpoint.hpp"
#include "sdkd/dataset.hpp"
#include "sdkd/distill.hpp"
#include "sdkd/io.hpp"
#include "sdkd/metrics.hpp"
#include "sdkd/models.hpp"
#include "sdkd/spectral.hpp"
#include "sdkd/train.hpp"

using namespace sdkd;
namespace fs = std::filesystem;

namespace {

std::string g_cli_path;
fs::path g_work;

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

// ---------------------------------------------------------------------------
// 1. QP oracle equivalence
// ---------------------------------------------------------------------------

bool criterion_qp(std::string& detail) {
    Timer timer;
    Rng rng(20240501);
    const double caps[3] = {0.5, 0.7, 1.0};
    int checked = 0;
    double worst_gap = 0.0, worst_cf = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int m = 2 + static_cast<int>(rng.integer(3));
        const int dim = 1 + static_cast<int>(rng.integer(8));
        double cap = caps[rng.integer(3)];
        if (m * cap < 1.0) cap = 1.0;
        std::vector<std::vector<double>> grads(static_cast<size_t>(m),
                                               std::vector<double>(static_cast<size_t>(dim)));
        for (auto& g : grads)
            for (auto& x : g) x = rng.normal();

        distill::A2DConfig cfg;
        cfg.cap = cap;
        const std::vector<double> alpha = distill::solve_a2d_weights(grads, cfg);
        const double obj = distill::a2d_objective(grads, alpha);
        auto objective = [&](const std::vector<double>& a) {
            return distill::a2d_objective(grads, a);
        };

        double oracle_best;
        if (m <= 3) {
            oracle_best = objective(oracle::capped_simplex_grid_min(objective, m, cap, 0.01));
        } else {
            // vertex / pairwise / random-feasible enumeration
            oracle_best = 1e300;
            auto consider = [&](std::vector<double> v) {
                v = distill::project_capped_simplex(v, cap);
                oracle_best = std::min(oracle_best, objective(v));
            };
            for (int i = 0; i < m; ++i) {
                std::vector<double> e(static_cast<size_t>(m), 0.0);
                e[static_cast<size_t>(i)] = 1.0;
                consider(e);
            }
            for (int i = 0; i < m; ++i)
                for (int j = i + 1; j < m; ++j)
                    for (int step = 0; step <= 100; ++step) {
                        std::vector<double> v(static_cast<size_t>(m), 0.0);
                        v[static_cast<size_t>(i)] = step / 100.0;
                        v[static_cast<size_t>(j)] = 1.0 - step / 100.0;
                        consider(v);
                    }
                for (int r = 0; r < 2000; ++r) {
                    std::vector<double> v(static_cast<size_t>(m));
                    for (auto& x : v) x = rng.uniform();
                    double s = 0.0;
                    for (double x : v) s += x;
                    for (auto& x : v) x /= s;
                    consider(v);
                }
        }
        worst_gap = std::max(worst_gap, obj - oracle_best);
        if (obj > oracle_best + 1e-4) {
            detail = "objective gap " + fmt("%.3g", obj - oracle_best) + " at trial " +
                     std::to_string(trial);
            return false;
        }
        if (m == 2 && cap == 1.0) {
            const double cf = oracle::two_teacher_closed_form(grads[0], grads[1]);
            worst_cf = std::max(worst_cf, std::abs(alpha[0] - cf));
            if (std::abs(alpha[0] - cf) > 1e-6) {
                detail = "closed-form mismatch " + fmt("%.3g", std::abs(alpha[0] - cf));
                return false;
            }
        }
        ++checked;
    }
    if (timer.seconds() >= 120.0) {
        detail = "runtime " + fmt("%.1f", timer.seconds()) + " s exceeds 2 min";
        return false;
    }
    detail = std::to_string(checked) + " instances, worst gap " + fmt("%.2g", worst_gap) +
             ", worst closed-form diff " + fmt("%.2g", worst_cf) + ", " +
             fmt("%.1f", timer.seconds()) + " s";
    return true;
}

// ---------------------------------------------------------------------------
// 2. Spectral exactness
// ---------------------------------------------------------------------------

bool criterion_spectral(std::string& detail) {
    Rng rng(7070);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        Tensor f = oracle::random_tensor({32, 32}, rng);
        Tensor g = oracle::random_tensor({32, 32}, rng);
        for (double cutoff : {2.0, 4.0, 8.0}) {
            const spectral::SpectralConfig cfg(cutoff, 32, 32);
            const auto split = spectral::band_split(f, cfg);
            double rec = 0.0;
            for (int64_t i = 0; i < f.numel(); ++i)
                rec = std::max(rec,
                               std::abs(split.low_component[i] + split.high_component[i] - f[i]));
            rec /= std::max(1.0, f.max_abs());
            const double total = sum_sq(f);
            const double parseval =
                std::abs(total - sum_sq(split.low_component) - sum_sq(split.high_component)) /
                total;
            const auto be = spectral::plancherel_decompose_error(f, g, cfg);
            const double plancherel = std::abs(be.low + be.high - be.total) / be.total;
            worst = std::max({worst, rec, parseval, plancherel});
            if (worst > 1e-10) {
                detail = "identity residual " + fmt("%.3g", worst) + " at cutoff " +
                         fmt("%.0f", cutoff);
                return false;
            }
        }
    }
    detail = "100 fields x 3 cutoffs, worst relative residual " + fmt("%.2g", worst);
    return true;
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness
// ---------------------------------------------------------------------------

bool criterion_gradients(std::string& detail) {
    Timer timer;
    const int before = testh::g_failures;
    Rng rng(31337);
    auto rt = [&rng](std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
        return oracle::random_tensor(shape, rng, lo, hi);
    };
    using gradcheck::check_gradients;
    using namespace sdkd::nn;
    const double tol = 1e-4;

    for (int round = 0; round < 2; ++round) {
        const int b = 1 + round, c = 2 + round;
        check_gradients("dense", {rt({3, 5}), rt({c, 5}), rt({c})},
                        [](Graph& g, const std::vector<Var>& p) {
                            return mean_sq(g, dense(g, p[0], p[1], p[2]));
                        }, tol, 6, rng.next_u64());
        check_gradients("conv_s1", {rt({b, c, 6, 6}), rt({3, c, 3, 3}), rt({3})},
                        [](Graph& g, const std::vector<Var>& p) {
                            return mean_sq(g, gelu(g, conv2d(g, p[0], p[1], p[2], 1, 1)));
                        }, tol, 6, rng.next_u64());
        check_gradients("conv_s2", {rt({b, c, 8, 8}), rt({2, c, 3, 3}), rt({2})},
                        [](Graph& g, const std::vector<Var>& p) {
                            return mean_sq(g, conv2d(g, p[0], p[1], p[2], 2, 1));
                        }, tol, 6, rng.next_u64());
        check_gradients("tconv", {rt({b, c, 4, 4}), rt({c, 2, 4, 4}), rt({2})},
                        [](Graph& g, const std::vector<Var>& p) {
                            return mean_sq(g, conv2d_transpose(g, p[0], p[1], p[2], 2, 1));
                        }, tol, 6, rng.next_u64());
        check_gradients("layer_norm", {rt({5, 6}), rt({6}, 0.5, 1.5), rt({6})},
                        [](Graph& g, const std::vector<Var>& p) {
                            return mean_sq(g, layer_norm(g, p[0], p[1], p[2]));
                        }, tol, 6, rng.next_u64());
        check_gradients("attention", {rt({b, 5, 4}), rt({b, 5, 4}), rt({b, 5, 4})},
                        [round](Graph& g, const std::vector<Var>& p) {
                            return mean_sq(g, attention(g, p[0], p[1], p[2], round == 0 ? 1 : 2));
                        }, tol, 6, rng.next_u64());
        check_gradients("permutes", {rt({b, 2, 4, 4})},
                        [](Graph& g, const std::vector<Var>& p) {
                            Var t = to_tokens(g, p[0]);
                            t = transpose_last2(g, t);
                            t = transpose_last2(g, t);
                            return mean_sq(g, from_tokens(g, t, 4, 4));
                        }, tol, 6, rng.next_u64());
        {
            const spectral::SpectralConfig cfg(2.0, 8, 8);
            check_gradients("bands", {rt({b, 8, 8})},
                            [cfg](Graph& g, const std::vector<Var>& p) {
                                Var hi = ssq_per_slice(g, band_high(g, p[0], cfg));
                                Var lo = ssq_per_slice(g, band_low(g, p[0], cfg));
                                return add(g, hi, scale(g, lo, 0.7));
                            }, tol, 6, rng.next_u64());
        }
        // losses
        {
            Tensor target = rt({b, 8, 8});
            check_gradients("task_loss", {rt({b, 8, 8})},
                            [target](Graph& g, const std::vector<Var>& p) {
                                return distill::task_loss_op(g, p[0], target);
                            }, tol, 6, rng.next_u64());
            distill::DistillPlan plan;
            plan.cutoff = 2.0;
            plan.alpha_kd = 0.6;
            check_gradients("kd_loss", {rt({b, 8, 8})},
                            [target, plan](Graph& g, const std::vector<Var>& p) {
                                return distill::kd_loss_op(g, p[0], target, plan);
                            }, tol, 6, rng.next_u64());
            check_gradients("ab_loss", {rt({b, 8, 8}, -2.0, 2.0)},
                            [target](Graph& g, const std::vector<Var>& p) {
                                return distill::ab_loss_op(g, p[0], target, 0.9);
                            }, tol, 6, rng.next_u64());
        }
    }

    // every model kind end to end on a micro config
    for (nn::ModelKind kind : {nn::ModelKind::st_alternet, nn::ModelKind::simvp,
                               nn::ModelKind::unet, nn::ModelKind::resnet,
                               nn::ModelKind::mlp_mixer}) {
        nn::ModelSpec s;
        s.kind = kind;
        s.in_frames = 2;
        s.out_frames = 2;
        s.channels = 1;
        s.hidden = nn::is_teacher_kind(kind) ? 8 : 4;
        s.depth = 1;
        s.heads = 2;
        s.grid_h = s.grid_w = 8;
        nn::Model m(s, 11);
        Tensor x = rt({1, 2, 8, 8}), y = rt({1, 2, 8, 8});
        nn::Graph g;
        auto bound = m.build(g, g.input(x), true);
        nn::Var loss = distill::task_loss_op(g, bound.output, y);
        g.backward(loss);
        auto loss_value = [&]() { return distill::task_loss(m.forward(x), y); };
        for (int probe = 0; probe < 10; ++probe) {
            const auto& [name, var] =
                bound.params[rng.integer(bound.params.size())];
            Tensor& t = m.params().at(name);
            const int64_t ci = static_cast<int64_t>(rng.integer(static_cast<uint64_t>(t.numel())));
            const double x0 = t[ci];
            const double h = 1e-5 * std::max(1.0, std::abs(x0));
            t[ci] = x0 + h;
            const double fp = loss_value();
            t[ci] = x0 - h;
            const double fm = loss_value();
            t[ci] = x0;
            const double numeric = (fp - fm) / (2.0 * h);
            if (!oracle::grad_close(g.grad(var)[ci], numeric, tol)) {
                detail = std::string(nn::kind_name(kind)) + " " + name + " analytic " +
                         fmt("%.6g", g.grad(var)[ci]) + " vs numeric " + fmt("%.6g", numeric);
                return false;
            }
        }
    }

    if (testh::g_failures != before) {
        detail = "finite-difference mismatches (see log)";
        return false;
    }
    if (timer.seconds() >= 300.0) {
        detail = "runtime " + fmt("%.0f", timer.seconds()) + " s exceeds 5 min";
        return false;
    }
    detail = "all layer and loss gradients within 1e-4, " + fmt("%.1f", timer.seconds()) + " s";
    return true;
}

// ---------------------------------------------------------------------------
// 4. PDE oracle
// ---------------------------------------------------------------------------

bool criterion_pde(std::string& detail) {
    data::NsConfig cfg;
    cfg.h = cfg.w = 32;
    cfg.viscosity = 1e-3;
    cfg.dt = 0.01;

    const double kappa = 2.0;
    Tensor field({32, 32});
    const double two_pi = 6.283185307179586476925286766559;
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            field.at(y, x) = 2.0 * kappa * std::cos(kappa * two_pi * x / 32.0) *
                             std::cos(kappa * two_pi * y / 32.0);
    const double initial = field.max_abs();
    fft::ComplexGrid w_hat = fft::fft2(field);
    double worst = 0.0;
    for (int n = 1; n <= 100; ++n) {
        w_hat = data::ns_step(w_hat, cfg);
        const double expected =
            initial * std::exp(-2.0 * cfg.viscosity * kappa * kappa * n * cfg.dt);
        const double measured = fft::ifft2_real_tensor(w_hat).max_abs();
        worst = std::max(worst, std::abs(measured / expected - 1.0));
    }
    if (worst >= 0.01) {
        detail = "Taylor-Green decay off by " + fmt("%.3g", worst);
        return false;
    }

    Rng rng(12);
    fft::ComplexGrid turb = data::random_vorticity_spectrum(32, 32, rng);
    double prev = data::kinetic_energy(turb);
    for (int n = 0; n < 500; ++n) {
        turb = data::ns_step(turb, cfg);
        const double e = data::kinetic_energy(turb);
        if (e > prev) {
            detail = "energy increased at step " + std::to_string(n);
            return false;
        }
        prev = e;
    }
    detail = "Taylor-Green within " + fmt("%.2g", worst) + ", energy monotone over 500 steps";
    return true;
}

// ---------------------------------------------------------------------------
// 5. Distillation trend
// ---------------------------------------------------------------------------

bool criterion_trend(std::string& detail) {
    Timer timer;
    const fs::path dir = g_work / "trend";
    fs::create_directories(dir);

    data::NsConfig ns;
    ns.h = ns.w = 32;
    ns.seed = 42;
    data::SplitCounts splits;
    splits.train = 100;
    splits.eval = 10;
    splits.test = 10;
    data::Dataset ds = data::generate_ns_dataset(ns, 120, 20, 10, 10, dir / "data", splits);

    // Stage 1: teacher pretraining (shared across student seeds)
    nn::ModelSpec tspec = nn::ModelSpec::teacher_default(nn::ModelKind::st_alternet, 10, 10, 1);
    nn::Model teacher(tspec, 42);
    train::TrainConfig ttc;
    ttc.epochs = 60;
    ttc.lr = 1e-3;
    ttc.batch_size = 8;
    ttc.seed = 42;
    ttc.early_stop_patience = 20;
    ttc.deterministic = true;
    train::RunRecord rt = train::pretrain_teacher(teacher, ds, ttc, dir / "teacher");
    nn::load_into_model(teacher, nn::load_checkpoint(rt.best_checkpoint));

    const double cutoff = 4.0;
    distill::DistillPlan plan;
    plan.lambda = 3e-4;
    plan.alpha_kd = 0.25;
    plan.cutoff = cutoff;
    distill::A2DConfig a2d;

    std::vector<double> base_mse, base_high, dist_mse, dist_high;
    std::string rows = "seed,run,mse,high_band_err\n";
    for (uint64_t seed : {42ull, 43ull, 44ull}) {
        train::TrainConfig tc;
        tc.epochs = 50;
        tc.lr = 1e-3;
        tc.batch_size = 8;
        tc.seed = seed;
        tc.early_stop_patience = 20;
        tc.deterministic = true;
        nn::ModelSpec sspec =
            nn::ModelSpec::student_default(nn::ModelKind::unet, 10, 10, 1, tspec.hidden);

        nn::Model base(sspec, seed);
        train::RunRecord rb =
            train::pretrain_teacher(base, ds, tc, dir / ("base_" + std::to_string(seed)));
        nn::load_into_model(base, nn::load_checkpoint(rb.best_checkpoint));
        eval::MetricReport mb = eval::evaluate_model(base, ds, data::Split::test, cutoff);

        nn::Model dist(sspec, seed);
        train::RunRecord rd = train::distill_student(
            dist, {&teacher}, ds, plan, a2d, tc, dir / ("dist_" + std::to_string(seed)));
        nn::load_into_model(dist, nn::load_checkpoint(rd.best_checkpoint));
        eval::MetricReport md = eval::evaluate_model(dist, ds, data::Split::test, cutoff);

        base_mse.push_back(mb.mse);
        base_high.push_back(mb.high_band_err);
        dist_mse.push_back(md.mse);
        dist_high.push_back(md.high_band_err);
        rows += std::to_string(seed) + ",baseline," + fmt("%.17g", mb.mse) + "," +
                fmt("%.17g", mb.high_band_err) + "\n";
        rows += std::to_string(seed) + ",distilled," + fmt("%.17g", md.mse) + "," +
                fmt("%.17g", md.high_band_err) + "\n";
    }
    io::write_text_file(dir / "trend.csv", rows);

    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    const double bm = median(base_mse), bh = median(base_high);
    const double dm = median(dist_mse), dh = median(dist_high);
    const double wall = timer.seconds();
    detail = "median mse " + fmt("%.4f", dm) + " (baseline " + fmt("%.4f", bm) +
             "), median high-band " + fmt("%.2f", dh) + " (baseline " + fmt("%.2f", bh) + "), " +
             fmt("%.0f", wall) + " s";
    if (wall >= 45.0 * 60.0) {
        detail += " — exceeds the 45 min budget";
        return false;
    }
    return dm <= bm && dh < bh;
}

// ---------------------------------------------------------------------------
// 6. Efficiency
// ---------------------------------------------------------------------------

bool criterion_efficiency(std::string& detail) {
    nn::ModelSpec tspec = nn::ModelSpec::teacher_default(nn::ModelKind::st_alternet, 10, 10, 1);
    nn::ModelSpec sspec = nn::ModelSpec::student_default(nn::ModelKind::unet, 10, 10, 1,
                                                         tspec.hidden);
    nn::Model teacher(tspec, 42), student(sspec, 42);
    const std::vector<int> shape{1, 10, 32, 32};

    const int64_t tf = nn::count_flops(teacher, shape);
    const int64_t sf = nn::count_flops(student, shape);
    const int64_t tp = nn::count_params(teacher);
    const int64_t sp = nn::count_params(student);
    const double param_ratio = static_cast<double>(sp) / static_cast<double>(tp);

    std::vector<const nn::Model*> models{&teacher, &student};
    auto timing = eval::bench_inference(models, {"teacher", "student"}, shape, 30, 5, 5);
    const double speedup = timing[1].speedup_vs_first;

    detail = "flops " + std::to_string(sf) + "/" + std::to_string(tf) + " = " +
             fmt("%.3f", static_cast<double>(sf) / static_cast<double>(tf)) + ", params ratio " +
             fmt("%.3f", param_ratio) + ", measured speedup " + fmt("%.2f", speedup) + "x";
    return 2 * sf <= tf && speedup >= 1.5 && param_ratio >= 0.05 && param_ratio <= 0.35;
}

// ---------------------------------------------------------------------------
// 7. Complexity formulas
// ---------------------------------------------------------------------------

bool criterion_formulas(std::string& detail) {
    Rng rng(909);
    for (int trial = 0; trial < 5; ++trial) {
        const int64_t n = 2 + static_cast<int64_t>(rng.integer(100));
        const int d = 1 + static_cast<int>(rng.integer(64));
        const int k = 1 + 2 * static_cast<int>(rng.integer(4));
        const nn::LayerCost att = nn::attention_layer_cost(n, d);
        if (att.flops != n * n * d + 3 * n * d * d || att.params != 3LL * d * d) {
            detail = "attention formula mismatch at N=" + std::to_string(n) +
                     " d=" + std::to_string(d);
            return false;
        }
        const nn::LayerCost conv = nn::conv_layer_cost(k, d, d, n);
        if (conv.flops != static_cast<int64_t>(k) * k * d * d * n ||
            conv.params != static_cast<int64_t>(k) * k * d * d + d) {
            detail = "conv formula mismatch at K=" + std::to_string(k) +
                     " d=" + std::to_string(d) + " N=" + std::to_string(n);
            return false;
        }
    }
    detail = "attention N^2 d + 3 N d^2 / 3 d^2 and conv K^2 d^2 N / K^2 d^2 + d exact on 5 "
             "random triples each";
    return true;
}

// ---------------------------------------------------------------------------
// 8. Determinism
// ---------------------------------------------------------------------------

bool criterion_determinism(std::string& detail) {
    if (g_cli_path.empty()) {
        detail = "no --cli path given";
        return false;
    }
    const fs::path dir = g_work / "determinism";
    fs::create_directories(dir);
    const fs::path cfg_path = dir / "config.json";
    io::write_text_file(cfg_path, R"({
  "dataset": {"kind": "ns", "n_sequences": 12, "t_frames": 12, "input_len": 4, "horizon": 4,
              "h": 32, "w": 32, "seed": 42},
  "teacher": {"kind": "st_alternet", "hidden": 16, "depth": 1, "heads": 2, "n_down": 1},
  "student": {"kind": "unet", "hidden": 4},
  "train": {"epochs": 2, "lr": 1e-3, "batch_size": 4, "seed": 42, "early_stop_patience": 1,
            "deterministic": true},
  "distill": {"lambda": 3e-4, "alpha_kd": 0.25, "mode": "single"}
}
)");

    auto run_pipeline = [&](const fs::path& root) -> bool {
        fs::create_directories(root);
        auto sh = [&](const std::string& args) {
            const std::string cmd = g_cli_path + " " + args + " >> " +
                                    (root / "log.txt").string() + " 2>&1";
            return std::system(cmd.c_str()) == 0;
        };
        const std::string cfg = " --config " + cfg_path.string();
        return sh("gen-data" + cfg + " --out-dir " + (root / "data").string()) &&
               sh("train-teacher" + cfg + " --data " + (root / "data").string() + " --out-dir " +
                  (root / "teacher").string()) &&
               sh("distill" + cfg + " --data " + (root / "data").string() + " --teacher " +
                  (root / "teacher/checkpoints/best").string() + " --out-dir " +
                  (root / "student").string()) &&
               sh("eval" + cfg + " --data " + (root / "data").string() + " --ckpt " +
                  (root / "student/checkpoints/best").string() + " --out-dir " +
                  (root / "eval").string()) &&
               sh("spectra" + cfg + " --data " + (root / "data").string() + " --ckpt " +
                  (root / "student/checkpoints/best").string() + " --out-dir " +
                  (root / "spectra").string());
    };

    if (!run_pipeline(dir / "run_a") || !run_pipeline(dir / "run_b")) {
        detail = "pipeline run failed (see " + (dir / "run_a/log.txt").string() + ")";
        return false;
    }
    const char* artifacts[] = {"data/manifest.json", "eval/metrics.csv", "spectra/spectra.csv"};
    for (const char* rel : artifacts) {
        const std::string a = io::read_text_file(dir / "run_a" / rel);
        const std::string b = io::read_text_file(dir / "run_b" / rel);
        if (a != b) {
            detail = std::string(rel) + " differs between runs";
            return false;
        }
    }
    detail = "dataset checksums, metrics.csv and spectra.csv byte-identical across two runs";
    return true;
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--cli" && i + 1 < argc) g_cli_path = argv[++i];
        if (arg == "--criterion" && i + 1 < argc) selected.insert(std::atoi(argv[++i]));
    }
    g_work = fs::temp_directory_path() / "sdkd_acceptance";
    fs::create_directories(g_work);

    struct Criterion {
        int id;
        const char* title;
        std::function<bool(std::string&)> run;
    };
    const std::vector<Criterion> criteria{
        {1, "A2D solver matches grid/closed-form oracles", criterion_qp},
        {2, "band split and Plancherel identities exact to 1e-10", criterion_spectral},
        {3, "finite-difference gradient checks (layers, losses, models)", criterion_gradients},
        {4, "Taylor-Green decay and viscous energy monotonicity", criterion_pde},
        {5, "distilled U-Net beats its baseline (median of 3 seeds)", criterion_trend},
        {6, "student/teacher FLOPs, params and measured speedup", criterion_efficiency},
        {7, "per-layer complexity formulas exact", criterion_formulas},
        {8, "two seed-42 pipeline runs byte-identical", criterion_determinism},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        std::printf("[%s] criterion %d: %s — %s\n", ok ? "PASS" : "FAIL", c.id, c.title,
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    return failures == 0 ? 0 : 1;
}
