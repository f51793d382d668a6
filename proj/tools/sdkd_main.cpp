// sdkd: synthetic data generation, teacher/student training, spectral
// distillation, evaluation, spectra reports and inference benchmarks.
//
// Every subcommand reads an optional JSON config plus flag overrides and
// exits 0 on success, nonzero with a one-line machine-parseable error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sdkd/checkpoint.hpp"
#include "sdkd/dataset.hpp"
#include "sdkd/distill.hpp"
#include "sdkd/io.hpp"
#include "sdkd/metrics.hpp"
#include "sdkd/models.hpp"
#include "sdkd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sdkd;

namespace {

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    if (!fs::exists(path)) throw std::runtime_error("missing config file: " + path);
    return json::parse(io::read_text_file(path));
}

json section(const json& cfg, const char* name) {
    return cfg.contains(name) ? cfg.at(name) : json::object();
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

data::NsConfig ns_config_from(const json& d) {
    data::NsConfig cfg;
    cfg.h = get_or(d, "h", cfg.h);
    cfg.w = get_or(d, "w", cfg.w);
    cfg.viscosity = get_or(d, "viscosity", cfg.viscosity);
    cfg.forcing_amplitude = get_or(d, "forcing_amplitude", cfg.forcing_amplitude);
    cfg.forcing_wavenumber = get_or(d, "forcing_wavenumber", cfg.forcing_wavenumber);
    cfg.dt = get_or(d, "dt", cfg.dt);
    cfg.steps_per_frame = get_or(d, "steps_per_frame", cfg.steps_per_frame);
    cfg.seed = get_or(d, "seed", cfg.seed);
    return cfg;
}

train::TrainConfig train_config_from(const json& t) {
    train::TrainConfig cfg;
    cfg.epochs = get_or(t, "epochs", cfg.epochs);
    cfg.lr = get_or(t, "lr", cfg.lr);
    cfg.batch_size = get_or(t, "batch_size", cfg.batch_size);
    cfg.seed = get_or(t, "seed", cfg.seed);
    cfg.early_stop_patience = get_or(t, "early_stop_patience", cfg.early_stop_patience);
    cfg.optimizer = get_or<std::string>(t, "optimizer", "adam") == "sgd"
                        ? train::OptimizerKind::sgd
                        : train::OptimizerKind::adam;
    cfg.beta1 = get_or(t, "beta1", cfg.beta1);
    cfg.beta2 = get_or(t, "beta2", cfg.beta2);
    cfg.adam_eps = get_or(t, "adam_eps", cfg.adam_eps);
    cfg.deterministic = get_or(t, "deterministic", cfg.deterministic);
    cfg.alternate_branches = get_or(t, "alternate_branches", cfg.alternate_branches);
    return cfg;
}

distill::DistillPlan plan_from(const json& d) {
    distill::DistillPlan plan;
    plan.lambda = get_or(d, "lambda", plan.lambda);
    plan.alpha_kd = get_or(d, "alpha_kd", plan.alpha_kd);
    plan.cutoff = get_or(d, "cutoff", plan.cutoff);
    plan.ab_margin = get_or(d, "ab_margin", plan.ab_margin);
    const std::string variant = get_or<std::string>(d, "loss_variant", "mse_feature");
    if (variant == "ab")
        plan.loss_variant = distill::LossVariant::ab;
    else if (variant == "mse_feature")
        plan.loss_variant = distill::LossVariant::mse_feature;
    else
        throw std::runtime_error("unknown loss_variant: " + variant);
    const std::string tap = get_or<std::string>(d, "tap", "output");
    if (tap == "latent")
        plan.tap = distill::TapPoint::latent;
    else if (tap == "output")
        plan.tap = distill::TapPoint::output;
    else
        throw std::runtime_error("unknown tap: " + tap);
    const std::string mode = get_or<std::string>(d, "mode", "single");
    if (mode == "single")
        plan.mode = distill::DistillMode::single;
    else if (mode == "aver_mkd")
        plan.mode = distill::DistillMode::aver_mkd;
    else if (mode == "aekd")
        plan.mode = distill::DistillMode::aekd;
    else
        throw std::runtime_error("unknown distill mode: " + mode);
    return plan;
}

distill::A2DConfig a2d_from(const json& d) {
    distill::A2DConfig cfg;
    const json a = d.contains("a2d") ? d.at("a2d") : json::object();
    cfg.cap = get_or(a, "cap", cfg.cap);
    cfg.lr = get_or(a, "lr", cfg.lr);
    cfg.tolerance = get_or(a, "tolerance", cfg.tolerance);
    cfg.max_iterations = get_or(a, "max_iterations", cfg.max_iterations);
    return cfg;
}

// model spec from a config section plus the dataset's task geometry
nn::ModelSpec model_spec_from(const json& m, const data::DatasetManifest& man,
                              const std::string& default_kind, int default_hidden) {
    nn::ModelSpec s;
    s.kind = nn::kind_from_name(get_or<std::string>(m, "kind", default_kind));
    s.in_frames = man.input_len;
    s.out_frames = man.horizon;
    s.channels = man.c;
    s.grid_h = man.h;
    s.grid_w = man.w;
    s.hidden = get_or(m, "hidden", default_hidden);
    s.depth = get_or(m, "depth", nn::is_teacher_kind(s.kind) ? 4 : (s.kind == nn::ModelKind::resnet ? 3 : 2));
    s.kernel = get_or(m, "kernel", 3);
    s.heads = get_or(m, "heads", nn::is_teacher_kind(s.kind) ? 4 : 1);
    s.n_down = get_or(m, "n_down", s.kind == nn::ModelKind::st_alternet ? 1 : 2);
    return s;
}

nn::Model load_model(const fs::path& ckpt_dir) {
    nn::Checkpoint ck = nn::load_checkpoint(ckpt_dir);
    nn::Model model(ck.spec, 0);
    nn::load_into_model(model, ck);
    return model;
}

void write_config_snapshot(const fs::path& out_dir, const json& cfg) {
    fs::create_directories(out_dir);
    io::write_text_file(out_dir / "config.json", cfg.dump(2) + "\n");
}

double cutoff_from(const json& eval_cfg, const data::DatasetManifest& man) {
    const double c = get_or(eval_cfg, "cutoff", -1.0);
    return c >= 0.0 ? c : spectral::SpectralConfig::default_cutoff(man.h, man.w);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spectral decoupled knowledge distillation laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, data_dir, kind_override;
    std::vector<std::string> ckpt_dirs;
    int64_t seed_override = -1;
    int epochs_override = -1;
    std::string mode_override;
    double lambda_override = -1.0;
    bool deterministic = false;
    bool resume = false;

    auto add_common = [&](CLI::App* cmd, bool needs_data) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--out-dir", out_dir, "output directory")->required();
        cmd->add_option("--seed", seed_override, "seed override");
        if (needs_data) cmd->add_option("--data", data_dir, "dataset directory")->required();
    };

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, false);
    gen->add_option("--kind", kind_override, "ns | wave");

    auto* tt = app.add_subcommand("train-teacher", "pretrain a teacher on the task loss");
    add_common(tt, true);
    tt->add_option("--kind", kind_override, "st_alternet | simvp");
    tt->add_option("--epochs", epochs_override, "epoch override");
    tt->add_flag("--deterministic", deterministic, "zero wall-clock fields in metrics");
    tt->add_flag("--resume", resume, "resume from checkpoints/last");

    auto* ts = app.add_subcommand("train-student", "train an undistilled student baseline");
    add_common(ts, true);
    ts->add_option("--kind", kind_override, "unet | resnet | mlp_mixer");
    ts->add_option("--epochs", epochs_override, "epoch override");
    ts->add_flag("--deterministic", deterministic, "zero wall-clock fields in metrics");
    ts->add_flag("--resume", resume, "resume from checkpoints/last");

    auto* di = app.add_subcommand("distill", "distill a student from frozen teachers");
    add_common(di, true);
    di->add_option("--teacher", ckpt_dirs, "teacher checkpoint dir (repeatable)")->required();
    di->add_option("--kind", kind_override, "student kind");
    di->add_option("--mode", mode_override, "single | aver_mkd | aekd");
    di->add_option("--epochs", epochs_override, "epoch override");
    di->add_option("--lambda", lambda_override, "distillation weight override");
    di->add_flag("--deterministic", deterministic, "zero wall-clock fields in metrics");
    di->add_flag("--resume", resume, "resume from checkpoints/last");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(ev, true);
    ev->add_option("--ckpt", ckpt_dirs, "checkpoint dir")->required();

    auto* sp = app.add_subcommand("spectra", "per-band errors and radial spectra");
    add_common(sp, true);
    sp->add_option("--ckpt", ckpt_dirs, "checkpoint dir (repeatable)")->required();

    auto* be = app.add_subcommand("bench", "inference timing and complexity");
    add_common(be, true);
    be->add_option("--ckpt", ckpt_dirs, "checkpoint dir (repeatable; first is the reference)")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg = load_config(config_path);
        if (seed_override >= 0) {
            cfg["dataset"]["seed"] = seed_override;
            cfg["train"]["seed"] = seed_override;
        }
        if (epochs_override > 0) cfg["train"]["epochs"] = epochs_override;
        if (deterministic) cfg["train"]["deterministic"] = true;
        if (lambda_override >= 0.0) cfg["distill"]["lambda"] = lambda_override;
        if (!mode_override.empty()) cfg["distill"]["mode"] = mode_override;

        if (gen->parsed()) {
            const json d = section(cfg, "dataset");
            const std::string kind =
                !kind_override.empty() ? kind_override : get_or<std::string>(d, "kind", "ns");
            const int n = get_or(d, "n_sequences", 12);
            const int t = get_or(d, "t_frames", 20);
            const int il = get_or(d, "input_len", 10);
            const int hz = get_or(d, "horizon", 10);
            data::SplitCounts splits;
            splits.train = get_or(d, "n_train", -1);
            splits.eval = get_or(d, "n_eval", -1);
            splits.test = get_or(d, "n_test", -1);
            write_config_snapshot(out_dir, cfg);
            if (kind == "ns") {
                data::generate_ns_dataset(ns_config_from(d), n, t, il, hz, out_dir, splits);
            } else if (kind == "wave") {
                std::vector<data::WaveMode> modes;
                for (const json& jm : d.contains("modes") ? d.at("modes") : json::array())
                    modes.push_back({jm.at(0).get<int>(), jm.at(1).get<int>(),
                                     jm.at(2).get<double>(), jm.at(3).get<double>(),
                                     jm.size() > 4 ? jm.at(4).get<double>() : 0.0});
                if (modes.empty()) modes = {{2, 1, 1.0, 0.7, 0.0}, {5, -3, 0.4, -0.3, 1.1}};
                data::generate_wave_dataset(n, t, modes, get_or(d, "h", 32), get_or(d, "w", 32),
                                            il, hz, out_dir, get_or(d, "dt", 1.0), splits);
            } else {
                throw std::runtime_error("unknown dataset kind: " + kind);
            }
            data::Dataset ds = data::load_dataset(out_dir);
            std::cout << "generated " << kind << " dataset: " << ds.manifest.n_train << "/"
                      << ds.manifest.n_eval << "/" << ds.manifest.n_test << " sequences at "
                      << ds.manifest.h << "x" << ds.manifest.w << "\n";
        } else if (tt->parsed() || ts->parsed()) {
            const bool teacher = tt->parsed();
            data::Dataset ds = data::load_dataset(data_dir);
            const json msec = section(cfg, teacher ? "teacher" : "student");
            const json tsec = section(cfg, "teacher");
            const int teacher_hidden = get_or(tsec, "hidden", 64);
            const std::string default_kind = teacher ? "st_alternet" : "unet";
            json m = msec;
            if (!kind_override.empty()) m["kind"] = kind_override;
            const int default_hidden =
                teacher ? 64 : static_cast<int>(std::lround(0.25 * teacher_hidden));
            nn::ModelSpec spec = model_spec_from(m, ds.manifest, default_kind, default_hidden);
            train::TrainConfig tc = train_config_from(section(cfg, "train"));
            tc.resume = resume;
            write_config_snapshot(out_dir, cfg);
            nn::Model model(spec, tc.seed);
            train::RunRecord rec = train::pretrain_teacher(model, ds, tc, out_dir);
            std::cout << "trained " << nn::kind_name(spec.kind) << ": best val "
                      << rec.best_val_loss << " at epoch " << rec.best_epoch << "\n";
        } else if (di->parsed()) {
            data::Dataset ds = data::load_dataset(data_dir);
            std::vector<nn::Model> teachers;
            for (const auto& dir : ckpt_dirs) teachers.push_back(load_model(dir));
            std::vector<const nn::Model*> teacher_ptrs;
            for (const auto& t : teachers) teacher_ptrs.push_back(&t);

            const json tsec = section(cfg, "teacher");
            json m = section(cfg, "student");
            if (!kind_override.empty()) m["kind"] = kind_override;
            const int default_hidden =
                static_cast<int>(std::lround(0.25 * get_or(tsec, "hidden", 64)));
            nn::ModelSpec spec = model_spec_from(m, ds.manifest, "unet", default_hidden);
            train::TrainConfig tc = train_config_from(section(cfg, "train"));
            tc.resume = resume;
            distill::DistillPlan plan = plan_from(section(cfg, "distill"));
            distill::A2DConfig a2d = a2d_from(section(cfg, "distill"));
            write_config_snapshot(out_dir, cfg);
            nn::Model student(spec, tc.seed);
            train::RunRecord rec =
                train::distill_student(student, teacher_ptrs, ds, plan, a2d, tc, out_dir);
            std::cout << "distilled " << nn::kind_name(spec.kind) << " from " << teachers.size()
                      << " teacher(s): best val " << rec.best_val_loss << " at epoch "
                      << rec.best_epoch << "\n";
        } else if (ev->parsed()) {
            data::Dataset ds = data::load_dataset(data_dir);
            nn::Model model = load_model(ckpt_dirs.at(0));
            const json esec = section(cfg, "eval");
            const double cutoff = cutoff_from(esec, ds.manifest);
            eval::MetricReport rep = eval::evaluate_model(model, ds, data::Split::test, cutoff,
                                                          get_or(esec, "batch_size", 8));
            fs::create_directories(out_dir);
            io::write_text_file(fs::path(out_dir) / "metrics.csv",
                                eval::metric_report_csv(rep, nn::kind_name(model.spec().kind)));
            std::cout << "eval " << nn::kind_name(model.spec().kind) << ": mse " << rep.mse
                      << " mae " << rep.mae << " ssim " << rep.ssim << "\n";
        } else if (sp->parsed()) {
            data::Dataset ds = data::load_dataset(data_dir);
            const json esec = section(cfg, "eval");
            const double cutoff = cutoff_from(esec, ds.manifest);
            fs::create_directories(out_dir);
            std::vector<std::pair<std::string, eval::SpectralReport>> reports;
            std::string spectra_csv = "model,shell,pred_energy,target_energy\n";
            for (size_t i = 0; i < ckpt_dirs.size(); ++i) {
                nn::Model model = load_model(ckpt_dirs[i]);
                const std::string name =
                    std::string(nn::kind_name(model.spec().kind)) + "_" + std::to_string(i);
                eval::SpectralReport rep = eval::spectral_report(
                    model, ds, data::Split::test, cutoff, get_or(esec, "batch_size", 8));
                for (size_t k = 0; k < rep.pred_spectrum.size(); ++k) {
                    char buf[96];
                    std::snprintf(buf, sizeof(buf), "%s,%zu,%.17g,%.17g\n", name.c_str(), k,
                                  rep.pred_spectrum[k], rep.target_spectrum[k]);
                    spectra_csv += buf;
                }
                reports.emplace_back(name, std::move(rep));
            }
            io::write_text_file(fs::path(out_dir) / "spectra.csv", spectra_csv);
            eval::write_band_errors_csv(fs::path(out_dir) / "band_errors.csv", reports);
            eval::write_spectra_svg(fs::path(out_dir) / "spectra.svg", reports);
            eval::write_band_errors_svg(fs::path(out_dir) / "band_errors.svg", reports);
            std::cout << "wrote spectra for " << reports.size() << " model(s)\n";
        } else if (be->parsed()) {
            data::Dataset ds = data::load_dataset(data_dir);
            const json bsec = section(cfg, "bench");
            std::vector<nn::Model> models;
            std::vector<std::string> names;
            for (size_t i = 0; i < ckpt_dirs.size(); ++i) {
                models.push_back(load_model(ckpt_dirs[i]));
                names.push_back(std::string(nn::kind_name(models.back().spec().kind)) + "_" +
                                std::to_string(i));
            }
            std::vector<const nn::Model*> ptrs;
            for (const auto& m : models) ptrs.push_back(&m);
            const std::vector<int> shape{1, ds.manifest.input_len * ds.manifest.c, ds.manifest.h,
                                         ds.manifest.w};
            auto reports = eval::bench_inference(ptrs, names, shape, get_or(bsec, "repeats", 30),
                                                 get_or(bsec, "warmup", 5), get_or(bsec, "groups", 5));
            fs::create_directories(out_dir);
            eval::write_timing_csv(fs::path(out_dir) / "timing.csv", reports);
            for (const auto& r : reports)
                std::cout << r.name << ": " << r.mean_forward_s << " s/forward, " << r.flops
                          << " flops, " << r.params << " params, speedup "
                          << r.speedup_vs_first << "x\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
