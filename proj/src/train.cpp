#include "sdkd/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"
#include "sdkd/checkpoint.hpp"
#include "sdkd/io.hpp"

namespace sdkd::train {

using data::Dataset;
using data::ForecastTask;
using data::Split;
using distill::A2DConfig;
using distill::DistillPlan;
using nn::Graph;
using nn::Model;
using nn::ParameterSet;
using nn::Var;
using nlohmann::json;

void TrainConfig::validate() const {
    if (lr <= 0.0) throw std::invalid_argument("train: lr must be > 0");
    if (epochs < 1 || batch_size < 1) throw std::invalid_argument("train: bad epochs/batch_size");
    if (early_stop_patience >= epochs)
        throw std::invalid_argument("train: patience must be < epochs");
}

// ===========================================================================
// Optimizer
// ===========================================================================

void Optimizer::step(ParameterSet& params, const std::map<std::string, Tensor>& grads) {
    ++step_count_;
    for (const auto& [name, grad] : grads) {
        Tensor& theta = params.at(name);
        if (!theta.same_shape(grad))
            throw std::invalid_argument("optimizer: gradient shape mismatch for " + name);
        if (cfg_.optimizer == OptimizerKind::sgd) {
            for (int64_t i = 0; i < theta.numel(); ++i) theta[i] -= cfg_.lr * grad[i];
            continue;
        }
        Tensor& m = m_.try_emplace(name, Tensor::zeros_like(theta)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros_like(theta)).first->second;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
        for (int64_t i = 0; i < theta.numel(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        }
    }
}

std::vector<std::pair<std::string, Tensor>> Optimizer::state_tensors() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : m_) out.emplace_back("opt/m/" + name, t);
    for (const auto& [name, t] : v_) out.emplace_back("opt/v/" + name, t);
    return out;
}

void Optimizer::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                           int64_t step_count) {
    step_count_ = step_count;
    m_.clear();
    v_.clear();
    for (const auto& [name, t] : tensors) {
        if (name.rfind("opt/m/", 0) == 0) m_[name.substr(6)] = t;
        if (name.rfind("opt/v/", 0) == 0) v_[name.substr(6)] = t;
    }
}

// ===========================================================================
// Batching and evaluation
// ===========================================================================

void assemble_batch(const std::vector<ForecastTask>& tasks, const std::vector<int>& order,
                    size_t first, size_t count, Tensor& x, Tensor& y) {
    const ForecastTask& t0 = tasks[static_cast<size_t>(order[first])];
    const int c = t0.sequence->c(), h = t0.sequence->h(), w = t0.sequence->w();
    x = Tensor({static_cast<int>(count), t0.input_len * c, h, w});
    y = Tensor({static_cast<int>(count), t0.horizon * c, h, w});
    const int64_t xs = x.numel() / static_cast<int64_t>(count);
    const int64_t ys = y.numel() / static_cast<int64_t>(count);
    for (size_t b = 0; b < count; ++b) {
        const ForecastTask& task = tasks[static_cast<size_t>(order[first + b])];
        Tensor in = task.input(), out = task.target();
        for (int64_t i = 0; i < xs; ++i) x[static_cast<int64_t>(b) * xs + i] = in[i];
        for (int64_t i = 0; i < ys; ++i) y[static_cast<int64_t>(b) * ys + i] = out[i];
    }
}

double evaluate_task_loss(const Model& model, const Dataset& ds, Split split, int batch_size) {
    const auto tasks = ds.tasks(split);
    if (tasks.empty()) throw std::invalid_argument("evaluate: empty split");
    std::vector<int> order(tasks.size());
    for (size_t i = 0; i < tasks.size(); ++i) order[i] = static_cast<int>(i);
    double se = 0.0;
    int64_t n = 0;
    for (size_t first = 0; first < tasks.size(); first += static_cast<size_t>(batch_size)) {
        const size_t count = std::min(tasks.size() - first, static_cast<size_t>(batch_size));
        Tensor x, y;
        assemble_batch(tasks, order, first, count, x, y);
        Tensor pred = model.forward(x);
        for (int64_t i = 0; i < y.numel(); ++i) {
            const double r = pred[i] - y[i];
            se += r * r;
        }
        n += y.numel();
    }
    return se / static_cast<double>(n);
}

// ===========================================================================
// Shared training loop
// ===========================================================================

namespace {

constexpr uint64_t kBatchSalt = 0x62617463;  // "batc"

std::map<std::string, Tensor> collect_grads(Graph& g,
                                            const std::vector<std::pair<std::string, Var>>& vars) {
    std::map<std::string, Tensor> grads;
    for (const auto& [name, var] : vars) grads[name] = g.grad(var);
    return grads;
}

void apply_branch_mask(std::map<std::string, Tensor>& grads, int epoch) {
    const bool attn_phase = (epoch % 2) == 1;
    for (auto& [name, g] : grads) {
        const bool is_attn = name.find(".attn.") != std::string::npos;
        if (is_attn != attn_phase) g.fill(0.0);
    }
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct LoopConfig {
    Model& model;
    const Dataset& ds;
    TrainConfig cfg;
    std::filesystem::path run_dir;
    // distillation-only pieces; teachers empty means plain supervised training
    std::vector<const Model*> teachers;
    const DistillPlan* plan = nullptr;
    const A2DConfig* a2d = nullptr;
};

void save_train_state(const LoopConfig& lc, Optimizer& opt, int epoch, double best_val,
                      int best_epoch, int since_best) {
    nn::Checkpoint last = nn::checkpoint_of_model(lc.model);
    for (auto& [name, t] : opt.state_tensors()) last.tensors.emplace_back(name, std::move(t));
    last.extra_json = json{{"epoch", epoch},
                           {"opt_steps", opt.step_count()},
                           {"best_val", best_val},
                           {"best_epoch", best_epoch},
                           {"since_best", since_best}}
                          .dump();
    nn::save_checkpoint(lc.run_dir / "checkpoints" / "last", last);
}

RunRecord run_training(LoopConfig& lc) {
    lc.cfg.validate();
    const bool distilling = lc.plan != nullptr && lc.plan->lambda > 0.0 && !lc.teachers.empty();
    if (lc.plan) lc.plan->validate(static_cast<int>(lc.teachers.size()));
    if (lc.a2d && lc.plan && lc.plan->mode == distill::DistillMode::aekd && distilling)
        lc.a2d->validate(static_cast<int>(lc.teachers.size()));

    std::filesystem::create_directories(lc.run_dir / "checkpoints");
    const auto tasks = lc.ds.tasks(Split::train);
    if (tasks.empty()) throw std::invalid_argument("train: empty train split");

    Optimizer opt(lc.cfg);
    int start_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = -1, since_best = 0;

    const auto last_dir = lc.run_dir / "checkpoints" / "last";
    if (lc.cfg.resume && std::filesystem::exists(last_dir / "manifest.json")) {
        nn::Checkpoint last = nn::load_checkpoint(last_dir);
        nn::load_into_model(lc.model, last);
        json extra = json::parse(last.extra_json);
        opt.load_state(last.tensors, extra.at("opt_steps").get<int64_t>());
        start_epoch = extra.at("epoch").get<int>() + 1;
        best_val = extra.at("best_val").get<double>();
        best_epoch = extra.at("best_epoch").get<int>();
        since_best = extra.at("since_best").get<int>();
    }

    // Teachers are frozen: tap features per training sample are computed once
    // up front and gathered per batch.
    std::vector<std::vector<Tensor>> tap_cache;  // [teacher][sample]
    if (distilling) {
        std::vector<int> order(tasks.size());
        for (size_t i = 0; i < tasks.size(); ++i) order[i] = static_cast<int>(i);
        tap_cache.resize(lc.teachers.size());
        for (size_t first = 0; first < tasks.size(); first += static_cast<size_t>(lc.cfg.batch_size)) {
            const size_t count = std::min(tasks.size() - first, static_cast<size_t>(lc.cfg.batch_size));
            Tensor x, y;
            assemble_batch(tasks, order, first, count, x, y);
            const distill::TeacherFeatures tf = distill::teacher_features(lc.teachers, x, *lc.plan);
            for (size_t m = 0; m < lc.teachers.size(); ++m) {
                const Tensor& tap = tf.taps[m];
                const int64_t per = tap.numel() / static_cast<int64_t>(count);
                std::vector<int> shape = tap.shape();
                shape[0] = 1;
                for (size_t b = 0; b < count; ++b) {
                    Tensor one(shape);
                    for (int64_t i = 0; i < per; ++i) one[i] = tap[static_cast<int64_t>(b) * per + i];
                    tap_cache[m].push_back(std::move(one));
                }
            }
        }
    }

    auto gather_taps = [&](const std::vector<int>& order, size_t first,
                           size_t count) -> std::vector<Tensor> {
        std::vector<Tensor> taps;
        for (size_t m = 0; m < lc.teachers.size(); ++m) {
            std::vector<int> shape = tap_cache[m][0].shape();
            shape[0] = static_cast<int>(count);
            Tensor t(shape);
            const int64_t per = t.numel() / static_cast<int64_t>(count);
            for (size_t b = 0; b < count; ++b) {
                const Tensor& one = tap_cache[m][static_cast<size_t>(order[first + b])];
                for (int64_t i = 0; i < per; ++i) t[static_cast<int64_t>(b) * per + i] = one[i];
            }
            taps.push_back(std::move(t));
        }
        return taps;
    };

    // metrics.csv: truncate on fresh runs, append on resume
    const auto metrics_path = lc.run_dir / "metrics.csv";
    std::ofstream metrics(metrics_path,
                          start_epoch > 0 ? std::ios::app : std::ios::trunc);
    if (start_epoch == 0) metrics << "epoch,train_loss,val_loss,task_term,kd_term,wall_s\n";

    std::ofstream a2d_csv;
    const bool aekd = distilling && lc.plan->mode == distill::DistillMode::aekd;
    if (aekd) {
        a2d_csv.open(lc.run_dir / "a2d.csv", start_epoch > 0 ? std::ios::app : std::ios::trunc);
        if (start_epoch == 0) {
            a2d_csv << "step";
            for (size_t m = 0; m < lc.teachers.size(); ++m) a2d_csv << ",loss_" << m;
            for (size_t m = 0; m < lc.teachers.size(); ++m) a2d_csv << ",alpha_" << m;
            a2d_csv << ",d_norm\n";
        }
    }

    RunRecord rec;
    rec.best_val_loss = best_val;
    rec.best_epoch = best_epoch;
    int64_t global_step = opt.step_count();

    for (int epoch = start_epoch; epoch < lc.cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng = Rng::derive(lc.cfg.seed, kBatchSalt, static_cast<uint64_t>(epoch));
        const std::vector<int> order = rng.permutation(static_cast<int>(tasks.size()));

        double sum_total = 0.0, sum_task = 0.0, sum_kd = 0.0;
        int64_t n_samples = 0;
        for (size_t first = 0; first < tasks.size(); first += static_cast<size_t>(lc.cfg.batch_size)) {
            const size_t count = std::min(tasks.size() - first, static_cast<size_t>(lc.cfg.batch_size));
            Tensor x, y;
            assemble_batch(tasks, order, first, count, x, y);

            double batch_total = 0.0, batch_task = 0.0, batch_kd = 0.0;
            if (!distilling) {
                Graph g;
                auto bound = lc.model.build(g, g.input(x), true);
                Var loss = distill::task_loss_op(g, bound.output, y);
                batch_total = batch_task = g.value(loss)[0];
                g.backward(loss);
                auto grads = collect_grads(g, bound.params);
                if (lc.cfg.alternate_branches) apply_branch_mask(grads, epoch);
                opt.step(lc.model.params(), grads);
            } else if (!aekd) {
                const std::vector<Tensor> taps = gather_taps(order, first, count);
                Graph g;
                auto dg = distill::build_distill_graph(g, lc.model, x, y, taps, *lc.plan);
                Var loss = dg.totals[0];
                batch_total = g.value(loss)[0];
                batch_task = g.value(dg.task)[0];
                batch_kd = dg.kd_terms.empty() ? 0.0 : g.value(dg.kd_terms[0])[0];
                g.backward(loss);
                opt.step(lc.model.params(), collect_grads(g, dg.trainables));
            } else {
                const std::vector<Tensor> taps = gather_taps(order, first, count);
                A2DStepDiagnostics diag =
                    a2d_step(lc.model, taps, x, y, *lc.plan, *lc.a2d, opt);
                batch_task = diag.task;
                batch_kd = diag.kd_mean;
                batch_total = diag.task + lc.plan->lambda * diag.kd_mean;
                ++global_step;
                a2d_csv << global_step;
                for (double l : diag.teacher_losses) a2d_csv << ',' << format_double(l);
                for (double a : diag.alpha) a2d_csv << ',' << format_double(a);
                a2d_csv << ',' << format_double(diag.direction_norm) << '\n';
            }

            if (!std::isfinite(batch_total)) {
                save_train_state(lc, opt, epoch, best_val, best_epoch, since_best);
                throw std::runtime_error(
                    "train: non-finite loss at epoch " + std::to_string(epoch) +
                    " (task=" + std::to_string(batch_task) + ", kd=" + std::to_string(batch_kd) +
                    "); last checkpoint retained at " + last_dir.string());
            }
            sum_total += batch_total * static_cast<double>(count);
            sum_task += batch_task * static_cast<double>(count);
            sum_kd += batch_kd * static_cast<double>(count);
            n_samples += static_cast<int64_t>(count);
        }

        EpochRecord er;
        er.epoch = epoch;
        er.train_loss = sum_total / static_cast<double>(n_samples);
        er.task_term = sum_task / static_cast<double>(n_samples);
        er.kd_term = sum_kd / static_cast<double>(n_samples);
        er.val_loss = evaluate_task_loss(lc.model, lc.ds, Split::eval, lc.cfg.batch_size);
        const auto t1 = std::chrono::steady_clock::now();
        er.wall_s = lc.cfg.deterministic
                        ? 0.0
                        : std::chrono::duration<double>(t1 - t0).count();
        rec.epochs.push_back(er);

        if (er.val_loss < best_val) {
            best_val = er.val_loss;
            best_epoch = epoch;
            since_best = 0;
            nn::Checkpoint best = nn::checkpoint_of_model(lc.model);
            best.extra_json = json{{"epoch", epoch}, {"val_loss", best_val}}.dump();
            nn::save_checkpoint(lc.run_dir / "checkpoints" / "best", best);
        } else {
            ++since_best;
        }

        metrics << epoch << ',' << format_double(er.train_loss) << ','
                << format_double(er.val_loss) << ',' << format_double(er.task_term) << ','
                << format_double(er.kd_term) << ',' << format_double(er.wall_s) << '\n';
        metrics.flush();
        save_train_state(lc, opt, epoch, best_val, best_epoch, since_best);

        if (since_best >= lc.cfg.early_stop_patience) {
            rec.early_stopped = true;
            break;
        }
    }

    rec.best_epoch = best_epoch;
    rec.best_val_loss = best_val;
    rec.best_checkpoint = lc.run_dir / "checkpoints" / "best";
    return rec;
}

}  // namespace

// ===========================================================================
// Public entry points
// ===========================================================================

RunRecord pretrain_teacher(Model& model, const Dataset& ds, const TrainConfig& cfg,
                           const std::filesystem::path& run_dir) {
    LoopConfig lc{model, ds, cfg, run_dir, {}, nullptr, nullptr};
    return run_training(lc);
}

RunRecord distill_student(Model& student, const std::vector<const Model*>& teachers,
                          const Dataset& ds, const DistillPlan& plan, const A2DConfig& a2d,
                          const TrainConfig& cfg, const std::filesystem::path& run_dir) {
    plan.validate(static_cast<int>(teachers.size()));
    if (!ds.split(Split::train).empty() && plan.lambda > 0.0 && !teachers.empty()) {
        const auto& seq = ds.split(Split::train)[0];
        distill::ensure_projection_head(student, teachers, seq.h(), seq.w(), plan, cfg.seed);
    }
    LoopConfig lc{student, ds, cfg, run_dir, teachers, &plan, &a2d};
    return run_training(lc);
}

A2DStepDiagnostics a2d_step(Model& student, const std::vector<Tensor>& teacher_taps,
                            const Tensor& x, const Tensor& y, const DistillPlan& plan,
                            const A2DConfig& a2d, Optimizer& opt) {
    Graph g;
    auto dg = distill::build_distill_graph(g, student, x, y, teacher_taps, plan);
    const size_t m = dg.totals.size();

    A2DStepDiagnostics diag;
    diag.task = g.value(dg.task)[0];
    // exactly M backward passes, one per teacher loss
    std::vector<std::vector<double>> flat(m);
    std::vector<std::map<std::string, Tensor>> per_teacher(m);
    for (size_t i = 0; i < m; ++i) {
        diag.teacher_losses.push_back(g.value(dg.totals[i])[0]);
        if (!dg.kd_terms.empty()) diag.kd_mean += g.value(dg.kd_terms[i])[0];
        g.backward(dg.totals[i]);
        per_teacher[i] = collect_grads(g, dg.trainables);
        for (const auto& [name, var] : dg.trainables) {
            const Tensor& t = per_teacher[i][name];
            for (int64_t j = 0; j < t.numel(); ++j) flat[i].push_back(t[j]);
        }
    }
    if (!dg.kd_terms.empty()) diag.kd_mean /= static_cast<double>(m);

    distill::GradientBundle bundle = distill::combine_gradients(flat, a2d);
    diag.alpha = bundle.alpha;
    diag.direction_norm = bundle.direction_norm;

    // the convex combination replaces the raw gradient fed to the optimizer
    std::map<std::string, Tensor> combined;
    for (const auto& [name, var] : dg.trainables) {
        Tensor c = Tensor::zeros_like(per_teacher[0][name]);
        for (size_t i = 0; i < m; ++i) {
            const Tensor& t = per_teacher[i][name];
            for (int64_t j = 0; j < c.numel(); ++j) c[j] += bundle.alpha[i] * t[j];
        }
        combined[name] = std::move(c);
    }
    opt.step(student.params(), combined);
    return diag;
}

}  // namespace sdkd::train
