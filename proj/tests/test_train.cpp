// Training-loop contracts: descent, determinism, early stopping, resume,
// the lambda = 0 equivalence, and A2D step reductions.

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "sdkd/checkpoint.hpp"
#include "sdkd/dataset.hpp"
#include "sdkd/distill.hpp"
#include "sdkd/io.hpp"
#include "sdkd/train.hpp"
#include "test_harness.hpp"

using namespace sdkd;
using namespace sdkd::train;
using data::Dataset;
using data::Split;
using distill::DistillMode;
using distill::DistillPlan;
using nn::Model;
using nn::ModelKind;
using nn::ModelSpec;

namespace {

const auto kTmp = std::filesystem::temp_directory_path() / "sdkd_train_test";

Dataset make_wave_dataset(const std::filesystem::path& dir) {
    std::vector<data::WaveMode> modes{{1, 0, 1.0, 0.5, 0.0}, {3, 2, 0.5, -0.4, 0.7}};
    return data::generate_wave_dataset(12, 8, modes, 16, 16, 2, 2, dir);
}

ModelSpec student_spec() {
    ModelSpec s;
    s.kind = ModelKind::unet;
    s.in_frames = 2;
    s.out_frames = 2;
    s.channels = 1;
    s.hidden = 4;
    s.depth = 2;
    s.kernel = 3;
    s.grid_h = s.grid_w = 16;
    return s;
}

ModelSpec teacher_spec() {
    ModelSpec s = student_spec();
    s.kind = ModelKind::simvp;
    s.hidden = 16;
    s.depth = 2;
    return s;
}

TrainConfig fast_config(int epochs, uint64_t seed = 42) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.lr = 3e-3;
    cfg.batch_size = 4;
    cfg.seed = seed;
    cfg.early_stop_patience = std::max(0, epochs - 1);
    cfg.deterministic = true;
    return cfg;
}

std::vector<double> val_trace(const RunRecord& rec) {
    std::vector<double> out;
    for (const auto& e : rec.epochs) out.push_back(e.val_loss);
    return out;
}

void test_smoke_descent(const Dataset& ds) {
    testh::section("supervised training reduces the loss on a learnable toy");
    Model model(student_spec(), 42);
    const double initial = evaluate_task_loss(model, ds, Split::train, 4);
    RunRecord rec = pretrain_teacher(model, ds, fast_config(3), kTmp / "smoke");
    CHECK(rec.epochs.size() == 3);
    CHECK_MSG(rec.epochs.back().train_loss < initial,
              std::to_string(rec.epochs.back().train_loss) + " vs initial " +
                  std::to_string(initial));
    // best checkpoint reproduces the best validation loss
    CHECK(rec.best_val_loss <= rec.epochs.front().val_loss);
    Model reloaded(student_spec(), 7);
    nn::load_into_model(reloaded, nn::load_checkpoint(rec.best_checkpoint));
    CHECK_REL(evaluate_task_loss(reloaded, ds, Split::eval, 4), rec.best_val_loss, 1e-12);
}

void test_determinism(const Dataset& ds) {
    testh::section("fixed seed reproduces traces and metrics bytes");
    Model a(student_spec(), 42), b(student_spec(), 42);
    RunRecord ra = pretrain_teacher(a, ds, fast_config(3), kTmp / "det_a");
    RunRecord rb = pretrain_teacher(b, ds, fast_config(3), kTmp / "det_b");
    CHECK(val_trace(ra) == val_trace(rb));
    CHECK(a.params().flatten() == b.params().flatten());
    CHECK(io::read_text_file(kTmp / "det_a" / "metrics.csv") ==
          io::read_text_file(kTmp / "det_b" / "metrics.csv"));
}

void test_early_stop(const Dataset& ds) {
    testh::section("early stopping fires before the epoch budget");
    Model model(student_spec(), 42);
    TrainConfig cfg = fast_config(30);
    cfg.lr = 0.9;  // deliberately divergent, but Adam keeps it finite
    cfg.early_stop_patience = 2;
    RunRecord rec = pretrain_teacher(model, ds, cfg, kTmp / "early");
    CHECK(rec.early_stopped);
    CHECK(rec.epochs.size() < 30);
    // the recorded best is the minimum of the trace
    double mn = 1e300;
    for (double v : val_trace(rec)) mn = std::min(mn, v);
    CHECK_REL(rec.best_val_loss, mn, 1e-15);
}

void test_lambda_zero_equivalence(const Dataset& ds) {
    testh::section("lambda = 0 distillation equals plain supervised training");
    Model teacher(teacher_spec(), 1);
    Model supervised(student_spec(), 42), distilled(student_spec(), 42);
    RunRecord rs = pretrain_teacher(supervised, ds, fast_config(3), kTmp / "lz_sup");
    DistillPlan plan;
    plan.lambda = 0.0;
    distill::A2DConfig a2d;
    RunRecord rd = distill_student(distilled, {&teacher}, ds, plan, a2d, fast_config(3),
                                   kTmp / "lz_dis");
    CHECK(val_trace(rs) == val_trace(rd));  // bitwise
    CHECK(supervised.params().flatten() == distilled.params().flatten());
}

void test_self_distillation_fixed_point(const Dataset& ds) {
    testh::section("kd loss starts at zero when the teacher equals the student");
    ModelSpec spec = teacher_spec();
    Model teacher(spec, 5);
    Model student(spec, 5);  // same architecture, same init
    auto tasks = ds.tasks(Split::train);
    std::vector<int> order{0, 1, 2, 3};
    Tensor x, y;
    assemble_batch(tasks, order, 0, 4, x, y);
    DistillPlan plan;
    plan.lambda = 0.5;
    auto taps = distill::teacher_features({&teacher}, x, plan);
    nn::Graph g;
    auto dg = distill::build_distill_graph(g, student, x, y, taps.taps, plan);
    CHECK(dg.kd_terms.size() == 1);
    CHECK_NEAR(g.value(dg.kd_terms[0])[0], 0.0, 1e-18);
    // per-epoch decomposition: total = task + lambda * kd
    CHECK_REL(g.value(dg.totals[0])[0],
              g.value(dg.task)[0] + plan.lambda * g.value(dg.kd_terms[0])[0], 1e-9);
}

void test_loss_decomposition(const Dataset& ds) {
    testh::section("metrics.csv rows satisfy total = task + lambda * kd");
    Model teacher(teacher_spec(), 1);
    Model student(student_spec(), 4);
    DistillPlan plan;
    plan.lambda = 0.37;
    distill::A2DConfig a2d;
    RunRecord rec =
        distill_student(student, {&teacher}, ds, plan, a2d, fast_config(3), kTmp / "decomp");
    for (const auto& e : rec.epochs)
        CHECK_REL(e.train_loss, e.task_term + plan.lambda * e.kd_term, 1e-9);
}

void test_resume(const Dataset& ds) {
    testh::section("resume reproduces the uninterrupted trace");
    Model full(student_spec(), 42);
    RunRecord rf = pretrain_teacher(full, ds, fast_config(6), kTmp / "res_full");

    Model part(student_spec(), 42);
    pretrain_teacher(part, ds, fast_config(3), kTmp / "res_part");
    TrainConfig resume_cfg = fast_config(6);
    resume_cfg.resume = true;
    RunRecord rr = pretrain_teacher(part, ds, resume_cfg, kTmp / "res_part");

    CHECK(rr.epochs.size() == 3);  // epochs 3..5
    for (size_t i = 0; i < rr.epochs.size(); ++i) {
        CHECK(rr.epochs[i].epoch == static_cast<int>(i) + 3);
        CHECK(rr.epochs[i].val_loss == rf.epochs[i + 3].val_loss);  // bitwise
    }
    CHECK(part.params().flatten() == full.params().flatten());
    // appended metrics file equals the uninterrupted one
    CHECK(io::read_text_file(kTmp / "res_part" / "metrics.csv") ==
          io::read_text_file(kTmp / "res_full" / "metrics.csv"));
}

void test_a2d_step_reductions(const Dataset& ds) {
    testh::section("a2d step: M = 1 equals single-teacher distillation");
    Model teacher(teacher_spec(), 1);
    auto tasks = ds.tasks(Split::train);
    std::vector<int> order{0, 1, 2, 3};
    Tensor x, y;
    assemble_batch(tasks, order, 0, 4, x, y);

    DistillPlan plan;
    plan.lambda = 0.2;
    auto taps = distill::teacher_features({&teacher}, x, plan);
    distill::A2DConfig a2d;
    a2d.cap = 1.0;

    TrainConfig cfg = fast_config(2);
    Model s1(student_spec(), 9), s2(student_spec(), 9);
    {
        Optimizer opt(cfg);
        nn::Graph g;
        auto dg = distill::build_distill_graph(g, s1, x, y, taps.taps, plan);
        g.backward(dg.totals[0]);
        std::map<std::string, Tensor> grads;
        for (const auto& [name, var] : dg.trainables) grads[name] = g.grad(var);
        opt.step(s1.params(), grads);
    }
    {
        Optimizer opt(cfg);
        DistillPlan aekd = plan;
        aekd.mode = DistillMode::aekd;
        A2DStepDiagnostics diag = a2d_step(s2, taps.taps, x, y, aekd, a2d, opt);
        CHECK(diag.alpha == std::vector<double>{1.0});
    }
    CHECK(s1.params().flatten() == s2.params().flatten());

    testh::section("a2d step: two identical teachers act like one");
    Model s3(student_spec(), 9);
    {
        Optimizer opt(cfg);
        DistillPlan aekd = plan;
        aekd.mode = DistillMode::aekd;
        std::vector<Tensor> two_taps{taps.taps[0], taps.taps[0]};
        A2DStepDiagnostics diag = a2d_step(s3, two_taps, x, y, aekd, a2d, opt);
        CHECK_NEAR(diag.alpha[0] + diag.alpha[1], 1.0, 1e-9);
    }
    auto f2 = s2.params().flatten(), f3 = s3.params().flatten();
    double max_rel = 0.0;
    for (size_t i = 0; i < f2.size(); ++i)
        max_rel = std::max(max_rel,
                           std::abs(f2[i] - f3[i]) / std::max(1e-12, std::abs(f2[i])));
    CHECK_MSG(max_rel < 1e-9, "max rel diff " + std::to_string(max_rel));

    testh::section("aver_mkd uses the mean teacher target");
    Model t2(teacher_spec(), 2);
    Model s4(student_spec(), 9);
    DistillPlan avg;
    avg.mode = DistillMode::aver_mkd;
    avg.lambda = 0.2;
    auto both = distill::teacher_features({&teacher, &t2}, x, avg);
    nn::Graph g;
    auto dg = distill::build_distill_graph(g, s4, x, y, both.taps, avg);
    CHECK(dg.kd_terms.size() == 1);
    const double direct =
        distill::kd_loss(g.value(dg.student_tap), distill::aver_mkd_target(both.taps), avg);
    CHECK_REL(g.value(dg.kd_terms[0])[0], direct, 1e-12);
}

void test_nonfinite_abort(const Dataset& ds) {
    testh::section("non-finite loss aborts and keeps the last checkpoint");
    Model model(student_spec(), 42);
    TrainConfig cfg = fast_config(4);
    cfg.optimizer = OptimizerKind::sgd;
    cfg.lr = 1e18;
    bool threw = false;
    try {
        pretrain_teacher(model, ds, cfg, kTmp / "blowup");
    } catch (const std::exception& e) {
        threw = std::string(e.what()).find("non-finite") != std::string::npos;
    }
    CHECK(threw);
    CHECK(std::filesystem::exists(kTmp / "blowup" / "checkpoints" / "last" / "manifest.json"));
}

void test_alternating_schedule(const Dataset& ds) {
    testh::section("alternating branch schedule freezes attention on even epochs");
    ModelSpec spec;
    spec.kind = ModelKind::st_alternet;
    spec.in_frames = 2;
    spec.out_frames = 2;
    spec.channels = 1;
    spec.hidden = 8;
    spec.depth = 1;
    spec.heads = 2;
    spec.grid_h = spec.grid_w = 16;
    Model model(spec, 3);
    const Tensor wq_before = model.params().at("blk0.attn.wq.w");
    const Tensor conv_before = model.params().at("blk0.conv.w");
    TrainConfig cfg = fast_config(1);
    cfg.alternate_branches = true;
    pretrain_teacher(model, ds, cfg, kTmp / "alt");
    // epoch 0 is the conv phase: attention untouched, conv moved
    bool attn_same = true;
    const Tensor& wq_after = model.params().at("blk0.attn.wq.w");
    for (int64_t i = 0; i < wq_after.numel(); ++i)
        if (wq_after[i] != wq_before[i]) attn_same = false;
    CHECK(attn_same);
    bool conv_moved = false;
    const Tensor& conv_after = model.params().at("blk0.conv.w");
    for (int64_t i = 0; i < conv_after.numel(); ++i)
        if (conv_after[i] != conv_before[i]) conv_moved = true;
    CHECK(conv_moved);
}

void test_config_validation() {
    testh::section("config invariants");
    TrainConfig bad = fast_config(5);
    bad.early_stop_patience = 5;
    CHECK_THROWS(bad.validate());
    bad = fast_config(5);
    bad.lr = 0.0;
    CHECK_THROWS(bad.validate());
    DistillPlan plan;
    plan.mode = DistillMode::aver_mkd;
    CHECK_THROWS(plan.validate(1));
    plan.mode = DistillMode::aekd;
    CHECK_THROWS(plan.validate(0));
}

}  // namespace

int main() {
    std::filesystem::remove_all(kTmp);
    std::filesystem::create_directories(kTmp);
    Dataset ds = make_wave_dataset(kTmp / "data");
    test_smoke_descent(ds);
    test_determinism(ds);
    test_early_stop(ds);
    test_lambda_zero_equivalence(ds);
    test_self_distillation_fixed_point(ds);
    test_loss_decomposition(ds);
    test_resume(ds);
    test_a2d_step_reductions(ds);
    test_nonfinite_abort(ds);
    test_alternating_schedule(ds);
    test_config_validation();
    std::filesystem::remove_all(kTmp);
    return testh::summary("train");
}
