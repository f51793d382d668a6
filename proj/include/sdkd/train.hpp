#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sdkd/dataset.hpp"
#include "sdkd/distill.hpp"
#include "sdkd/models.hpp"

namespace sdkd::train {

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
    int epochs = 50;  // the reference setting is 300; desk-scale default 50
    double lr = 1e-4;
    int batch_size = 8;
    uint64_t seed = 42;
    int early_stop_patience = 20;
    OptimizerKind optimizer = OptimizerKind::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool deterministic = false;        // writes wall_s as 0 so CSVs are byte-stable
    bool alternate_branches = false;   // teacher conv/attention alternating updates
    bool resume = false;               // continue from <run_dir>/checkpoints/last

    void validate() const;
};

// Adam (default) or plain SGD over named parameter tensors. The distillation
// path feeds the A2D-combined gradient in place of the raw gradient.
class Optimizer {
public:
    Optimizer(const TrainConfig& cfg) : cfg_(cfg) {}

    void step(nn::ParameterSet& params, const std::map<std::string, Tensor>& grads);

    int64_t step_count() const { return step_count_; }
    std::vector<std::pair<std::string, Tensor>> state_tensors() const;
    void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors,
                    int64_t step_count);

private:
    TrainConfig cfg_;
    int64_t step_count_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double task_term = 0.0;
    double kd_term = 0.0;
    double wall_s = 0.0;
};

struct RunRecord {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_loss = 0.0;
    std::filesystem::path best_checkpoint;
    bool early_stopped = false;
};

// Stage 1: supervised pretraining on the task loss (works for any model
// kind; the CLI uses it for baseline students too).
RunRecord pretrain_teacher(nn::Model& model, const data::Dataset& ds, const TrainConfig& cfg,
                           const std::filesystem::path& run_dir);

// Stage 3: offline distillation. Teachers are frozen; plan.mode selects
// single / aver_mkd / aekd. Per-step A2D diagnostics land in
// <run_dir>/a2d.csv when mode == aekd.
RunRecord distill_student(nn::Model& student, const std::vector<const nn::Model*>& teachers,
                          const data::Dataset& ds, const distill::DistillPlan& plan,
                          const distill::A2DConfig& a2d, const TrainConfig& cfg,
                          const std::filesystem::path& run_dir);

// mini-batch assembly: [B, T*C, H, W] stacks of inputs and targets
void assemble_batch(const std::vector<data::ForecastTask>& tasks, const std::vector<int>& order,
                    size_t first, size_t count, Tensor& x, Tensor& y);

// mean task MSE of a model over a split
double evaluate_task_loss(const nn::Model& model, const data::Dataset& ds, data::Split split,
                          int batch_size);

// One A2D update: M per-teacher losses, M backward passes, capped-simplex
// weighting, then the combined gradient goes through the optimizer.
struct A2DStepDiagnostics {
    std::vector<double> teacher_losses;
    std::vector<double> alpha;
    double direction_norm = 0.0;
    double task = 0.0;
    double kd_mean = 0.0;
};

A2DStepDiagnostics a2d_step(nn::Model& student, const std::vector<Tensor>& teacher_taps,
                            const Tensor& x, const Tensor& y, const distill::DistillPlan& plan,
                            const distill::A2DConfig& a2d, Optimizer& opt);

}  // namespace sdkd::train
