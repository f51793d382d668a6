#pragma once

#include <map>
#include <string>
#include <vector>

#include "sdkd/graph.hpp"
#include "sdkd/models.hpp"
#include "sdkd/spectral.hpp"
#include "sdkd/tensor.hpp"

namespace sdkd::distill {

enum class LossVariant { mse_feature, ab };
enum class TapPoint { output, latent };
enum class DistillMode { single, aver_mkd, aekd };

struct DistillPlan {
    double lambda = 0.1;    // task/distill balance
    double alpha_kd = 1.0;  // low-band weight inside the spectral transfer loss
    LossVariant loss_variant = LossVariant::mse_feature;
    TapPoint tap = TapPoint::output;
    double cutoff = -1.0;  // radial cutoff; < 0 picks floor(min(H, W) / 8)
    DistillMode mode = DistillMode::single;
    double ab_margin = 1.0;

    void validate(int n_teachers) const;
    double cutoff_for(int h, int w) const;
};

struct A2DConfig {
    double cap = 0.7;       // per-teacher weight ceiling C in (0, 1]
    double lr = 1e-4;       // eta for the literal-SGD path
    double tolerance = 1e-8;
    int max_iterations = 500;

    void validate(int n_teachers) const;  // feasibility: M * cap >= 1
};

struct GradientBundle {
    std::vector<std::vector<double>> grads;  // M flattened gradients, equal length
    std::vector<double> alpha;               // solved weights, on the capped simplex
    std::vector<double> direction;           // d = -sum_m alpha_m g_m
    double direction_norm = 0.0;
};

// ---------------------------------------------------------------------------
// Losses. Graph variants return scalar Vars for training; the double
// overloads are the same computations on throwaway graphs.
// ---------------------------------------------------------------------------

// mean squared error
nn::Var task_loss_op(nn::Graph& g, nn::Var pred, const Tensor& target);
double task_loss(const Tensor& pred, const Tensor& target);

// spectral transfer loss: |high(r)|^2 + alpha_kd * |low(r)|^2 with
// r = student - teacher, band energies in the per-slice sum convention
nn::Var kd_loss_op(nn::Graph& g, nn::Var student_feat, const Tensor& teacher_feat,
                   const DistillPlan& plan);
double kd_loss(const Tensor& student_feat, const Tensor& teacher_feat, const DistillPlan& plan);

// activation-boundary hinge with margin (mean per-element penalty)
nn::Var ab_loss_op(nn::Graph& g, nn::Var student_pre_act, const Tensor& teacher_pre_act,
                   double margin);
double ab_loss(const Tensor& student_pre_act, const Tensor& teacher_pre_act, double margin);

// the loss selected by plan.loss_variant, applied to tap features
nn::Var feature_loss_op(nn::Graph& g, nn::Var student_feat, const Tensor& teacher_feat,
                        const DistillPlan& plan);

// elementwise mean of >= 2 equally-shaped teacher outputs
Tensor aver_mkd_target(const std::vector<Tensor>& teacher_outputs);

// ---------------------------------------------------------------------------
// A2D weighting
// ---------------------------------------------------------------------------

// Euclidean projection onto {alpha : sum = 1, 0 <= alpha_i <= cap}
// (sort-based exact algorithm)
std::vector<double> project_capped_simplex(const std::vector<double>& v, double cap);

// min (1/2) |sum_m alpha_m g_m|^2 over the capped simplex, via projected
// gradient descent (with momentum restarts) on the precomputed Gram matrix
std::vector<double> solve_a2d_weights(const std::vector<std::vector<double>>& grads,
                                      const A2DConfig& cfg);

GradientBundle combine_gradients(const std::vector<std::vector<double>>& grads,
                                 const A2DConfig& cfg);

double a2d_objective(const std::vector<std::vector<double>>& grads,
                     const std::vector<double>& alpha);

// ---------------------------------------------------------------------------
// Distillation graph assembly (shared by the training loops)
// ---------------------------------------------------------------------------

struct TeacherFeatures {
    std::vector<Tensor> taps;  // one per teacher, at the planned tap point
};

TeacherFeatures teacher_features(const std::vector<const nn::Model*>& teachers, const Tensor& x,
                                 const DistillPlan& plan);

struct DistillGraphResult {
    nn::Model::Bound student;
    nn::Var student_tap;               // post projection head, if any
    nn::Var task;                      // scalar
    std::vector<nn::Var> kd_terms;     // per target (1 for single/aver_mkd)
    std::vector<nn::Var> totals;       // task + lambda * kd_term
    std::vector<std::pair<std::string, nn::Var>> trainables;
};

// Builds the student forward pass plus per-target losses on one graph.
// teacher taps must already be computed (teachers stay frozen). A latent tap
// with mismatched channel width uses the student-side 1x1 projection head
// stored under "kd_proj.*" in the student's parameter set (created by
// ensure_projection_head).
DistillGraphResult build_distill_graph(nn::Graph& g, const nn::Model& student, const Tensor& x,
                                       const Tensor& y, const std::vector<Tensor>& teacher_taps,
                                       const DistillPlan& plan);

// returns true if a head was created
bool ensure_projection_head(nn::Model& student, const std::vector<const nn::Model*>& teachers,
                            int h, int w, const DistillPlan& plan, uint64_t seed);

}  // namespace sdkd::distill
