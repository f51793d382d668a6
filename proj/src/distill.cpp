#include "sdkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdkd::distill {

using nn::Graph;
using nn::Var;

// ===========================================================================
// Plans and configs
// ===========================================================================

void DistillPlan::validate(int n_teachers) const {
    if (lambda < 0.0) throw std::invalid_argument("plan: lambda must be >= 0");
    if (alpha_kd < 0.0) throw std::invalid_argument("plan: alpha_kd must be >= 0");
    if (mode == DistillMode::aekd && n_teachers < 1)
        throw std::invalid_argument("plan: aekd needs at least 1 teacher");
    if (mode == DistillMode::aver_mkd && n_teachers < 2)
        throw std::invalid_argument("plan: aver_mkd needs at least 2 teachers");
    if (mode == DistillMode::single && n_teachers < 1 && lambda > 0.0)
        throw std::invalid_argument("plan: single-teacher distillation needs a teacher");
}

double DistillPlan::cutoff_for(int h, int w) const {
    return cutoff >= 0.0 ? cutoff : spectral::SpectralConfig::default_cutoff(h, w);
}

void A2DConfig::validate(int n_teachers) const {
    if (cap <= 0.0 || cap > 1.0) throw std::invalid_argument("a2d: cap must be in (0, 1]");
    if (n_teachers * cap < 1.0 - 1e-12)
        throw std::invalid_argument("a2d: infeasible cap (M * C < 1)");
    if (lr <= 0.0) throw std::invalid_argument("a2d: lr must be > 0");
    if (tolerance <= 0.0 || max_iterations < 1)
        throw std::invalid_argument("a2d: bad solver settings");
}

// ===========================================================================
// Losses
// ===========================================================================

Var task_loss_op(Graph& g, Var pred, const Tensor& target) {
    if (!g.value(pred).same_shape(target))
        throw std::invalid_argument("task_loss: shape mismatch " + g.value(pred).shape_str() +
                                    " vs " + target.shape_str());
    return nn::mean_sq(g, nn::sub(g, pred, g.input(target)));
}

double task_loss(const Tensor& pred, const Tensor& target) {
    Graph g;
    return g.value(task_loss_op(g, g.input(pred), target))[0];
}

Var kd_loss_op(Graph& g, Var student_feat, const Tensor& teacher_feat, const DistillPlan& plan) {
    const Tensor& sv = g.value(student_feat);
    if (!sv.same_shape(teacher_feat))
        throw std::invalid_argument("kd_loss: tap shape mismatch " + sv.shape_str() + " vs " +
                                    teacher_feat.shape_str() +
                                    " (latent taps with unequal widths need the projection head)");
    const int h = sv.dim(sv.ndim() - 2), w = sv.dim(sv.ndim() - 1);
    const spectral::SpectralConfig cfg(plan.cutoff_for(h, w), h, w);
    Var r = nn::sub(g, student_feat, g.input(teacher_feat));
    Var high = nn::ssq_per_slice(g, nn::band_high(g, r, cfg));
    Var low = nn::ssq_per_slice(g, nn::band_low(g, r, cfg));
    return nn::add(g, high, nn::scale(g, low, plan.alpha_kd));
}

double kd_loss(const Tensor& student_feat, const Tensor& teacher_feat, const DistillPlan& plan) {
    Graph g;
    return g.value(kd_loss_op(g, g.input(student_feat), teacher_feat, plan))[0];
}

Var ab_loss_op(Graph& g, Var student_pre_act, const Tensor& teacher_pre_act, double margin) {
    return nn::ab_hinge(g, student_pre_act, teacher_pre_act, margin);
}

double ab_loss(const Tensor& student_pre_act, const Tensor& teacher_pre_act, double margin) {
    Graph g;
    return g.value(ab_loss_op(g, g.input(student_pre_act), teacher_pre_act, margin))[0];
}

Var feature_loss_op(Graph& g, Var student_feat, const Tensor& teacher_feat,
                    const DistillPlan& plan) {
    return plan.loss_variant == LossVariant::ab
               ? ab_loss_op(g, student_feat, teacher_feat, plan.ab_margin)
               : kd_loss_op(g, student_feat, teacher_feat, plan);
}

Tensor aver_mkd_target(const std::vector<Tensor>& teacher_outputs) {
    if (teacher_outputs.size() < 2)
        throw std::invalid_argument("aver_mkd_target: need at least 2 teacher outputs");
    Tensor out = teacher_outputs[0];
    for (size_t i = 1; i < teacher_outputs.size(); ++i) {
        if (!out.same_shape(teacher_outputs[i]))
            throw std::invalid_argument("aver_mkd_target: teacher output shape mismatch");
        for (int64_t j = 0; j < out.numel(); ++j) out[j] += teacher_outputs[i][j];
    }
    const double inv = 1.0 / static_cast<double>(teacher_outputs.size());
    for (int64_t j = 0; j < out.numel(); ++j) out[j] *= inv;
    return out;
}

// ===========================================================================
// Capped-simplex projection
// ===========================================================================

std::vector<double> project_capped_simplex(const std::vector<double>& v, double cap) {
    const int m = static_cast<int>(v.size());
    if (m < 1) throw std::invalid_argument("project: empty input");
    if (cap <= 0.0 || m * cap < 1.0 - 1e-12)
        throw std::invalid_argument("project: infeasible cap (M * C < 1)");
    for (double x : v)
        if (!std::isfinite(x)) throw std::invalid_argument("project: non-finite input");

    auto clamp01c = [cap](double x) { return std::min(cap, std::max(0.0, x)); };
    auto mass_at = [&](double tau) {
        double s = 0.0;
        for (double x : v) s += clamp01c(x - tau);
        return s;
    };

    // mass(tau) is continuous, nonincreasing, piecewise linear with
    // breakpoints at v_i (hits 0) and v_i - cap (saturates); walk the sorted
    // breakpoints to find the segment where it crosses 1
    std::vector<double> bps;
    bps.reserve(v.size() * 2);
    for (double x : v) {
        bps.push_back(x);
        bps.push_back(x - cap);
    }
    std::sort(bps.begin(), bps.end(), std::greater<double>());

    double tau = bps.back();  // mass here is m*cap >= 1
    double hi = bps.front();  // mass here is 0 (or ties -> small)
    for (size_t j = 0; j < bps.size(); ++j) {
        const double s = mass_at(bps[j]);
        if (s >= 1.0) {
            if (s == 1.0) {
                tau = bps[j];
                hi = bps[j];
            } else {
                // crossing strictly inside (bps[j], hi]; resolve the active
                // set at the segment midpoint and solve the linear equation
                const double mid = 0.5 * (bps[j] + hi);
                double active_sum = 0.0;
                int n_active = 0, n_sat = 0;
                for (double x : v) {
                    const double d = x - mid;
                    if (d >= cap)
                        ++n_sat;
                    else if (d > 0.0) {
                        ++n_active;
                        active_sum += x;
                    }
                }
                if (n_active == 0) {
                    tau = bps[j];  // mass is flat at exactly n_sat * cap = 1
                } else {
                    tau = (active_sum + n_sat * cap - 1.0) / n_active;
                }
            }
            std::vector<double> out(v.size());
            for (size_t i = 0; i < v.size(); ++i) out[i] = clamp01c(v[i] - tau);
            return out;
        }
        hi = bps[j];
    }
    // mass never reached 1: only possible when m*cap == 1 within roundoff
    std::vector<double> out(v.size(), cap);
    return out;
}

// ===========================================================================
// A2D solver
// ===========================================================================

namespace {

std::vector<std::vector<double>> gram_matrix(const std::vector<std::vector<double>>& grads) {
    const int m = static_cast<int>(grads.size());
    std::vector<std::vector<double>> gm(static_cast<size_t>(m),
                                        std::vector<double>(static_cast<size_t>(m), 0.0));
    for (int i = 0; i < m; ++i)
        for (int j = i; j < m; ++j) {
            double dot = 0.0;
            for (size_t p = 0; p < grads[static_cast<size_t>(i)].size(); ++p)
                dot += grads[static_cast<size_t>(i)][p] * grads[static_cast<size_t>(j)][p];
            gm[static_cast<size_t>(i)][static_cast<size_t>(j)] = dot;
            gm[static_cast<size_t>(j)][static_cast<size_t>(i)] = dot;
        }
    return gm;
}

double quad_form(const std::vector<std::vector<double>>& gm, const std::vector<double>& a) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a.size(); ++j) s += a[i] * gm[i][j] * a[j];
    return 0.5 * s;
}

}  // namespace

double a2d_objective(const std::vector<std::vector<double>>& grads,
                     const std::vector<double>& alpha) {
    return quad_form(gram_matrix(grads), alpha);
}

namespace {

// dense solve with partial pivoting; returns false when the pivot vanishes
bool solve_linear(std::vector<std::vector<double>> a, std::vector<double> b,
                  std::vector<double>& x) {
    const int n = static_cast<int>(b.size());
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[static_cast<size_t>(r)][static_cast<size_t>(col)]) >
                std::abs(a[static_cast<size_t>(pivot)][static_cast<size_t>(col)]))
                pivot = r;
        if (std::abs(a[static_cast<size_t>(pivot)][static_cast<size_t>(col)]) < 1e-14) return false;
        std::swap(a[static_cast<size_t>(col)], a[static_cast<size_t>(pivot)]);
        std::swap(b[static_cast<size_t>(col)], b[static_cast<size_t>(pivot)]);
        for (int r = col + 1; r < n; ++r) {
            const double f = a[static_cast<size_t>(r)][static_cast<size_t>(col)] /
                             a[static_cast<size_t>(col)][static_cast<size_t>(col)];
            for (int c = col; c < n; ++c)
                a[static_cast<size_t>(r)][static_cast<size_t>(c)] -=
                    f * a[static_cast<size_t>(col)][static_cast<size_t>(c)];
            b[static_cast<size_t>(r)] -= f * b[static_cast<size_t>(col)];
        }
    }
    x.assign(static_cast<size_t>(n), 0.0);
    for (int r = n - 1; r >= 0; --r) {
        double s = b[static_cast<size_t>(r)];
        for (int c = r + 1; c < n; ++c)
            s -= a[static_cast<size_t>(r)][static_cast<size_t>(c)] * x[static_cast<size_t>(c)];
        x[static_cast<size_t>(r)] = s / a[static_cast<size_t>(r)][static_cast<size_t>(r)];
    }
    return true;
}

// Exact KKT solve on the active set identified by the iterate: free
// coordinates solve an equality-constrained QP; bound coordinates must pass
// the multiplier sign checks. Returns the polished point when it is feasible,
// optimal and no worse than the iterate.
std::vector<double> active_set_polish(const std::vector<std::vector<double>>& gm,
                                      const std::vector<double>& alpha, double cap) {
    const int m = static_cast<int>(alpha.size());
    const double edge = 1e-9;
    std::vector<int> state(static_cast<size_t>(m));  // 0 free, -1 at zero, +1 at cap
    std::vector<int> free_idx;
    double fixed_mass = 0.0;
    for (int i = 0; i < m; ++i) {
        if (alpha[static_cast<size_t>(i)] <= edge) {
            state[static_cast<size_t>(i)] = -1;
        } else if (alpha[static_cast<size_t>(i)] >= cap - edge) {
            state[static_cast<size_t>(i)] = 1;
            fixed_mass += cap;
        } else {
            state[static_cast<size_t>(i)] = 0;
            free_idx.push_back(i);
        }
    }
    const int nf = static_cast<int>(free_idx.size());
    std::vector<double> polished(alpha);
    double mu;
    if (nf == 0) {
        // all coordinates on bounds; multiplier from any cap coordinate
        mu = 0.0;
    } else {
        std::vector<std::vector<double>> sys(static_cast<size_t>(nf) + 1,
                                             std::vector<double>(static_cast<size_t>(nf) + 1, 0.0));
        std::vector<double> rhs(static_cast<size_t>(nf) + 1, 0.0);
        for (int a = 0; a < nf; ++a) {
            for (int b = 0; b < nf; ++b)
                sys[static_cast<size_t>(a)][static_cast<size_t>(b)] =
                    gm[static_cast<size_t>(free_idx[static_cast<size_t>(a)])]
                      [static_cast<size_t>(free_idx[static_cast<size_t>(b)])];
            sys[static_cast<size_t>(a)][static_cast<size_t>(nf)] = 1.0;
            sys[static_cast<size_t>(nf)][static_cast<size_t>(a)] = 1.0;
            double cross = 0.0;
            for (int i = 0; i < m; ++i)
                if (state[static_cast<size_t>(i)] == 1)
                    cross += gm[static_cast<size_t>(free_idx[static_cast<size_t>(a)])]
                               [static_cast<size_t>(i)] *
                             cap;
            rhs[static_cast<size_t>(a)] = -cross;
        }
        rhs[static_cast<size_t>(nf)] = 1.0 - fixed_mass;
        std::vector<double> sol;
        if (!solve_linear(sys, rhs, sol)) return alpha;
        for (int a = 0; a < nf; ++a) {
            const double v = sol[static_cast<size_t>(a)];
            if (v < -1e-12 || v > cap + 1e-12) return alpha;  // active set was wrong
            polished[static_cast<size_t>(free_idx[static_cast<size_t>(a)])] =
                std::min(cap, std::max(0.0, v));
        }
        mu = sol[static_cast<size_t>(nf)];
    }
    // KKT sign conditions for the bound coordinates
    std::vector<double> grad(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            grad[static_cast<size_t>(i)] +=
                gm[static_cast<size_t>(i)][static_cast<size_t>(j)] * polished[static_cast<size_t>(j)];
    if (nf == 0) mu = -grad[0];
    for (int i = 0; i < m; ++i) {
        if (state[static_cast<size_t>(i)] == -1 && grad[static_cast<size_t>(i)] + mu < -1e-9)
            return alpha;
        if (state[static_cast<size_t>(i)] == 1 && grad[static_cast<size_t>(i)] + mu > 1e-9)
            return alpha;
    }
    return quad_form(gm, polished) <= quad_form(gm, alpha) ? polished : alpha;
}

}  // namespace

std::vector<double> solve_a2d_weights(const std::vector<std::vector<double>>& grads,
                                      const A2DConfig& cfg) {
    const int m = static_cast<int>(grads.size());
    if (m < 1) throw std::invalid_argument("a2d: no gradients");
    cfg.validate(m);
    for (const auto& g : grads) {
        if (g.size() != grads[0].size())
            throw std::invalid_argument("a2d: gradient length mismatch");
        for (double x : g)
            if (!std::isfinite(x)) throw std::invalid_argument("a2d: non-finite gradient entry");
    }
    if (m == 1) return {1.0};

    const auto gm = gram_matrix(grads);
    // Lipschitz bound: infinity norm dominates the spectral radius
    double lip = 0.0;
    for (int i = 0; i < m; ++i) {
        double row = 0.0;
        for (int j = 0; j < m; ++j) row += std::abs(gm[static_cast<size_t>(i)][static_cast<size_t>(j)]);
        lip = std::max(lip, row);
    }
    std::vector<double> alpha =
        project_capped_simplex(std::vector<double>(static_cast<size_t>(m), 1.0 / m), cfg.cap);
    if (lip <= 0.0) return alpha;  // all-zero gradients: any feasible point
    const double step = 1.0 / lip;

    // accelerated projected gradient with adaptive restart
    std::vector<double> y = alpha, prev = alpha, grad(static_cast<size_t>(m));
    double t = 1.0;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (int j = 0; j < m; ++j)
                s += gm[static_cast<size_t>(i)][static_cast<size_t>(j)] * y[static_cast<size_t>(j)];
            grad[static_cast<size_t>(i)] = s;
        }
        std::vector<double> z(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i)
            z[static_cast<size_t>(i)] = y[static_cast<size_t>(i)] - step * grad[static_cast<size_t>(i)];
        std::vector<double> next = project_capped_simplex(z, cfg.cap);

        // restart momentum when it points uphill
        double momentum_dot = 0.0, delta = 0.0;
        for (int i = 0; i < m; ++i) {
            const size_t k = static_cast<size_t>(i);
            momentum_dot += (y[k] - next[k]) * (next[k] - alpha[k]);
            delta = std::max(delta, std::abs(next[k] - alpha[k]));
        }
        prev = alpha;
        alpha = next;
        if (momentum_dot > 0.0) {
            t = 1.0;
            y = alpha;
        } else {
            const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
            for (int i = 0; i < m; ++i) {
                const size_t k = static_cast<size_t>(i);
                y[k] = alpha[k] + ((t - 1.0) / t_next) * (alpha[k] - prev[k]);
            }
            t = t_next;
        }
        if (delta < cfg.tolerance) break;
    }
    // snap to the exact optimum on the identified active set when KKT checks
    // confirm it
    return active_set_polish(gm, alpha, cfg.cap);
}

GradientBundle combine_gradients(const std::vector<std::vector<double>>& grads,
                                 const A2DConfig& cfg) {
    GradientBundle b;
    b.grads = grads;
    b.alpha = solve_a2d_weights(grads, cfg);
    const size_t p = grads.empty() ? 0 : grads[0].size();
    b.direction.assign(p, 0.0);
    for (size_t m = 0; m < grads.size(); ++m)
        for (size_t i = 0; i < p; ++i) b.direction[i] -= b.alpha[m] * grads[m][i];
    double n2 = 0.0;
    for (double d : b.direction) n2 += d * d;
    b.direction_norm = std::sqrt(n2);
    return b;
}

// ===========================================================================
// Graph assembly
// ===========================================================================

TeacherFeatures teacher_features(const std::vector<const nn::Model*>& teachers, const Tensor& x,
                                 const DistillPlan& plan) {
    TeacherFeatures f;
    for (const nn::Model* t : teachers) {
        auto [output, latent] = t->forward_with_latent(x);
        f.taps.push_back(plan.tap == TapPoint::output ? std::move(output) : std::move(latent));
    }
    return f;
}

bool ensure_projection_head(nn::Model& student, const std::vector<const nn::Model*>& teachers,
                            int h, int w, const DistillPlan& plan, uint64_t seed) {
    if (plan.tap != TapPoint::latent || teachers.empty() || plan.lambda == 0.0) return false;
    Tensor probe({1, student.spec().in_frames * student.spec().channels, h, w});
    auto [s_out, s_lat] = student.forward_with_latent(probe);
    auto [t_out, t_lat] = teachers[0]->forward_with_latent(probe);
    for (const nn::Model* t : teachers) {
        auto [o2, l2] = t->forward_with_latent(probe);
        if (!l2.same_shape(t_lat))
            throw std::invalid_argument("distill: teachers disagree on latent shape");
    }
    if (s_lat.dim(2) != t_lat.dim(2) || s_lat.dim(3) != t_lat.dim(3))
        throw std::invalid_argument("distill: latent spatial dims differ (" + s_lat.shape_str() +
                                    " vs " + t_lat.shape_str() + "); no projection can fix this");
    if (s_lat.dim(1) == t_lat.dim(1)) return false;
    if (student.params().has("kd_proj.w")) return false;

    const int cin = s_lat.dim(1), cout = t_lat.dim(1);
    Rng rng = Rng::derive(seed, 0x70726f6a /* "proj" */);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin));
    Tensor wt({cout, cin, 1, 1});
    for (int64_t i = 0; i < wt.numel(); ++i) wt[i] = rng.uniform(-bound, bound);
    Tensor bt({cout});
    for (int64_t i = 0; i < bt.numel(); ++i) bt[i] = rng.uniform(-bound, bound);
    student.params().add("kd_proj.w", std::move(wt));
    student.params().add("kd_proj.b", std::move(bt));
    return true;
}

DistillGraphResult build_distill_graph(Graph& g, const nn::Model& student, const Tensor& x,
                                       const Tensor& y, const std::vector<Tensor>& teacher_taps,
                                       const DistillPlan& plan) {
    DistillGraphResult r;
    Var xin = g.input(x);
    r.student = student.build(g, xin, true);
    r.trainables = r.student.params;
    r.task = task_loss_op(g, r.student.output, y);

    r.student_tap = plan.tap == TapPoint::output ? r.student.output : r.student.latent;
    if (plan.tap == TapPoint::latent && student.params().has("kd_proj.w")) {
        Var pw = g.param(student.params().at("kd_proj.w"));
        Var pb = g.param(student.params().at("kd_proj.b"));
        r.trainables.emplace_back("kd_proj.w", pw);
        r.trainables.emplace_back("kd_proj.b", pb);
        r.student_tap = nn::conv2d(g, r.student_tap, pw, pb, 1, 0);
    }

    if (plan.lambda == 0.0 || teacher_taps.empty()) {
        r.totals.push_back(r.task);
        return r;
    }

    std::vector<Tensor> targets;
    if (plan.mode == DistillMode::aver_mkd)
        targets.push_back(aver_mkd_target(teacher_taps));
    else if (plan.mode == DistillMode::single)
        targets.push_back(teacher_taps[0]);
    else
        targets = teacher_taps;

    for (const Tensor& target : targets) {
        Var kd = feature_loss_op(g, r.student_tap, target, plan);
        r.kd_terms.push_back(kd);
        r.totals.push_back(nn::add(g, r.task, nn::scale(g, kd, plan.lambda)));
    }
    return r;
}

}  // namespace sdkd::distill
