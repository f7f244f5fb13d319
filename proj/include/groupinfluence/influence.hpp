#pragma once

#include "groupinfluence/loss.hpp"
#include "groupinfluence/solver.hpp"

#include <chrono>
#include <utility>

namespace gi {

enum class InfluenceOrder { first, second, first_unscaled };

namespace detail {

// Per-sample losses carry an equal share of the regularizer, so each sample
// contributes grad + l2 * theta and Hess + l2 * I to group sums.  Removing a
// group then keeps the regularizer at full strength relative to the mean loss.
inline Vector group_gradient_sum(const LossModel& model, const Dataset& data,
                                 const Vector& theta, const GroupSpec& U) {
    Vector g = Vector::Zero(theta.size());
    for (int i : U.indices) g += per_sample_gradient(model, data, theta, i);
    g += (static_cast<double>(U.size()) * model.l2_strength) * theta;
    return g;
}

inline Vector group_hvp(const LossModel& model, const Dataset& data, const Vector& theta,
                        const Vector& v, const GroupSpec& U) {
    Vector w = hvp_subset(model, data, theta, v, U);
    w += (static_cast<double>(U.size()) * model.l2_strength) * v;
    return w;
}

inline void check_group_proper(const GroupSpec& U, Eigen::Index m) {
    U.validate(m);  // also rejects U = S (p = 1 singularity)
}

}  // namespace detail

// First-order parameter perturbation of up-weighting U:
//   theta1 = -(1 / (m (1-p))) H^{-1} sum_{z in U} grad(z).
// Empty U returns the zero vector.
inline Vector theta1(const TrainedModel& tm, const Dataset& data, const GroupSpec& U,
                     const TrainConfig& cfg) {
    detail::check_group_proper(U, data.size());
    if (U.size() == 0) return Vector::Zero(tm.theta_star.size());
    const double m = static_cast<double>(data.size());
    const double p = U.fraction(data.size());
    Vector gU = detail::group_gradient_sum(tm.model, data, tm.theta_star, U);
    Vector u = inverse_hvp(tm, data, gU, cfg);
    return (-1.0 / (m * (1.0 - p))) * u;
}

// Second-order perturbation:
//   theta2 = (p / (1-p)) (t1 - H^{-1} ((1/|U|) sum_{z in U} Hess(z)) t1),
// with t1 = theta1(U). Empty U returns zero.
inline Vector theta2(const TrainedModel& tm, const Dataset& data, const GroupSpec& U,
                     const Vector& t1, const TrainConfig& cfg) {
    detail::check_group_proper(U, data.size());
    if (U.size() == 0) return Vector::Zero(tm.theta_star.size());
    const double p = U.fraction(data.size());
    Vector w =
        detail::group_hvp(tm.model, data, tm.theta_star, t1, U) / static_cast<double>(U.size());
    return (p / (1.0 - p)) * (t1 - inverse_hvp(tm, data, w, cfg));
}

// Predicted parameter change of removing U (series at epsilon = -1):
//   delta_theta = -theta1 + theta2.
inline Vector predict_removal_delta_theta(const TrainedModel& tm, const Dataset& data,
                                          const GroupSpec& U, const TrainConfig& cfg) {
    Vector t1 = theta1(tm, data, U, cfg);
    return -t1 + theta2(tm, data, U, t1, cfg);
}

// Everything the harness needs for one (group, test point), computed with two
// CG solves total: v = H^{-1} sum_U grad is solved once and reused by the
// first-order score, the second-order correction, and the term decomposition.
struct GroupInfluenceScores {
    double first = 0.0;
    double first_unscaled = 0.0;
    double second = 0.0;
    double term1 = 0.0;
    double term2 = 0.0;
    double t_first_s = 0.0;
    double t_second_s = 0.0;
};

inline GroupInfluenceScores score_group(const TrainedModel& tm, const Dataset& data,
                                        const GroupSpec& U, const Sample& zt,
                                        const TrainConfig& cfg) {
    detail::check_group_proper(U, data.size());
    using clock = std::chrono::steady_clock;
    GroupInfluenceScores out;
    if (U.size() == 0) return out;
    const double m = static_cast<double>(data.size());
    const double p = U.fraction(data.size());
    Vector gt = sample_gradient(tm.model, data, tm.theta_star, zt.x, zt.y);

    auto start1 = clock::now();
    Vector gU = detail::group_gradient_sum(tm.model, data, tm.theta_star, U);
    Vector v = inverse_hvp(tm, data, gU, cfg);  // H^{-1} sum_U grad
    Vector t1 = (-1.0 / (m * (1.0 - p))) * v;
    out.first = gt.dot(-t1);
    out.t_first_s = std::chrono::duration<double>(clock::now() - start1).count();
    out.first_unscaled = (1.0 - p) * out.first;

    auto start2 = clock::now();
    Vector w =
        detail::group_hvp(tm.model, data, tm.theta_star, t1, U) / static_cast<double>(U.size());
    Vector t2 = (p / (1.0 - p)) * (t1 - inverse_hvp(tm, data, w, cfg));
    out.second = gt.dot(-t1 + t2);
    out.t_second_s =
        out.t_first_s + std::chrono::duration<double>(clock::now() - start2).count();

    // Term decomposition (same cached solve; one extra solve for H^{-1} gt)
    const double c1 = (1.0 / m) * (1.0 - 2.0 * p) / ((1.0 - p) * (1.0 - p));
    const double c2 = 1.0 / ((1.0 - p) * (1.0 - p) * m * m);
    out.term1 = c1 * gt.dot(v);
    Vector q = detail::group_hvp(tm.model, data, tm.theta_star, v, U);  // sum_U Hess H^{-1} g_U
    Vector vt = inverse_hvp(tm, data, gt, cfg);
    out.term2 = c2 * vt.dot(q);
    return out;
}

// Predicted change in the test loss when U is removed. Positive = the test
// loss is predicted to increase.
inline double test_loss_influence(const TrainedModel& tm, const Dataset& data,
                                  const GroupSpec& U, const Sample& zt, InfluenceOrder order,
                                  const TrainConfig& cfg) {
    detail::check_group_proper(U, data.size());
    if (U.size() == 0) return 0.0;
    Vector gt = sample_gradient(tm.model, data, tm.theta_star, zt.x, zt.y);
    Vector t1 = theta1(tm, data, U, cfg);
    switch (order) {
        case InfluenceOrder::first:
            return gt.dot(-t1);
        case InfluenceOrder::first_unscaled:
            return (1.0 - U.fraction(data.size())) * gt.dot(-t1);
        case InfluenceOrder::second:
            return gt.dot(-t1 + theta2(tm, data, U, t1, cfg));
    }
    throw FormatError("unreachable order");
}

// Individual removal influence of sample i on the test loss:
//   (1/m) grad(z_t)' H^{-1} grad(z_i).
inline double individual_influence(const TrainedModel& tm, const Dataset& data, Eigen::Index i,
                                   const Sample& zt, const TrainConfig& cfg) {
    Vector gi = per_sample_gradient(tm.model, data, tm.theta_star, i);
    gi += tm.model.l2_strength * tm.theta_star;
    Vector gt = sample_gradient(tm.model, data, tm.theta_star, zt.x, zt.y);
    Vector u = inverse_hvp(tm, data, gi, cfg);
    return gt.dot(u) / static_cast<double>(data.size());
}

// (Term1, Term2) split of the second-order removal influence; their sum
// equals test_loss_influence(order = second) up to CG tolerance.
inline std::pair<double, double> term_decomposition(const TrainedModel& tm, const Dataset& data,
                                                    const GroupSpec& U, const Sample& zt,
                                                    const TrainConfig& cfg) {
    detail::check_group_proper(U, data.size());
    if (U.size() == 0) return {0.0, 0.0};
    GroupInfluenceScores s = score_group(tm, data, U, zt, cfg);
    return {s.term1, s.term2};
}

}  // namespace gi
