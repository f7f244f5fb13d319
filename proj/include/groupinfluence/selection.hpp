#pragma once

#include "groupinfluence/influence.hpp"
#include "groupinfluence/rng.hpp"

#include <functional>
#include <limits>
#include <numeric>
#include <optional>

namespace gi {

// Exact Euclidean projection onto the L1 ball of the given radius
// (sort-based). Inputs already inside the ball pass through unchanged.
inline Vector project_l1(const Vector& v, double radius) {
    if (!(radius > 0.0)) throw DimensionError("project_l1: radius must be > 0");
    if (!v.allFinite()) throw FormatError("project_l1: non-finite input");
    if (v.lpNorm<1>() <= radius) return v;
    Vector u = v.cwiseAbs();
    std::vector<double> sorted(u.data(), u.data() + u.size());
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    double cum = 0.0, tau = 0.0;
    int rho = 0;
    for (std::size_t j = 0; j < sorted.size(); ++j) {
        cum += sorted[j];
        double cand = (cum - radius) / double(j + 1);
        if (sorted[j] - cand > 0.0) {
            rho = int(j + 1);
            tau = cand;
        }
    }
    (void)rho;
    Vector out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        double mag = std::max(u[i] - tau, 0.0);
        out[i] = v[i] >= 0.0 ? mag : -mag;
    }
    return out;
}

// Relaxed quadratic selection objective
//   f(w) = c1 * a'w + c2 * w'Bw,  B = CD realized matrix-free:
// apply_B(w)_i = v1' Hess_i H^{-1} sum_j w_j grad_j  with v1 = H^{-1} grad_t.
struct SelectionProblem {
    Vector a;
    std::function<Vector(const Vector&)> apply_B;
    std::function<Vector(const Vector&)> apply_Bt;
    double c1 = 0.0;
    double c2 = 0.0;
    int k = 0;
    // context for evaluating the discrete objective of the extracted group
    const TrainedModel* tm = nullptr;
    const Dataset* data = nullptr;
    Sample zt;
    TrainConfig cfg;
};

inline SelectionProblem build_selection_problem(const TrainedModel& tm, const Dataset& data,
                                                const Sample& zt, int k,
                                                const TrainConfig& cfg) {
    const Eigen::Index m = data.size();
    if (k < 1 || k >= m)
        throw DimensionError("selection k = " + std::to_string(k) + " must be in [1, m)");
    const double p = double(k) / double(m);

    SelectionProblem prob;
    prob.k = k;
    prob.c1 = (1.0 / double(m)) * (1.0 - 2.0 * p) / ((1.0 - p) * (1.0 - p));
    prob.c2 = 1.0 / ((1.0 - p) * (1.0 - p) * double(m) * double(m));
    prob.tm = &tm;
    prob.data = &data;
    prob.zt = zt;
    prob.cfg = cfg;

    Vector gt = sample_gradient(tm.model, data, tm.theta_star, zt.x, zt.y);
    Vector v1 = inverse_hvp(tm, data, gt, cfg);
    const double l2 = tm.model.l2_strength;

    // per-sample quantities carry their share of the regularizer:
    // grad_i + l2 * theta*, Hess_i + l2 * I
    prob.a.resize(m);
    for (Eigen::Index i = 0; i < m; ++i)
        prob.a[i] = v1.dot(per_sample_gradient(tm.model, data, tm.theta_star, i) +
                           l2 * tm.theta_star);

    auto weighted_grad_sum = [&tm, &data, l2](const Vector& w) {
        Vector g = Vector::Zero(tm.theta_star.size());
        for (Eigen::Index j = 0; j < data.size(); ++j)
            if (w[j] != 0.0)
                g += w[j] * (per_sample_gradient(tm.model, data, tm.theta_star, j) +
                             l2 * tm.theta_star);
        return g;
    };
    auto weighted_hvp = [&tm, &data, l2](const Vector& w, const Vector& v) {
        Vector out = Vector::Zero(v.size());
        for (Eigen::Index i = 0; i < data.size(); ++i)
            if (w[i] != 0.0) {
                Sample z = sample_at(data, i);
                out += w[i] * (sample_hvp(tm.model, data, tm.theta_star, z.x, v) + l2 * v);
            }
        return out;
    };

    // (Bw)_i = v1' Hess_i H^{-1} g(w)
    prob.apply_B = [&tm, &data, v1, cfg, l2, weighted_grad_sum](const Vector& w) {
        Vector u = inverse_hvp(tm, data, weighted_grad_sum(w), cfg);
        Vector out(data.size());
        for (Eigen::Index i = 0; i < data.size(); ++i) {
            Sample z = sample_at(data, i);
            out[i] = v1.dot(sample_hvp(tm.model, data, tm.theta_star, z.x, u) + l2 * u);
        }
        return out;
    };
    // (B'w)_j = grad_j' H^{-1} (sum_i w_i Hess_i) v1
    prob.apply_Bt = [&tm, &data, v1, cfg, l2, weighted_hvp](const Vector& w) {
        Vector u = inverse_hvp(tm, data, weighted_hvp(w, v1), cfg);
        Vector out(data.size());
        for (Eigen::Index j = 0; j < data.size(); ++j)
            out[j] = u.dot(per_sample_gradient(tm.model, data, tm.theta_star, j) +
                           l2 * tm.theta_star);
        return out;
    };
    return prob;
}

struct PgdConfig {
    double step = 0.0;  // 0 = auto (0.5 / power-iteration Lipschitz estimate)
    int iters = 500;
    std::uint64_t seed = 0;
};

struct SelectionResult {
    Vector weights;
    GroupSpec chosen;
    double objective_relaxed = 0.0;
    double objective_discrete = 0.0;
};

namespace detail {

// top-k indices by |w|, ties broken by lower index
inline GroupSpec top_k_by_magnitude(const Vector& w, int k) {
    std::vector<int> order(std::size_t(w.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return std::abs(w[a]) > std::abs(w[b]);
    });
    order.resize(std::size_t(k));
    return GroupSpec::of(std::move(order));
}

}  // namespace detail

// Projected gradient ascent on f(w) = c1 a'w + c2 w'Bw over the L1 ball of
// radius k intersected with [0,1]^m (clip, then project). A step that lowers
// the objective is rejected and the step size halved.
inline SelectionResult select_group(const SelectionProblem& prob, const PgdConfig& pgd = {}) {
    const Eigen::Index m = prob.a.size();
    const double radius = double(prob.k);

    auto clip01 = [](Vector w) {
        return w.cwiseMax(0.0).cwiseMin(1.0);
    };
    auto symmetric_apply = [&](const Vector& w) {
        return Vector(prob.apply_B(w) + prob.apply_Bt(w));
    };

    double step = pgd.step;
    if (step <= 0.0) {
        // Lipschitz estimate of the gradient via power iteration on c2(B+B')
        Rng rng("selection.power", pgd.seed);
        Vector x(m);
        for (Eigen::Index i = 0; i < m; ++i) x[i] = rng.normal();
        x.normalize();
        double lambda = 0.0;
        for (int it = 0; it < 20; ++it) {
            Vector y = prob.c2 * symmetric_apply(x);
            double n = y.norm();
            if (n < 1e-300) break;
            lambda = n;
            x = y / n;
        }
        step = lambda > 0.0 ? 0.5 / lambda : 1.0;
    }

    auto ascend = [&](Vector w, double step0) {
        double s = step0;
        Vector Bw = prob.apply_B(w);
        double f = prob.c1 * prob.a.dot(w) + prob.c2 * w.dot(Bw);
        for (int it = 0; it < pgd.iters && s > 1e-14; ++it) {
            Vector grad = prob.c1 * prob.a + prob.c2 * (Bw + prob.apply_Bt(w));
            Vector w_next = project_l1(clip01(w + s * grad), radius);
            Vector Bw_next = prob.apply_B(w_next);
            double f_next = prob.c1 * prob.a.dot(w_next) + prob.c2 * w_next.dot(Bw_next);
            if (!std::isfinite(f_next))
                throw ConvergenceError(
                    "select_group: non-finite objective; lower the step size", f_next);
            if (f_next < f - 1e-14 * std::max(1.0, std::abs(f))) {
                s *= 0.5;  // reject and retry smaller
                continue;
            }
            w = std::move(w_next);
            Bw = std::move(Bw_next);
            f = f_next;
        }
        return std::pair<Vector, double>{std::move(w), f};
    };

    // two starts: the uniform feasible point and the indicator of the best
    // first-order set (so the result never falls below that baseline)
    std::vector<int> by_a(static_cast<std::size_t>(m));
    std::iota(by_a.begin(), by_a.end(), 0);
    std::stable_sort(by_a.begin(), by_a.end(),
                     [&](int i, int j) { return prob.a[i] > prob.a[j]; });
    Vector indicator = Vector::Zero(m);
    for (int i = 0; i < prob.k; ++i) indicator[by_a[std::size_t(i)]] = 1.0;

    auto discrete_of = [&](const Vector& w) {
        GroupSpec g = detail::top_k_by_magnitude(w, prob.k);
        double v = test_loss_influence(*prob.tm, *prob.data, g, prob.zt,
                                       InfluenceOrder::second, prob.cfg);
        return std::pair<GroupSpec, double>{std::move(g), v};
    };

    SelectionResult res;
    res.objective_discrete = -std::numeric_limits<double>::infinity();
    res.objective_relaxed = -std::numeric_limits<double>::infinity();
    Vector starts[] = {Vector::Constant(m, double(prob.k) / double(m)), indicator};
    for (Vector& w0 : starts) {
        auto [w, f] = ascend(std::move(w0), step);
        res.objective_relaxed = std::max(res.objective_relaxed, f);
        auto [g, v] = discrete_of(w);
        if (v > res.objective_discrete) {
            res.objective_discrete = v;
            res.chosen = std::move(g);
            res.weights = std::move(w);
        }
    }
    // the untouched indicator is itself a candidate rounding
    auto [gi, vi] = discrete_of(indicator);
    if (vi > res.objective_discrete) {
        res.objective_discrete = vi;
        res.chosen = std::move(gi);
        res.weights = std::move(indicator);
    }
    return res;
}

// Baseline: the k samples with the largest individual influence on z_t,
// ties broken by lower index.
inline GroupSpec greedy_first_order_group(const TrainedModel& tm, const Dataset& data,
                                          const Sample& zt, int k, const TrainConfig& cfg) {
    const Eigen::Index m = data.size();
    if (k < 1 || k >= m)
        throw DimensionError("greedy k = " + std::to_string(k) + " must be in [1, m)");
    Vector gt = sample_gradient(tm.model, data, tm.theta_star, zt.x, zt.y);
    Vector v1 = inverse_hvp(tm, data, gt, cfg);
    Vector score(m);
    for (Eigen::Index i = 0; i < m; ++i)
        score[i] = v1.dot(per_sample_gradient(tm.model, data, tm.theta_star, i) +
                          tm.model.l2_strength * tm.theta_star) /
                   double(m);
    std::vector<int> order(static_cast<std::size_t>(m));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return score[a] > score[b]; });
    order.resize(std::size_t(k));
    return GroupSpec::of(std::move(order));
}

// Exhaustive best size-k group by second-order influence; only for tiny m.
inline GroupSpec best_group_exhaustive(const TrainedModel& tm, const Dataset& data,
                                       const Sample& zt, int k, const TrainConfig& cfg,
                                       double* best_value = nullptr) {
    const int m = int(data.size());
    std::vector<int> comb(static_cast<std::size_t>(k));
    std::iota(comb.begin(), comb.end(), 0);
    GroupSpec best;
    double best_f = -std::numeric_limits<double>::infinity();
    while (true) {
        GroupSpec g = GroupSpec::of(comb);
        double f = test_loss_influence(tm, data, g, zt, InfluenceOrder::second, cfg);
        if (f > best_f) {
            best_f = f;
            best = g;
        }
        // next combination
        int i = k - 1;
        while (i >= 0 && comb[std::size_t(i)] == m - k + i) --i;
        if (i < 0) break;
        ++comb[std::size_t(i)];
        for (int j = i + 1; j < k; ++j) comb[std::size_t(j)] = comb[std::size_t(j - 1)] + 1;
    }
    if (best_value) *best_value = best_f;
    return best;
}

}  // namespace gi
