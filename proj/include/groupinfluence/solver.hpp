#pragma once

#include "groupinfluence/loss.hpp"
#include "groupinfluence/types.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>
#include <vector>

namespace gi {

struct TrainConfig {
    double grad_tol = 1e-8;
    int max_outer_iters = 200;
    double cg_tol = 1e-10;
    int cg_max_iters = 10000;

    void validate() const {
        if (!(grad_tol > 0) || !(cg_tol > 0) || max_outer_iters <= 0 || cg_max_iters <= 0)
            throw DimensionError("TrainConfig fields must be positive");
    }
};

// theta* with its convergence certificate; the anchor point for all
// influence expansions.
struct TrainedModel {
    Vector theta_star;
    double final_grad_norm = 0.0;
    int iterations_used = 0;
    LossModel model;
    std::string data_id;
};

using LinearOperator = std::function<Vector(const Vector&)>;

// Conjugate gradient for SPD operators, x0 = 0, no preconditioner.
// Returns x with ||A x - b|| <= tol * ||b||.
inline Vector cg_solve(const LinearOperator& apply_H, const Vector& b, double tol,
                       int max_iters, std::vector<double>* residual_history = nullptr) {
    const double bnorm = b.norm();
    Vector x = Vector::Zero(b.size());
    if (bnorm == 0.0) return x;
    Vector r = b;  // b - A*0
    Vector p = r;
    double rs = r.squaredNorm();
    if (residual_history) residual_history->push_back(std::sqrt(rs));
    for (int it = 0; it < max_iters; ++it) {
        if (std::sqrt(rs) <= tol * bnorm) return x;
        Vector Ap = apply_H(p);
        double pAp = p.dot(Ap);
        if (!std::isfinite(pAp) || pAp <= 0.0)
            throw ConvergenceError("cg_solve: operator not positive definite (p'Ap = " +
                                       std::to_string(pAp) + ")",
                                   std::sqrt(rs));
        double alpha = rs / pAp;
        x += alpha * p;
        r -= alpha * Ap;
        double rs_new = r.squaredNorm();
        if (!std::isfinite(rs_new))
            throw ConvergenceError("cg_solve: non-finite residual", rs_new);
        if (residual_history) residual_history->push_back(std::sqrt(rs_new));
        p = r + (rs_new / rs) * p;
        rs = rs_new;
    }
    if (std::sqrt(rs) <= tol * bnorm) return x;
    throw ConvergenceError("cg_solve: tolerance not reached in " + std::to_string(max_iters) +
                               " iterations",
                           std::sqrt(rs));
}

// Damped Newton with CG-solved steps and Armijo backtracking (start 1.0,
// shrink x0.5, slope factor 1e-4). Minimizes
//   (1/m) sum_i w_i loss_i(theta) + (l2/2)||theta||^2.
// Deterministic: identical inputs give bitwise-identical outputs.
inline TrainedModel train(const LossModel& model, const Dataset& data,
                          const std::optional<Vector>& weights, const TrainConfig& config,
                          const Vector* warm_start = nullptr) {
    model.validate();
    data.validate();
    config.validate();
    const Eigen::Index n = param_dim(model, data);
    Vector theta = warm_start ? *warm_start : Vector::Zero(n);
    if (theta.size() != n) throw DimensionError("warm start axis theta: wrong size");

    double gnorm = 0.0;
    int it = 0;
    for (; it < config.max_outer_iters; ++it) {
        Vector g = total_gradient(model, data, theta, weights);
        gnorm = g.norm();
        if (!std::isfinite(gnorm)) throw ConvergenceError("train: non-finite gradient", gnorm);
        if (gnorm <= config.grad_tol)
            return TrainedModel{theta, gnorm, it, model, data.id};

        auto apply_H = [&](const Vector& v) { return hvp(model, data, theta, v, weights); };
        Vector step = cg_solve(apply_H, g, config.cg_tol, config.cg_max_iters);

        double f0 = total_loss(model, data, theta, weights);
        double slope = g.dot(step);  // directional derivative along -step
        // predicted decrease below the rounding floor of f0: loss comparisons
        // are pure noise here and the quadratic model is essentially exact, so
        // take the unmodified Newton step
        if (slope <= 1e-14 * (1.0 + std::abs(f0))) {
            theta -= step;
            continue;
        }
        double t = 1.0;
        Vector theta_next = theta - step;
        for (int ls = 0; ls < 60; ++ls) {
            double f1 = total_loss(model, data, theta_next, weights);
            if (f1 <= f0 - 1e-4 * t * slope) break;
            t *= 0.5;
            theta_next = theta - t * step;
        }
        theta = theta_next;
    }
    Vector g = total_gradient(model, data, theta, weights);
    gnorm = g.norm();
    if (gnorm <= config.grad_tol) return TrainedModel{theta, gnorm, it, model, data.id};
    throw ConvergenceError("train: gradient norm " + std::to_string(gnorm) +
                               " above tolerance after " +
                               std::to_string(config.max_outer_iters) + " iterations",
                           gnorm);
}

inline TrainedModel train(const LossModel& model, const Dataset& data,
                          const TrainConfig& config) {
    return train(model, data, std::nullopt, config);
}

// H^{-1} b with H = full-objective Hessian at theta* (l2 and damping
// included), solved by CG.
inline Vector inverse_hvp(const TrainedModel& tm, const Dataset& data, const Vector& b,
                          const TrainConfig& config) {
    auto apply_H = [&](const Vector& v) { return hvp(tm.model, data, tm.theta_star, v); };
    return cg_solve(apply_H, b, config.cg_tol, config.cg_max_iters);
}

// --- model file: magic "GTRC", version u16, family u8, lambda f64,
//     d u32, k u32, then little-endian f64 parameters. ---

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
    // this library targets little-endian hosts only
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw FormatError("model file truncated");
    return value;
}

}  // namespace detail

inline void save_model(const TrainedModel& tm, const std::string& path, std::uint32_t d,
                       std::uint32_t k) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open model file for writing: " + path);
    os.write("GTRC", 4);
    detail::write_le<std::uint16_t>(os, 1);
    detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(tm.model.family));
    detail::write_le<double>(os, tm.model.l2_strength);
    detail::write_le<std::uint32_t>(os, d);
    detail::write_le<std::uint32_t>(os, k);
    for (Eigen::Index i = 0; i < tm.theta_star.size(); ++i)
        detail::write_le<double>(os, tm.theta_star[i]);
    if (!os) throw FormatError("write failed: " + path);
}

struct LoadedModel {
    TrainedModel tm;
    std::uint32_t d = 0;
    std::uint32_t k = 0;
};

inline LoadedModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open model file: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GTRC", 4) != 0)
        throw FormatError("bad model magic in " + path);
    auto version = detail::read_le<std::uint16_t>(is);
    if (version != 1) throw FormatError("unsupported model version " + std::to_string(version));
    LoadedModel out;
    out.tm.model.family = static_cast<LossFamily>(detail::read_le<std::uint8_t>(is));
    out.tm.model.l2_strength = detail::read_le<double>(is);
    out.d = detail::read_le<std::uint32_t>(is);
    out.k = detail::read_le<std::uint32_t>(is);
    Eigen::Index n = out.tm.model.family == LossFamily::softmax
                         ? static_cast<Eigen::Index>(out.d) * out.k
                         : static_cast<Eigen::Index>(out.d);
    out.tm.theta_star.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) out.tm.theta_star[i] = detail::read_le<double>(is);
    return out;
}

}  // namespace gi
