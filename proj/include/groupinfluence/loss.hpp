#pragma once

#include "groupinfluence/types.hpp"

#include <cmath>
#include <optional>

namespace gi {

namespace detail {

inline double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    double e = std::exp(s);
    return e / (1.0 + e);
}

// log(1 + e^s) - y*s, stable for large |s|
inline double logistic_loss(double s, double y) {
    double softplus = s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    return softplus - y * s;
}

// class probabilities for one softmax row of logits
inline Vector softmax_probs(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
    double mx = logits.maxCoeff();
    Vector p = (logits.transpose().array() - mx).exp();
    p /= p.sum();
    return p;
}

// view theta (flattened, class blocks of length d) as a d x k matrix
inline Eigen::Map<const Matrix> theta_blocks(const Vector& theta, Eigen::Index d, int k) {
    return Eigen::Map<const Matrix>(theta.data(), d, k);
}

inline void check_weights(const Dataset& data, const std::optional<Vector>& w) {
    if (w && w->size() != data.size())
        throw DimensionError("weights axis m: got " + std::to_string(w->size()) +
                             ", expected " + std::to_string(data.size()));
}

}  // namespace detail

// Loss of one sample (x, y) under theta, regularizer excluded.
inline double sample_loss(const LossModel& model, const Dataset& data, const Vector& theta,
                          const Vector& x, double y) {
    switch (model.family) {
        case LossFamily::binary_logistic:
            return detail::logistic_loss(theta.dot(x), y);
        case LossFamily::quadratic: {
            double r = theta.dot(x) - y;
            return 0.5 * r * r;
        }
        case LossFamily::softmax: {
            auto T = detail::theta_blocks(theta, data.dim(), data.class_count);
            Eigen::RowVectorXd logits = x.transpose() * T;
            double mx = logits.maxCoeff();
            double lse = mx + std::log((logits.array() - mx).exp().sum());
            return lse - logits[static_cast<int>(y)];
        }
    }
    throw FormatError("unreachable loss family");
}

// Gradient of one sample's loss, regularizer excluded.
inline Vector sample_gradient(const LossModel& model, const Dataset& data, const Vector& theta,
                              const Vector& x, double y) {
    switch (model.family) {
        case LossFamily::binary_logistic:
            return (detail::sigmoid(theta.dot(x)) - y) * x;
        case LossFamily::quadratic:
            return (theta.dot(x) - y) * x;
        case LossFamily::softmax: {
            Eigen::Index d = data.dim();
            int k = data.class_count;
            auto T = detail::theta_blocks(theta, d, k);
            Vector p = detail::softmax_probs(x.transpose() * T);
            p[static_cast<int>(y)] -= 1.0;
            Vector g(d * k);
            for (int c = 0; c < k; ++c) g.segment(c * d, d) = p[c] * x;
            return g;
        }
    }
    throw FormatError("unreachable loss family");
}

// Hessian of one sample's loss applied to v, regularizer excluded.
inline Vector sample_hvp(const LossModel& model, const Dataset& data, const Vector& theta,
                         const Vector& x, const Vector& v) {
    switch (model.family) {
        case LossFamily::binary_logistic: {
            double s = detail::sigmoid(theta.dot(x));
            return (s * (1.0 - s) * x.dot(v)) * x;
        }
        case LossFamily::quadratic:
            return x.dot(v) * x;
        case LossFamily::softmax: {
            Eigen::Index d = data.dim();
            int k = data.class_count;
            auto T = detail::theta_blocks(theta, d, k);
            auto V = detail::theta_blocks(v, d, k);
            Vector p = detail::softmax_probs(x.transpose() * T);
            Vector t = V.transpose() * x;  // t_c = v_c . x
            double pt = p.dot(t);
            Vector out(d * k);
            for (int c = 0; c < k; ++c) out.segment(c * d, d) = (p[c] * (t[c] - pt)) * x;
            return out;
        }
    }
    throw FormatError("unreachable loss family");
}

inline double per_sample_loss(const LossModel& model, const Dataset& data, const Vector& theta,
                              Eigen::Index i) {
    check_theta_dim(model, data, theta);
    Sample z = sample_at(data, i);
    return sample_loss(model, data, theta, z.x, z.y);
}

inline Vector per_sample_gradient(const LossModel& model, const Dataset& data,
                                  const Vector& theta, Eigen::Index i) {
    check_theta_dim(model, data, theta);
    Sample z = sample_at(data, i);
    return sample_gradient(model, data, theta, z.x, z.y);
}

inline Vector per_sample_hvp(const LossModel& model, const Dataset& data, const Vector& theta,
                             Eigen::Index i, const Vector& v) {
    check_theta_dim(model, data, theta);
    Sample z = sample_at(data, i);
    return sample_hvp(model, data, theta, z.x, v);
}

// (1/m) sum_i w_i * loss_i + (l2/2)||theta||^2. Weights default to all ones.
inline double total_loss(const LossModel& model, const Dataset& data, const Vector& theta,
                         const std::optional<Vector>& weights = std::nullopt) {
    check_theta_dim(model, data, theta);
    detail::check_weights(data, weights);
    const Eigen::Index m = data.size();
    double acc = 0.0;
    switch (model.family) {
        case LossFamily::binary_logistic: {
            Vector s = data.features * theta;
            for (Eigen::Index i = 0; i < m; ++i) {
                double li = detail::logistic_loss(s[i], data.labels[i]);
                acc += weights ? (*weights)[i] * li : li;
            }
            break;
        }
        case LossFamily::quadratic: {
            Vector r = data.features * theta - data.labels;
            if (weights)
                acc = 0.5 * (weights->array() * r.array().square()).sum();
            else
                acc = 0.5 * r.squaredNorm();
            break;
        }
        case LossFamily::softmax: {
            auto T = detail::theta_blocks(theta, data.dim(), data.class_count);
            Matrix logits = data.features * T;
            for (Eigen::Index i = 0; i < m; ++i) {
                double mx = logits.row(i).maxCoeff();
                double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
                double li = lse - logits(i, static_cast<int>(data.labels[i]));
                acc += weights ? (*weights)[i] * li : li;
            }
            break;
        }
    }
    double out = acc / static_cast<double>(m) + 0.5 * model.l2_strength * theta.squaredNorm();
    if (!std::isfinite(out)) throw ConvergenceError("non-finite total loss", out);
    return out;
}

// (1/m) sum_i w_i * grad_i + l2 * theta.
inline Vector total_gradient(const LossModel& model, const Dataset& data, const Vector& theta,
                             const std::optional<Vector>& weights = std::nullopt) {
    check_theta_dim(model, data, theta);
    detail::check_weights(data, weights);
    const Eigen::Index m = data.size();
    const double inv_m = 1.0 / static_cast<double>(m);
    Vector g;
    switch (model.family) {
        case LossFamily::binary_logistic: {
            Vector s = data.features * theta;
            Vector r(m);
            for (Eigen::Index i = 0; i < m; ++i) r[i] = detail::sigmoid(s[i]) - data.labels[i];
            if (weights) r.array() *= weights->array();
            g = inv_m * (data.features.transpose() * r);
            break;
        }
        case LossFamily::quadratic: {
            Vector r = data.features * theta - data.labels;
            if (weights) r.array() *= weights->array();
            g = inv_m * (data.features.transpose() * r);
            break;
        }
        case LossFamily::softmax: {
            Eigen::Index d = data.dim();
            int k = data.class_count;
            auto T = detail::theta_blocks(theta, d, k);
            Matrix logits = data.features * T;
            Matrix R(m, k);
            for (Eigen::Index i = 0; i < m; ++i) {
                Vector p = detail::softmax_probs(logits.row(i));
                p[static_cast<int>(data.labels[i])] -= 1.0;
                if (weights) p *= (*weights)[i];
                R.row(i) = p.transpose();
            }
            Matrix G = inv_m * (data.features.transpose() * R);  // d x k
            g = Eigen::Map<Vector>(G.data(), d * k);
            break;
        }
    }
    return g + model.l2_strength * theta;
}

// Full-objective Hessian-vector product: (1/m) sum_i w_i * H_i v
// + (l2 + damping) v. This is the H of every inverse-Hessian solve.
inline Vector hvp(const LossModel& model, const Dataset& data, const Vector& theta,
                  const Vector& v, const std::optional<Vector>& weights = std::nullopt) {
    check_theta_dim(model, data, theta);
    if (v.size() != theta.size())
        throw DimensionError("hvp axis theta: v has " + std::to_string(v.size()) +
                             " entries, expected " + std::to_string(theta.size()));
    detail::check_weights(data, weights);
    const Eigen::Index m = data.size();
    const double inv_m = 1.0 / static_cast<double>(m);
    Vector out;
    switch (model.family) {
        case LossFamily::binary_logistic: {
            Vector s = data.features * theta;
            Vector xv = data.features * v;
            Vector c(m);
            for (Eigen::Index i = 0; i < m; ++i) {
                double sg = detail::sigmoid(s[i]);
                c[i] = sg * (1.0 - sg) * xv[i];
            }
            if (weights) c.array() *= weights->array();
            out = inv_m * (data.features.transpose() * c);
            break;
        }
        case LossFamily::quadratic: {
            Vector xv = data.features * v;
            if (weights) xv.array() *= weights->array();
            out = inv_m * (data.features.transpose() * xv);
            break;
        }
        case LossFamily::softmax: {
            Eigen::Index d = data.dim();
            int k = data.class_count;
            auto T = detail::theta_blocks(theta, d, k);
            auto V = detail::theta_blocks(v, d, k);
            Matrix logits = data.features * T;
            Matrix tmat = data.features * V;  // m x k, t_ic = v_c . x_i
            Matrix Q(m, k);
            for (Eigen::Index i = 0; i < m; ++i) {
                Vector p = detail::softmax_probs(logits.row(i));
                double pt = p.dot(tmat.row(i).transpose());
                Vector q = p.array() * (tmat.row(i).transpose().array() - pt);
                if (weights) q *= (*weights)[i];
                Q.row(i) = q.transpose();
            }
            Matrix O = inv_m * (data.features.transpose() * Q);
            out = Eigen::Map<Vector>(O.data(), d * k);
            break;
        }
    }
    return out + (model.l2_strength + model.hessian_damping) * v;
}

// Raw subset Hessian-vector product: sum over the group of per-sample
// Hessians applied to v. No 1/m factor, no l2, no damping; callers scale.
inline Vector hvp_subset(const LossModel& model, const Dataset& data, const Vector& theta,
                         const Vector& v, const GroupSpec& subset) {
    check_theta_dim(model, data, theta);
    if (v.size() != theta.size())
        throw DimensionError("hvp axis theta: v size mismatch");
    subset.validate(data.size());
    Vector out = Vector::Zero(theta.size());
    for (int i : subset.indices)
        out += per_sample_hvp(model, data, theta, i, v);
    return out;
}

}  // namespace gi
