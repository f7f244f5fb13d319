#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace gi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Thrown when two objects disagree on a dimension; the message names the axis.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConvergenceError : std::runtime_error {
    ConvergenceError(const std::string& what, double residual)
        : std::runtime_error(what), residual_norm(residual) {}
    double residual_norm;
};

enum class LossFamily : std::uint8_t {
    binary_logistic = 0,
    softmax = 1,
    quadratic = 2,
};

inline const char* family_name(LossFamily f) {
    switch (f) {
        case LossFamily::binary_logistic: return "binary_logistic";
        case LossFamily::softmax: return "softmax";
        case LossFamily::quadratic: return "quadratic";
    }
    return "?";
}

inline LossFamily family_from_name(const std::string& s) {
    if (s == "binary_logistic" || s == "logistic") return LossFamily::binary_logistic;
    if (s == "softmax") return LossFamily::softmax;
    if (s == "quadratic") return LossFamily::quadratic;
    throw FormatError("unknown loss family: " + s);
}

// Loss family plus regularization. l2_strength applies as (l2/2)*||theta||^2 on
// the total objective only; per-sample gradients and Hessians exclude it.
// hessian_damping is added as damping*I inside every inverse-Hessian solve.
struct LossModel {
    LossFamily family = LossFamily::binary_logistic;
    double l2_strength = 0.0;
    double hessian_damping = 0.0;

    void validate() const {
        if (!(l2_strength >= 0.0) || !std::isfinite(l2_strength))
            throw DimensionError("l2_strength must be finite and >= 0");
        if (!(hessian_damping >= 0.0) || !std::isfinite(hessian_damping))
            throw DimensionError("hessian_damping must be finite and >= 0");
    }
};

// Feature matrix (m x d) with labels: class ids for classification, real
// targets for regression. class_count == 0 means "absent" (regression).
struct Dataset {
    Matrix features;
    Vector labels;
    int class_count = 0;
    std::string id;

    Eigen::Index size() const { return features.rows(); }
    Eigen::Index dim() const { return features.cols(); }

    void validate() const {
        if (features.rows() < 1) throw DimensionError("dataset axis m: need m >= 1");
        if (features.cols() < 1) throw DimensionError("dataset axis d: need d >= 1");
        if (labels.size() != features.rows())
            throw DimensionError("dataset axis m: labels length " +
                                 std::to_string(labels.size()) + " != feature rows " +
                                 std::to_string(features.rows()));
        if (class_count > 0) {
            for (Eigen::Index i = 0; i < labels.size(); ++i) {
                double y = labels[i];
                if (y != std::floor(y) || y < 0 || y >= class_count)
                    throw FormatError("label " + std::to_string(y) + " at row " +
                                      std::to_string(i) + " outside [0, " +
                                      std::to_string(class_count) + ")");
            }
        }
    }
};

// One (x, y) sample, typically a test point.
struct Sample {
    Vector x;
    double y = 0.0;
};

inline Sample sample_at(const Dataset& data, Eigen::Index i) {
    if (i < 0 || i >= data.size())
        throw IndexError("sample index " + std::to_string(i) + " out of range [0, " +
                         std::to_string(data.size()) + ")");
    return Sample{data.features.row(i).transpose(), data.labels[i]};
}

// Sorted, duplicate-free index set U into a dataset. U = S is rejected by the
// influence routines (p = 1 singularity).
struct GroupSpec {
    std::vector<int> indices;

    static GroupSpec of(std::vector<int> idx) {
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        return GroupSpec{std::move(idx)};
    }

    int size() const { return static_cast<int>(indices.size()); }

    double fraction(Eigen::Index m) const {
        return static_cast<double>(indices.size()) / static_cast<double>(m);
    }

    void validate(Eigen::Index m) const {
        if (static_cast<Eigen::Index>(indices.size()) >= m)
            throw DimensionError("group size " + std::to_string(indices.size()) +
                                 " must be < m = " + std::to_string(m));
        int prev = -1;
        for (int i : indices) {
            if (i <= prev) throw FormatError("group indices must be sorted and unique");
            if (i < 0 || i >= m)
                throw IndexError("group index " + std::to_string(i) + " out of range");
            prev = i;
        }
    }
};

// Parameter dimension for a model over a dataset: d for binary/quadratic,
// d * class_count for softmax (flattened row-major in class blocks: block c
// occupies [c*d, (c+1)*d)).
inline Eigen::Index param_dim(const LossModel& model, const Dataset& data) {
    if (model.family == LossFamily::softmax) {
        if (data.class_count < 2)
            throw DimensionError("softmax axis k: dataset has no class_count");
        return data.dim() * data.class_count;
    }
    return data.dim();
}

inline void check_theta_dim(const LossModel& model, const Dataset& data, const Vector& theta) {
    if (theta.size() != param_dim(model, data))
        throw DimensionError("theta axis: got " + std::to_string(theta.size()) +
                             ", expected " + std::to_string(param_dim(model, data)));
}

}  // namespace gi
