// Differentiable maps from parameters to targets.
#pragma once
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

namespace gfl {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class Model {
public:
    virtual ~Model() = default;
    virtual int in_dim() const = 0;
    virtual int out_dim() const = 0;
    virtual Vec value(const Vec& w) const = 0;
    virtual Mat jacobian(const Vec& w) const;
    virtual std::string name() const = 0;
};

// Central differences, per-component step 1e-6*max(1,|w_i|).
inline Mat fd_jacobian(const Model& m, const Vec& w) {
    Mat J(m.out_dim(), m.in_dim());
    Vec wp = w;
    for (int j = 0; j < m.in_dim(); ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(w[j]));
        wp[j] = w[j] + h;
        Vec fp = m.value(wp);
        wp[j] = w[j] - h;
        Vec fm = m.value(wp);
        wp[j] = w[j];
        J.col(j) = (fp - fm) / (2.0 * h);
    }
    return J;
}

inline Mat Model::jacobian(const Vec& w) const { return fd_jacobian(*this, w); }

// max_ij |A_ij - B_ij| / max(1, max|B|)
inline double relative_max_error(const Mat& a, const Mat& b) {
    const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace gfl
