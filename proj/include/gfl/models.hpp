// Baseline and counterexample models.
#pragma once
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <utility>

#include "model.hpp"

namespace gfl {

class LinearModel : public Model {
public:
    LinearModel(Mat A, Vec offset) : A_(std::move(A)), b_(std::move(offset)) {
        if (b_.size() != A_.rows()) throw std::invalid_argument("offset size must match rows of A");
    }
    explicit LinearModel(Mat A) : LinearModel(A, Vec::Zero(A.rows())) {}

    int in_dim() const override { return static_cast<int>(A_.cols()); }
    int out_dim() const override { return static_cast<int>(A_.rows()); }
    Vec value(const Vec& w) const override { return A_ * w + b_; }
    Mat jacobian(const Vec&) const override { return A_; }
    std::string name() const override { return "linear"; }

    const Mat& A() const { return A_; }
    const Vec& offset() const { return b_; }

    // w(t) = A^T (A A^T)^{-1} (I - exp(-A A^T t)) (f - offset), started at w = 0.
    Vec closed_form(const Vec& f, double t) const {
        Eigen::SelfAdjointEigenSolver<Mat> es(A_ * A_.transpose());
        const Vec& lam = es.eigenvalues();
        const Mat& Q = es.eigenvectors();
        Vec r = Q.transpose() * (f - b_);
        for (int i = 0; i < r.size(); ++i) r[i] *= -std::expm1(-lam[i] * t) / lam[i];
        return A_.transpose() * (Q * r);
    }

private:
    Mat A_;
    Vec b_;
};

inline double smallest_singular_value(const Mat& A) {
    Eigen::JacobiSVD<Mat> svd(A);
    return svd.singularValues().minCoeff();
}

template <class Rng>
LinearModel make_linear_surjective(int d, int W, Rng& rng, double min_sv = 0.1) {
    if (W < d) throw std::invalid_argument("surjective linear model needs W >= d");
    std::normal_distribution<double> g(0.0, 1.0);
    for (;;) {
        Mat A(d, W);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < W; ++j) A(i, j) = g(rng) / std::sqrt(static_cast<double>(W));
        if (smallest_singular_value(A) > min_sv) return LinearModel(A);
    }
}

// Phi_i(w) = sin(sum_j A_ij w_j + b_i), J = diag(cos(.)) A.
class SinTorusModel : public Model {
public:
    SinTorusModel(Mat A, Vec b) : A_(std::move(A)), b_(std::move(b)) {
        if (b_.size() != A_.rows()) throw std::invalid_argument("phase size must match rows of A");
    }
    int in_dim() const override { return static_cast<int>(A_.cols()); }
    int out_dim() const override { return static_cast<int>(A_.rows()); }
    Vec value(const Vec& w) const override { return (A_ * w + b_).array().sin().matrix(); }
    Mat jacobian(const Vec& w) const override {
        Vec c = (A_ * w + b_).array().cos().matrix();
        return c.asDiagonal() * A_;
    }
    std::string name() const override { return "sin-torus"; }
    const Mat& A() const { return A_; }
    const Vec& b() const { return b_; }

private:
    Mat A_;
    Vec b_;
};

inline SinTorusModel make_sin_torus(Mat A, Vec b) { return SinTorusModel(std::move(A), std::move(b)); }

// (sin w, sin(sqrt2 w))
inline SinTorusModel make_sqrt2_sin_curve() {
    Mat A(2, 1);
    A << 1.0, std::sqrt(2.0);
    return SinTorusModel(A, Vec::Zero(2));
}

using CurveFn = std::function<Vec(double)>;

// W = 1 model around a user curve; optional analytic derivative.
class OneParamModel : public Model {
public:
    OneParamModel(int d, CurveFn curve, CurveFn deriv = nullptr, std::string name = "curve")
        : d_(d), curve_(std::move(curve)), deriv_(std::move(deriv)), name_(std::move(name)) {}
    int in_dim() const override { return 1; }
    int out_dim() const override { return d_; }
    Vec value(const Vec& w) const override { return curve_(w[0]); }
    Mat jacobian(const Vec& w) const override {
        if (!deriv_) return fd_jacobian(*this, w);
        return deriv_(w[0]);
    }
    std::string name() const override { return name_; }

private:
    int d_;
    CurveFn curve_, deriv_;
    std::string name_;
};

inline OneParamModel make_one_param(int d, CurveFn curve, CurveFn deriv = nullptr,
                                    std::string name = "curve") {
    return OneParamModel(d, std::move(curve), std::move(deriv), std::move(name));
}

inline OneParamModel make_parabola() {
    return OneParamModel(
        2, [](double w) { return Vec{{w, w * w}}; }, [](double w) { return Vec{{1.0, 2.0 * w}}; },
        "parabola");
}

inline OneParamModel make_constant_curve(Vec p) {
    const int d = static_cast<int>(p.size());
    return OneParamModel(
        d, [p](double) { return p; }, [d](double) { return Vec(Vec::Zero(d)); }, "constant");
}

// Orthonormal basis of the complement of the column span of J.
inline Mat orthogonal_complement(const Mat& J, int* rank_out = nullptr) {
    Eigen::JacobiSVD<Mat> svd(J, Eigen::ComputeFullU);
    const auto& sv = svd.singularValues();
    const double tol = std::max(J.rows(), J.cols()) * 1e-12 * (sv.size() ? sv[0] : 0.0);
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv[i] > tol) ++rank;
    if (rank_out) *rank_out = rank;
    return svd.matrixU().rightCols(J.rows() - rank);
}

struct BarrierTarget {
    Vec f0;
    Vec normal;  // unit vector orthogonal to range(J0)
    Vec phi0;
    Mat J0;
};

// f0 = Phi(0) + l*n with n orthogonal to the range of the differential at 0.
inline BarrierTarget barrier_target(const Model& m, double l, const Vec* w0 = nullptr) {
    Vec w = w0 ? *w0 : Vec::Zero(m.in_dim());
    BarrierTarget bt;
    bt.phi0 = m.value(w);
    bt.J0 = m.jacobian(w);
    int rank = 0;
    Mat comp = orthogonal_complement(bt.J0, &rank);
    if (rank != m.in_dim())
        throw std::runtime_error("differential at the base point is rank deficient (rank " +
                                 std::to_string(rank) + " < " + std::to_string(m.in_dim()) + ")");
    if (comp.cols() == 0) throw std::runtime_error("differential is onto; no orthogonal direction");
    Vec n = comp.col(0);
    // Remove residual range components so J0^T n vanishes to rounding.
    Eigen::HouseholderQR<Mat> qr(bt.J0);
    Mat Q = qr.householderQ() * Mat::Identity(bt.J0.rows(), bt.J0.cols());
    n -= Q * (Q.transpose() * n);
    n.normalize();
    bt.normal = n;
    bt.f0 = bt.phi0 + l * n;
    return bt;
}

// Round sphere S^{W_s} embedded affinely: g(y) = center + radius * sum_i y_i frame_i.
struct SphereEmbedding {
    int ws = 2;
    Vec center;
    double radius = 1.0;
    Mat frame;  // d x (ws+1), orthonormal columns

    Vec operator()(const Vec& y) const { return center + radius * (frame * y); }
    double antipodal_length() const { return 2.0 * radius; }
};

template <class Rng>
SphereEmbedding sphere_embedding(int ws, Vec center, double radius, Rng& rng) {
    const int d = static_cast<int>(center.size());
    if (ws + 1 > d) throw std::invalid_argument("sphere dimension + 1 must not exceed target dimension");
    std::normal_distribution<double> g(0.0, 1.0);
    Mat M(d, ws + 1);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= ws; ++j) M(i, j) = g(rng);
    Eigen::HouseholderQR<Mat> qr(M);
    SphereEmbedding s;
    s.ws = ws;
    s.center = std::move(center);
    s.radius = radius;
    s.frame = qr.householderQ() * Mat::Identity(d, ws + 1);
    return s;
}

// Axis-aligned sphere: frame = first ws+1 unit vectors.
inline SphereEmbedding sphere_embedding_axes(int ws, Vec center, double radius) {
    const int d = static_cast<int>(center.size());
    if (ws + 1 > d) throw std::invalid_argument("sphere dimension + 1 must not exceed target dimension");
    SphereEmbedding s;
    s.ws = ws;
    s.center = std::move(center);
    s.radius = radius;
    s.frame = Mat::Identity(d, ws + 1);
    return s;
}

}  // namespace gfl
