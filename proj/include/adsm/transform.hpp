#pragma once

#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "adsm/complement.hpp"
#include "adsm/model.hpp"
#include "adsm/segment.hpp"

namespace adsm {

struct Tolerances {
    double fixed_point_tol = 1e-12;
    int max_iterations = 80;
    double det_floor = 1e-6;
};

// Immutable bundle the flattening maps operate over: the model, its
// complement field, and the solver tolerances. Operations are pure;
// one context can serve concurrent evaluations.
class TransformContext {
  public:
    explicit TransformContext(std::shared_ptr<const ModelSpec> model, Tolerances tol = {});

    const ModelSpec& model() const { return *model_; }
    const std::shared_ptr<const ModelSpec>& model_ptr() const { return model_; }
    const ChiField& field() const { return field_; }
    const Tolerances& tolerances() const { return tol_; }

  private:
    std::shared_ptr<const ModelSpec> model_;
    ChiField field_;
    Tolerances tol_;
};

// Flattening map T(r, phi) = (r, phi - g(v) (.) chi_g(r, v)) with
// v = hat(r, phi). The slope identity [A]'(0) = phi'(0) - g(v) holds
// exactly at nodes; Q and Delta values are preserved.
StatePoint T_map(const TransformContext& ctx, const StatePoint& p);

// R_iota(r, v) = g_j(v) * E(chi_{g,j}(r, v))(r_kappa) for
// iota = kappa * n + j (0-based), and S(r, v) = v - R(r, v).
Eigen::VectorXd R_eval(const TransformContext& ctx, const Eigen::VectorXd& r,
                       const Eigen::VectorXd& v);
Eigen::VectorXd S_eval(const TransformContext& ctx, const Eigen::VectorXd& r,
                       const Eigen::VectorXd& v);

// Largest singular value of the central-difference v-Jacobian of R;
// the contraction budget keeps it at or below 1/2.
double d2R_norm_estimate(const TransformContext& ctx, const Eigen::VectorXd& r,
                         const Eigen::VectorXd& v);

struct SInverseResult {
    Eigen::VectorXd v;
    int iterations = 0;
    std::vector<double> step_norms;  // fixed-point step sizes, in order
};

// Solves S_r(v) = y by the fixed-point iteration v <- y + R(r, v),
// starting from y (projected into V when needed). Geometric
// convergence with ratio <= 1/2; failure to converge or an iterate
// escaping V reports y as unreachable.
SInverseResult S_inverse(const TransformContext& ctx, const Eigen::VectorXd& r,
                         const Eigen::VectorXd& y);

// Inverse transform Y(r, psi) = (r, psi + g(v) (.) chi_g(r, v)) with
// v = S_r^{-1}(hat(r, psi)).
StatePoint Y_map(const TransformContext& ctx, const StatePoint& q);

// Diagnostic membership report for one point: common-domain and
// manifold membership on the phi side, inverse-domain and
// flattened-image membership on the psi side, plus the defining
// residual magnitudes.
struct PointClass {
    bool in_U = false;
    bool on_manifold = false;
    bool in_O = false;
    bool in_image = false;
    double ode_residual = 0.0;    // |phi'(0) - G(r, phi)|_inf, when defined
    double slope_residual = 0.0;  // |phi'(0)|_inf
    double delta_residual = 0.0;  // |Delta(r, phi)|_inf, when defined
    double det_d1 = 0.0;          // det D1 Delta at the point itself
    std::optional<double> det_d1_pullback;  // det D1 Delta at Y(point)
    std::optional<double> graph_residual;   // |r + d(L psi)|_inf, explicit-delay models
};

PointClass classify_point(const TransformContext& ctx, const StatePoint& p, double tol = 1e-9);

}  // namespace adsm
