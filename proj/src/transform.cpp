#include "adsm/transform.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "adsm/errors.hpp"

namespace adsm {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_vec(const Eigen::VectorXd& v) {
    std::string out = "(";
    char buf[32];
    for (int i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.6g", v[i]);
        out += buf;
        if (i + 1 < v.size()) out += ", ";
    }
    return out + ")";
}

// All component segments of chi_g(r, v), evaluated once and reused
// across the kn slots of R.
std::vector<ScalarSegment> chi_components(const TransformContext& ctx, const Eigen::VectorXd& r,
                                          const Eigen::VectorXd& v) {
    std::vector<ScalarSegment> chi;
    chi.reserve(ctx.model().n());
    for (int j = 0; j < ctx.model().n(); ++j) chi.push_back(ctx.field().eval(j, r, v));
    return chi;
}

Eigen::VectorXd R_from_components(const ModelSpec& m, const std::vector<ScalarSegment>& chi,
                                  const Eigen::VectorXd& gv, const Eigen::VectorXd& r) {
    const int n = m.n();
    Eigen::VectorXd R(m.g().kn());
    for (int iota = 0; iota < R.size(); ++iota) {
        const int j = iota % n;
        const int kappa = iota / n;
        R[iota] = gv[j] * chi[j].eval_extension(r[kappa]).value;
    }
    return R;
}

}  // namespace

TransformContext::TransformContext(std::shared_ptr<const ModelSpec> model, Tolerances tol)
    : model_(model), field_(std::move(model)), tol_(tol) {
    if (tol_.max_iterations < 1) throw DomainError("iteration budget must be positive");
    if (!(tol_.fixed_point_tol > 0.0)) throw DomainError("fixed-point tolerance must be positive");
}

StatePoint T_map(const TransformContext& ctx, const StatePoint& p) {
    const ModelSpec& m = ctx.model();
    const DomainCheck chk = in_domain_U(m, p);
    if (!chk.ok) throw DomainError("point outside the common domain: " + chk.detail);
    const Eigen::VectorXd v = hat_of(m, p);
    const VectorSegment chi = ctx.field().eval_all(p.r, v);
    const VectorSegment corr = odot(chi, m.g().value(v));
    const VectorSegment segs[] = {p.phi, corr};
    const double coeffs[] = {1.0, -1.0};
    return {p.r, linear_combine(segs, coeffs)};
}

Eigen::VectorXd R_eval(const TransformContext& ctx, const Eigen::VectorXd& r,
                       const Eigen::VectorXd& v) {
    const ModelSpec& m = ctx.model();
    if (!m.r_in_I(r)) throw DomainError("delay vector outside I^k at " + fmt_vec(r));
    if (!m.g().V().contains(v)) throw DomainError("hat vector outside V at " + fmt_vec(v));
    return R_from_components(m, chi_components(ctx, r, v), m.g().value(v), r);
}

Eigen::VectorXd S_eval(const TransformContext& ctx, const Eigen::VectorXd& r,
                       const Eigen::VectorXd& v) {
    return v - R_eval(ctx, r, v);
}

double d2R_norm_estimate(const TransformContext& ctx, const Eigen::VectorXd& r,
                         const Eigen::VectorXd& v) {
    const int kn = ctx.model().g().kn();
    const double step = 1e-6 * (1.0 + v.norm());
    Eigen::MatrixXd jac(kn, kn);
    for (int iota = 0; iota < kn; ++iota) {
        Eigen::VectorXd vp = v;
        Eigen::VectorXd vm = v;
        vp[iota] += step;
        vm[iota] -= step;
        jac.col(iota) = (R_eval(ctx, r, vp) - R_eval(ctx, r, vm)) / (2.0 * step);
    }
    return Eigen::JacobiSVD<Eigen::MatrixXd>(jac).singularValues().maxCoeff();
}

SInverseResult S_inverse(const TransformContext& ctx, const Eigen::VectorXd& r,
                         const Eigen::VectorXd& y) {
    const ModelSpec& m = ctx.model();
    if (!m.r_in_I(r)) throw DomainError("delay vector outside I^k at " + fmt_vec(r));
    const DomainSpec& V = m.g().V();

    SInverseResult res;
    res.v = V.contains(y) ? y : V.project_inside(y, 1e-9);
    for (int it = 1; it <= ctx.tolerances().max_iterations; ++it) {
        const Eigen::VectorXd next = y + R_eval(ctx, r, res.v);
        const double step = (next - res.v).norm();
        res.step_norms.push_back(step);
        res.iterations = it;
        if (!V.contains(next))
            throw ConvergenceError("fixed-point iterate left V; " + fmt_vec(y) +
                                   " is not in the image of S_r");
        res.v = next;
        if (step <= ctx.tolerances().fixed_point_tol) return res;
    }
    throw ConvergenceError("no convergence within " +
                           std::to_string(ctx.tolerances().max_iterations) + " iterations; " +
                           fmt_vec(y) + " is not in the image of S_r");
}

StatePoint Y_map(const TransformContext& ctx, const StatePoint& q) {
    const ModelSpec& m = ctx.model();
    if (!m.r_in_I(q.r)) throw DomainError("delay vector outside I^k at " + fmt_vec(q.r));
    const Eigen::VectorXd qval = m.q().eval(q.r, q.phi);
    if (!m.delta().W().contains(qval))
        throw DomainError("value functional lands outside W at " + fmt_vec(qval));

    Eigen::VectorXd v;
    try {
        v = S_inverse(ctx, q.r, hat_vector(q.r, q.phi)).v;
    } catch (const ConvergenceError& e) {
        throw DomainError(std::string("point not in the inverse-transform domain: ") + e.what());
    }
    const VectorSegment chi = ctx.field().eval_all(q.r, v);
    const VectorSegment segs[] = {q.phi, odot(chi, m.g().value(v))};
    const double coeffs[] = {1.0, 1.0};
    return {q.r, linear_combine(segs, coeffs)};
}

PointClass classify_point(const TransformContext& ctx, const StatePoint& p, double tol) {
    const ModelSpec& m = ctx.model();
    PointClass out;
    out.slope_residual = p.phi.slopes_at_zero().cwiseAbs().maxCoeff();

    const DomainCheck chk = in_domain_U(m, p);
    out.in_U = chk.ok;
    if (out.in_U) {
        out.ode_residual =
            (p.phi.slopes_at_zero() - G_eval(m, p)).cwiseAbs().maxCoeff();
        out.delta_residual = Delta_eval(m, p).cwiseAbs().maxCoeff();
        out.det_d1 = D1Delta_jacobian(m, p).determinant();
        out.on_manifold = out.ode_residual <= tol && out.delta_residual <= tol &&
                          std::abs(out.det_d1) >= ctx.tolerances().det_floor;
    } else {
        out.ode_residual = kInf;
        out.delta_residual = kInf;
    }

    // Flattened side: membership in the inverse domain is decided by
    // actually inverting S_r at the point's hat vector.
    const Eigen::VectorXd qval = m.q().eval(p.r, p.phi);
    const bool q_in_W = m.delta().W().contains(qval);
    if (m.r_in_I(p.r) && q_in_W) {
        try {
            const StatePoint pulled = Y_map(ctx, p);
            out.in_O = true;
            out.det_d1_pullback = D1Delta_jacobian(m, pulled).determinant();
            if (out.delta_residual == kInf)
                out.delta_residual = Delta_eval_at(m, p.r, p.phi).cwiseAbs().maxCoeff();
            out.in_image = out.slope_residual <= tol && out.delta_residual <= tol &&
                           std::abs(*out.det_d1_pullback) >= ctx.tolerances().det_floor;
        } catch (const DomainError&) {
            out.in_O = false;
        }
    }

    if (m.delta().is_offset() && m.q().variant() == QSpec::Variant::kConstantL && q_in_W)
        out.graph_residual = (p.r + m.delta().offset_d(qval)).cwiseAbs().maxCoeff();
    return out;
}

}  // namespace adsm
