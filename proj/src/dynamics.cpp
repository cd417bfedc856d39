#include "adsm/dynamics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "adsm/errors.hpp"

namespace adsm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNewtonTol = 1e-12;
constexpr int kNewtonMaxIter = 25;
constexpr int kMaxHalvings = 10;
constexpr double kSingularFloor = 1e-10;
constexpr int kSearchMaxIter = 50;
constexpr double kSearchResidual = 1e-10;
constexpr double kManifoldGate = 1e-8;
constexpr double kDetFloor = 1e-6;
constexpr double kBlowupAbort = 1e-3;
constexpr int kMaxSteps = 10'000'000;

std::string fmt_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return buf;
}

std::string fmt_vec(const Eigen::VectorXd& v) {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << fmt_num(v[i]);
    os << "]";
    return os.str();
}

// Cubic Hermite data (value, slope) at both ends of an interval of width
// dt, evaluated at local coordinate s in [0, 1].
double hermite_value(double v0, double m0, double v1, double m1, double s, double dt) {
    const double s2 = s * s;
    const double s3 = s2 * s;
    return v0 * (2.0 * s3 - 3.0 * s2 + 1.0) + m0 * dt * (s3 - 2.0 * s2 + s) +
           v1 * (3.0 * s2 - 2.0 * s3) + m1 * dt * (s3 - s2);
}

double hermite_slope(double v0, double m0, double v1, double m1, double s, double dt) {
    const double s2 = s * s;
    return (v0 * (6.0 * s2 - 6.0 * s) + m0 * dt * (3.0 * s2 - 4.0 * s + 1.0) +
            v1 * (6.0 * s - 6.0 * s2) + m1 * dt * (3.0 * s2 - 2.0 * s)) /
           dt;
}

// Reads component j of the dense record at time t, using nodes up to index
// `last` only. At a node the stored pair comes back exactly.
EvalResult dense_eval(const Trajectory& traj, int j, double t, int last) {
    const double u = (t - traj.times.front()) / traj.dt;
    int i = std::clamp(static_cast<int>(std::floor(u)), 0, last - 1);
    const double s = std::clamp((t - traj.times[i]) / traj.dt, 0.0, 1.0);
    const double v0 = traj.values[i][j];
    const double m0 = traj.slopes[i][j];
    const double v1 = traj.values[i + 1][j];
    const double m1 = traj.slopes[i + 1][j];
    return {hermite_value(v0, m0, v1, m1, s, traj.dt),
            hermite_slope(v0, m0, v1, m1, s, traj.dt)};
}

// Rebuilds the history segment x_tau on the model mesh. Nodes past the
// last finalized time are filled by linear extrapolation with pred_slope;
// every delayed read looks at least delta_min into the past, so that fill
// is never consulted by accepted values.
VectorSegment stage_segment(const Trajectory& traj, int last, double tau, int mesh,
                            const Eigen::VectorXd& pred_slope) {
    const double h = traj.h;
    const double spacing = h / mesh;
    const double t_known = traj.times[last];
    const double slack = 1e-9 * traj.dt;
    std::vector<ScalarSegment> comps;
    comps.reserve(traj.n);
    for (int j = 0; j < traj.n; ++j) {
        std::vector<double> vals(mesh + 1);
        std::vector<double> slps(mesh + 1);
        for (int q = 0; q <= mesh; ++q) {
            const double theta = (q == mesh) ? tau : tau - h + q * spacing;
            if (theta <= t_known + slack) {
                const EvalResult e = dense_eval(traj, j, std::min(theta, t_known), last);
                vals[q] = e.value;
                slps[q] = e.slope;
            } else {
                vals[q] = traj.values[last][j] + (theta - t_known) * pred_slope[j];
                slps[q] = pred_slope[j];
            }
        }
        comps.emplace_back(h, std::move(vals), std::move(slps));
    }
    return VectorSegment(std::move(comps));
}

}  // namespace

EvalResult Trajectory::eval_component(int j, double t) const {
    if (j < 0 || j >= n) throw DomainError("trajectory component " + std::to_string(j) + " out of range");
    const double slack = 1e-9 * dt;
    if (t < times.front() - slack || t > times.back() + slack) {
        throw DomainError("time " + fmt_num(t) + " outside the recorded range [" +
                          fmt_num(times.front()) + ", " + fmt_num(times.back()) + "]");
    }
    return dense_eval(*this, j, std::clamp(t, times.front(), times.back()),
                      static_cast<int>(times.size()) - 1);
}

VectorSegment Trajectory::segment_at(double t, int mesh_intervals) const {
    if (mesh_intervals < 1) throw DomainError("segment mesh must have at least one interval");
    if (t < -1e-9 * dt || t > t_e + 1e-9 * dt) {
        throw DomainError("segment time " + fmt_num(t) + " outside [0, " + fmt_num(t_e) + "]");
    }
    return stage_segment(*this, static_cast<int>(times.size()) - 1, std::min(t, times.back()),
                         mesh_intervals, Eigen::VectorXd::Zero(n));
}

Eigen::VectorXd solve_delay(const ModelSpec& m, const VectorSegment& x_t,
                            const Eigen::VectorXd& r_guess) {
    if (r_guess.size() != m.k()) {
        throw DomainError("delay guess has dimension " + std::to_string(r_guess.size()) +
                          ", expected " + std::to_string(m.k()));
    }
    Eigen::VectorXd r = r_guess;
    Eigen::VectorXd F = Delta_eval_at(m, r, x_t);
    for (int it = 0; it < kNewtonMaxIter; ++it) {
        const double res = F.lpNorm<Eigen::Infinity>();
        if (res <= kNewtonTol) {
            for (int kappa = 0; kappa < m.k(); ++kappa) {
                if (r[kappa] > -m.delta_min()) {
                    throw DomainError("solved delay component " + std::to_string(kappa) + " = " +
                                      fmt_num(r[kappa]) + " exceeds " + fmt_num(-m.delta_min()) +
                                      ": delay too small for explicit stepping");
                }
            }
            return r;
        }
        const Eigen::MatrixXd J = D1Delta_jacobian_at(m, r, x_t);
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
        const double det = lu.determinant();
        if (std::abs(det) < kSingularFloor) {
            throw ConvergenceError("singular delay Jacobian at r = " + fmt_vec(r) +
                                   " (det = " + fmt_num(det) + ")");
        }
        const Eigen::VectorXd step = lu.solve(F);
        double scale = 1.0;
        bool accepted = false;
        for (int hv = 0; hv <= kMaxHalvings; ++hv, scale *= 0.5) {
            const Eigen::VectorXd cand = r - scale * step;
            if (!m.r_in_J(cand)) continue;
            try {
                Eigen::VectorXd Fc = Delta_eval_at(m, cand, x_t);
                if (Fc.lpNorm<Eigen::Infinity>() < res) {
                    r = cand;
                    F = std::move(Fc);
                    accepted = true;
                    break;
                }
            } catch (const DomainError&) {
                // candidate pushed Q outside W; shrink further
            }
        }
        if (!accepted) {
            throw ConvergenceError("delay solve stalled at residual " + fmt_num(res) + ", r = " +
                                   fmt_vec(r));
        }
    }
    throw ConvergenceError("delay solve did not converge in " + std::to_string(kNewtonMaxIter) +
                           " iterations (residual " +
                           fmt_num(F.lpNorm<Eigen::Infinity>()) + ")");
}

StatePoint find_manifold_point(const ModelSpec& m, const StatePoint& seed) {
    const int n = m.n();
    const int k = m.k();
    if (seed.r.size() != k) {
        throw DomainError("seed delay has dimension " + std::to_string(seed.r.size()) +
                          ", expected " + std::to_string(k));
    }
    if (seed.phi.dim() != n) {
        throw DomainError("seed segment has " + std::to_string(seed.phi.dim()) +
                          " components, expected " + std::to_string(n));
    }

    // Slope-one shape per component: adding c (.) eta shifts the slope at
    // zero by exactly c while decaying fast into the history.
    const double a = m.h() / 4.0;
    const ScalarSegment eta =
        make_segment(m.h(), seed.phi.intervals(),
                     [a](double t) { return t * std::exp(t / a); },
                     [a](double t) {
                         const double u = t / a;
                         return std::exp(u) * (1.0 + u);
                     });
    const VectorSegment eta_vec(std::vector<ScalarSegment>(n, eta));

    auto build_phi = [&](const Eigen::VectorXd& c) {
        const std::array<VectorSegment, 2> parts{seed.phi, odot(eta_vec, c)};
        const std::array<double, 2> weights{1.0, 1.0};
        return linear_combine(std::span<const VectorSegment>(parts),
                              std::span<const double>(weights));
    };

    // Slope condition and delay constraint stacked into one residual over
    // the unknowns z = (c, r); evaluation failures outside the model's
    // domain read as rejected steps.
    auto residual = [&](const Eigen::VectorXd& z) -> std::optional<Eigen::VectorXd> {
        const Eigen::VectorXd c = z.head(n);
        const Eigen::VectorXd r = z.tail(k);
        if (!m.r_in_J(r)) return std::nullopt;
        try {
            const VectorSegment phi = build_phi(c);
            const Eigen::VectorXd v = hat_vector(r, phi);
            if (!m.g().V().contains(v)) return std::nullopt;
            Eigen::VectorXd F(n + k);
            F.head(n) = phi.slopes_at_zero() - m.g().value(v);
            F.tail(k) = Delta_eval_at(m, r, phi);
            return F;
        } catch (const DomainError&) {
            return std::nullopt;
        }
    };

    Eigen::VectorXd z = Eigen::VectorXd::Zero(n + k);
    z.tail(k) = seed.r;
    auto F0 = residual(z);
    if (!F0) throw DomainError("seed point is outside the evaluable region, r = " + fmt_vec(seed.r));
    Eigen::VectorXd F = *F0;

    for (int it = 0; it < kSearchMaxIter; ++it) {
        const double res = F.lpNorm<Eigen::Infinity>();
        if (res <= kNewtonTol) break;

        Eigen::MatrixXd J(n + k, n + k);
        for (int col = 0; col < n + k; ++col) {
            const double step = 1e-6 * (1.0 + std::abs(z[col]));
            Eigen::VectorXd zp = z;
            Eigen::VectorXd zm = z;
            zp[col] += step;
            zm[col] -= step;
            const auto Fp = residual(zp);
            const auto Fm = residual(zm);
            if (Fp && Fm) {
                J.col(col) = (*Fp - *Fm) / (2.0 * step);
            } else if (Fp) {
                J.col(col) = (*Fp - F) / step;
            } else if (Fm) {
                J.col(col) = (F - *Fm) / step;
            } else {
                throw ConvergenceError("cannot probe the Jacobian at z = " + fmt_vec(z));
            }
        }

        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) {
            throw ConvergenceError("singular Jacobian in the manifold-point search at z = " +
                                   fmt_vec(z));
        }
        const Eigen::VectorXd step = lu.solve(F);

        double scale = 1.0;
        bool accepted = false;
        for (int hv = 0; hv <= kMaxHalvings; ++hv, scale *= 0.5) {
            const Eigen::VectorXd cand = z - scale * step;
            const auto Fc = residual(cand);
            if (Fc && Fc->lpNorm<Eigen::Infinity>() < res) {
                z = cand;
                F = *Fc;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            throw ConvergenceError("manifold-point search stalled at residual " + fmt_num(res));
        }
    }

    const double res = F.lpNorm<Eigen::Infinity>();
    if (res > kSearchResidual) {
        throw ConvergenceError("manifold-point search did not converge: residual " + fmt_num(res) +
                               " after " + std::to_string(kSearchMaxIter) + " steps");
    }

    StatePoint p{z.tail(k), build_phi(z.head(n))};
    const DomainCheck dc = in_domain_U(m, p);
    if (!dc.ok) throw DomainError("search converged outside the common domain: " + dc.detail);
    const double det = D1Delta_jacobian(m, p).determinant();
    if (std::abs(det) < kDetFloor) {
        throw ConvergenceError("search converged to a degenerate point, |det D1 Delta| = " +
                               fmt_num(std::abs(det)));
    }
    return p;
}

Trajectory integrate(const ModelSpec& m, const StatePoint& p0, double t_end, double dt_req) {
    const int n = m.n();
    const int k = m.k();
    if (p0.phi.dim() != n || p0.r.size() != k) {
        throw DomainError("initial point does not match the model dimensions");
    }
    if (!(t_end > 0.0)) throw DomainError("t_end must be positive, got " + fmt_num(t_end));
    if (!(dt_req > 0.0)) throw DomainError("dt must be positive, got " + fmt_num(dt_req));

    // Snap the lag to a whole number of steps so the history nodes line up
    // with the step grid.
    const int hist = static_cast<int>(std::lround(std::ceil(m.h() / dt_req - 1e-9)));
    if (hist < 1) throw DomainError("step size exceeds the lag h = " + fmt_num(m.h()));
    const double dt = m.h() / hist;
    if (dt > m.delta_min() / 4.0 * (1.0 + 1e-12)) {
        throw DomainError("step size " + fmt_num(dt) + " exceeds delta_min/4 = " +
                          fmt_num(m.delta_min() / 4.0) +
                          "; delayed reads would touch the active step");
    }
    const double steps_real = std::ceil(t_end / dt - 1e-9);
    if (steps_real > kMaxSteps) {
        throw DomainError("run of " + fmt_num(steps_real) + " steps exceeds the supported size");
    }
    const int steps = std::max(1, static_cast<int>(std::lround(steps_real)));

    const DomainCheck dc = in_domain_U(m, p0);
    if (!dc.ok) throw DomainError("initial point outside the common domain: " + dc.detail);
    {
        const double ode0 = (p0.phi.slopes_at_zero() - G_eval(m, p0)).lpNorm<Eigen::Infinity>();
        const double del0 = Delta_eval(m, p0).lpNorm<Eigen::Infinity>();
        if (ode0 > kManifoldGate || del0 > kManifoldGate) {
            throw DomainError("initial point is not on the solution manifold (slope residual " +
                              fmt_num(ode0) + ", constraint residual " + fmt_num(del0) + ")");
        }
        for (int kappa = 0; kappa < k; ++kappa) {
            if (p0.r[kappa] > -m.delta_min()) {
                throw DomainError("initial delay component " + std::to_string(kappa) + " = " +
                                  fmt_num(p0.r[kappa]) +
                                  ": delay too small for explicit stepping");
            }
        }
    }

    Trajectory traj;
    traj.h = m.h();
    traj.dt = dt;
    traj.t_end_requested = t_end;
    traj.n = n;
    traj.k = k;
    traj.history_nodes = hist;

    const int total = hist + steps + 1;
    traj.times.resize(total);
    for (int i = 0; i < total; ++i) traj.times[i] = (i - hist) * dt;
    traj.values.reserve(total);
    traj.slopes.reserve(total);
    traj.r_nodes.reserve(steps + 1);
    traj.res_delta.reserve(steps);
    traj.res_ode.reserve(steps);
    traj.det_d1.reserve(steps);

    for (int i = 0; i <= hist; ++i) {
        const double t = std::clamp(traj.times[i], -m.h(), 0.0);
        traj.values.push_back(p0.phi.eval_values(t));
        traj.slopes.push_back(p0.phi.eval_slopes(t));
    }

    Eigen::VectorXd r_warm = p0.r;
    std::string abort;
    for (int s = 0; s < steps; ++s) {
        const int node = hist + s;
        const double t = traj.times[node];
        try {
            // stage 1 reads finalized history only
            const VectorSegment seg_t = stage_segment(traj, node, t, m.mesh(), traj.slopes[node]);
            const Eigen::VectorXd r1 = solve_delay(m, seg_t, r_warm);
            const Eigen::VectorXd k1 = G_eval(m, StatePoint{r1, seg_t});
            traj.slopes[node] = k1;
            traj.r_nodes.push_back(r1);

            // both middle stages read data at least delta_min >= 4 dt in the
            // past, so they coincide and the step is Simpson's rule on the
            // stage slopes, keeping the classical order
            const VectorSegment seg_mid = stage_segment(traj, node, t + 0.5 * dt, m.mesh(), k1);
            const Eigen::VectorXd r2 = solve_delay(m, seg_mid, r1);
            const Eigen::VectorXd k2 = G_eval(m, StatePoint{r2, seg_mid});

            const VectorSegment seg_end = stage_segment(traj, node, t + dt, m.mesh(), k2);
            const Eigen::VectorXd r4 = solve_delay(m, seg_end, r2);
            const Eigen::VectorXd k4 = G_eval(m, StatePoint{r4, seg_end});

            traj.values.push_back(traj.values[node] + (dt / 6.0) * (k1 + 4.0 * k2 + k4));
            traj.slopes.push_back(k4);
            r_warm = r4;

            // midpoint diagnostics against the now finalized step
            const VectorSegment seg_chk = stage_segment(traj, node + 1, t + 0.5 * dt, m.mesh(), k2);
            const double rd = Delta_eval_at(m, r2, seg_chk).lpNorm<Eigen::Infinity>();
            Eigen::VectorXd xdot(n);
            for (int j = 0; j < n; ++j) xdot[j] = dense_eval(traj, j, t + 0.5 * dt, node + 1).slope;
            const Eigen::VectorXd gm = m.g().value(hat_vector(r2, seg_chk));
            const double ro = (xdot - gm).lpNorm<Eigen::Infinity>();
            traj.res_delta.push_back(rd);
            traj.res_ode.push_back(ro);
            traj.det_d1.push_back(D1Delta_jacobian_at(m, r2, seg_chk).determinant());
            if (rd > kBlowupAbort || ro > kBlowupAbort) {
                abort = "residual blowup at t = " + fmt_num(t + 0.5 * dt) + " (|Delta| = " +
                        fmt_num(rd) + ", ODE residual = " + fmt_num(ro) + ")";
                break;
            }
        } catch (const std::exception& e) {
            abort = "aborted at t = " + fmt_num(t) + ": " + e.what();
            break;
        }
    }

    const int last = static_cast<int>(traj.values.size()) - 1;
    traj.times.resize(last + 1);
    traj.t_e = traj.times[last];
    traj.completed = abort.empty() && last == hist + steps;
    traj.abort_reason = abort;

    // close the record with a fresh stage-1 solve at t_e so the stored
    // final slope matches the finalized data
    if (static_cast<int>(traj.r_nodes.size()) < last - hist + 1) {
        try {
            const VectorSegment seg_e =
                stage_segment(traj, last, traj.t_e, m.mesh(), traj.slopes[last]);
            const Eigen::VectorXd re = solve_delay(m, seg_e, r_warm);
            traj.slopes[last] = G_eval(m, StatePoint{re, seg_e});
            traj.r_nodes.push_back(re);
        } catch (const std::exception&) {
            // the aborted step already explains itself; keep the warm value
            traj.r_nodes.push_back(r_warm);
        }
    }
    return traj;
}

ResidualSweep trajectory_residuals(const ModelSpec& m, const Trajectory& traj, int max_checks) {
    ResidualSweep sweep;
    sweep.min_abs_det = kInf;
    const int nodes_fwd = static_cast<int>(traj.values.size()) - traj.history_nodes;
    const int steps = nodes_fwd - 1;

    for (int i = 0; i + 1 < nodes_fwd && i + 1 < static_cast<int>(traj.r_nodes.size()); ++i) {
        const double jump =
            (traj.r_nodes[i + 1] - traj.r_nodes[i]).lpNorm<Eigen::Infinity>();
        sweep.max_r_step = std::max(sweep.max_r_step, jump);
    }

    if (steps < 1) {
        sweep.min_abs_det = 0.0;
        return sweep;
    }
    const int stride = std::max(1, steps / std::max(1, max_checks));
    std::vector<int> picks;
    for (int i = 0; i < steps; i += stride) picks.push_back(i);
    if (picks.back() != steps - 1) picks.push_back(steps - 1);

    for (int i : picks) {
        const double tc = traj.times[traj.history_nodes + i] + 0.5 * traj.dt;
        try {
            const VectorSegment seg = traj.segment_at(tc, m.mesh());
            const Eigen::VectorXd warm =
                traj.r_nodes[std::min(i, static_cast<int>(traj.r_nodes.size()) - 1)];
            const Eigen::VectorXd r = solve_delay(m, seg, warm);
            const double rd = Delta_eval_at(m, r, seg).lpNorm<Eigen::Infinity>();
            Eigen::VectorXd xdot(traj.n);
            for (int j = 0; j < traj.n; ++j) xdot[j] = traj.eval_component(j, tc).slope;
            const Eigen::VectorXd gm = m.g().value(hat_vector(r, seg));
            const double ro = (xdot - gm).lpNorm<Eigen::Infinity>();
            const double det = D1Delta_jacobian_at(m, r, seg).determinant();
            sweep.max_delta = std::max(sweep.max_delta, rd);
            sweep.max_ode = std::max(sweep.max_ode, ro);
            sweep.min_abs_det = std::min(sweep.min_abs_det, std::abs(det));
        } catch (const std::exception&) {
            // an unreachable check time counts as a failed residual
            sweep.max_delta = kInf;
            sweep.max_ode = kInf;
            sweep.min_abs_det = 0.0;
        }
        ++sweep.checks;
    }
    return sweep;
}

void write_trajectory_csv(const Trajectory& traj, std::ostream& os) {
    os << "t";
    for (int j = 0; j < traj.n; ++j) os << ", x_" << (j + 1);
    for (int j = 0; j < traj.n; ++j) os << ", dx_" << (j + 1);
    for (int kappa = 0; kappa < traj.k; ++kappa) os << ", r_" << (kappa + 1);
    os << ", res_delta, res_ode\n";

    char buf[48];
    auto put = [&](double x) {
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        os << buf;
    };
    const int total = static_cast<int>(traj.values.size());
    for (int i = traj.history_nodes; i < total; ++i) {
        const int fwd = i - traj.history_nodes;
        put(traj.times[i]);
        for (int j = 0; j < traj.n; ++j) {
            os << ", ";
            put(traj.values[i][j]);
        }
        for (int j = 0; j < traj.n; ++j) {
            os << ", ";
            put(traj.slopes[i][j]);
        }
        const Eigen::VectorXd& r =
            traj.r_nodes[std::min<std::size_t>(fwd, traj.r_nodes.size() - 1)];
        for (int kappa = 0; kappa < traj.k; ++kappa) {
            os << ", ";
            put(r[kappa]);
        }
        // residual columns describe the step ending at this row; the first
        // row has no incoming step and carries zeros
        double rd = 0.0;
        double ro = 0.0;
        if (fwd >= 1 && fwd - 1 < static_cast<int>(traj.res_delta.size())) {
            rd = traj.res_delta[fwd - 1];
            ro = traj.res_ode[fwd - 1];
        }
        os << ", ";
        put(rd);
        os << ", ";
        put(ro);
        os << "\n";
    }
}

}  // namespace adsm
