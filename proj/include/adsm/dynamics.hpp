#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "adsm/model.hpp"
#include "adsm/segment.hpp"

namespace adsm {

// Dense piecewise-cubic record of one integration run.  Node i lives at
// time (i - history_nodes) * dt, so the record covers [-h, t_e] with the
// initial history resampled onto the step grid.  Each node stores the
// value and slope of every state component; between nodes the trajectory
// is the C1 Hermite interpolant of those pairs.
struct Trajectory {
    double h = 0.0;
    double dt = 0.0;           // actual step after snapping h to a whole number of steps
    double t_end_requested = 0.0;
    double t_e = 0.0;          // last time reached (t_end_requested unless aborted early)
    int n = 0;
    int k = 0;
    int history_nodes = 0;     // nodes strictly before t = 0

    std::vector<double> times;              // node times, ascending
    std::vector<Eigen::VectorXd> values;    // x(t_i), one n-vector per node
    std::vector<Eigen::VectorXd> slopes;    // x'(t_i)
    std::vector<Eigen::VectorXd> r_nodes;   // solved delays at nodes t_i >= 0

    // Per-step diagnostics, evaluated at step midpoints against the
    // finalized dense output.  Entry s belongs to the step from node
    // history_nodes + s to history_nodes + s + 1.
    std::vector<double> res_delta;
    std::vector<double> res_ode;
    std::vector<double> det_d1;

    bool completed = false;
    std::string abort_reason;

    int steps_taken() const { return static_cast<int>(res_delta.size()); }

    // Value and slope of component j at time t in [-h, t_e].
    EvalResult eval_component(int j, double t) const;

    // History segment x_t on the model mesh, rebuilt from the dense record.
    VectorSegment segment_at(double t, int mesh_intervals) const;
};

// Solves 0 = Delta(r, x_t) for r by a damped Newton iteration warm-started
// from r_guess, using the analytic delay-constraint Jacobian.  The solved
// delays must stay strictly retarded (every component <= -h/20 by default);
// a root violating that is reported as an error rather than returned.
Eigen::VectorXd solve_delay(const ModelSpec& m, const VectorSegment& x_t,
                            const Eigen::VectorXd& r_guess);

// Searches for a point of the solution manifold near the seed.  The segment
// is parametrized as phi = seed.phi + c (.) eta with eta a fixed slope-one
// shape per component, and Newton runs on the unknowns (c, r) with a
// finite-difference Jacobian until both the slope condition and the delay
// constraint hold to 1e-10.
StatePoint find_manifold_point(const ModelSpec& m, const StatePoint& seed);

// Method of steps: classical RK4 on x'(t) = G(r(t), x_t) with a delay solve
// at every stage time.  All delayed reads look at least delta_min into the
// past, so stage values never depend on the step being computed and the
// scheme keeps its classical order.  Stops early (recording t_e and the
// reason) on delay-solve failure, domain exit, or residual blowup.
Trajectory integrate(const ModelSpec& m, const StatePoint& p0, double t_end,
                     double dt);

// Independent re-check of a finished trajectory: at spread-out check times
// the delay is re-solved from scratch and the manifold residuals of
// (r(t), x_t) are accumulated.
struct ResidualSweep {
    double max_delta = 0.0;      // worst |Delta(r(t), x_t)|
    double max_ode = 0.0;        // worst |x'(t) - G(r(t), x_t)|
    double min_abs_det = 0.0;    // smallest |det D1Delta| seen
    double max_r_step = 0.0;     // largest |r(t_{i+1}) - r(t_i)| over consecutive nodes
    int checks = 0;
};
ResidualSweep trajectory_residuals(const ModelSpec& m, const Trajectory& traj,
                                   int max_checks = 200);

// Plain-text table of the computed nodes (t >= 0): time, values, slopes,
// solved delays, then the midpoint residuals of the step ending at the row.
void write_trajectory_csv(const Trajectory& traj, std::ostream& os);

}  // namespace adsm
