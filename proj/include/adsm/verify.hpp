#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "adsm/dynamics.hpp"
#include "adsm/scenario.hpp"
#include "adsm/transform.hpp"

namespace adsm {

// One named property check. `worst` is the extremal observed quantity and
// `bound` the value it was held against; whether small or large is good
// depends on the check and is spelled out in `detail`.
struct CheckResult {
    std::string name;
    bool pass = false;
    double worst = 0.0;
    double bound = 0.0;
    int samples = 0;
    std::string worst_at;
    std::string detail;
};

struct VerificationReport {
    std::string scenario;
    std::string scenario_hash;
    std::uint64_t seed = 0;
    double tol = 0.0;
    double dt = 0.0;
    double t_end = 0.0;
    int mesh = 0;
    std::vector<CheckResult> checks;
    bool pass = false;  // conjunction of check passes

    // Deterministic rendering: sorted keys, no timestamps; identical
    // scenario and seed reproduce the bytes.
    nlohmann::json to_json() const;
};

// Sampling helpers shared by the checks and the test suites. Hat-space
// samples stay in |v|_inf <= 2 when V is everything and keep a 10%
// half-width margin inside box domains; delay samples keep a 10% inset
// in I^k.
ScalarSegment random_smooth_segment(double h, int intervals, double scale, std::mt19937_64& rng);
Eigen::VectorXd sample_hat_point(const DomainSpec& V, std::mt19937_64& rng);
Eigen::VectorXd sample_delay_point(const ModelSpec& m, std::mt19937_64& rng);
StatePoint sample_domain_point(const ModelSpec& m, std::mt19937_64& rng, double scale = 0.3);

// Deterministic non-equilibrium manifold point for semiflow checks.
StatePoint perturbed_manifold_point(const ModelSpec& m, double amplitude = 0.05);

// Reflection extension: norm ratio <= 3, the cosine witness reaches it,
// affine segments extend exactly.
CheckResult check_extension_contract(const ModelSpec& m, std::uint64_t seed, int segments = 1000);
// Constant-range hypothesis on an r-grid over J^k.
CheckResult check_constant_range(const ModelSpec& m);
// Analytic derivatives of G and Delta against central differences.
CheckResult check_derivative_consistency(const ModelSpec& m, std::uint64_t seed, int samples = 100);
// Complement field: unit slope at zero, Q-kill, norm within the scale cap.
CheckResult check_complement_contract(const TransformContext& ctx, std::uint64_t seed,
                                      int samples = 500);
// Finite-difference v-partials of the field stay within the scale cap.
CheckResult check_complement_partials(const TransformContext& ctx, std::uint64_t seed,
                                      int samples = 500);
// |D2 R| <= 1/2 and, on box domains, |R| <= dist-to-boundary / 2.
CheckResult check_contraction_bound(const TransformContext& ctx, std::uint64_t seed,
                                    int samples = 200);
// S_r o S_r^{-1} = id on reachable points, geometric step decay.
CheckResult check_fixed_point_inverse(const TransformContext& ctx, std::uint64_t seed,
                                      int samples = 100);
// Y o T and T o Y return to the argument in C1 norm.
CheckResult check_round_trips(const TransformContext& ctx, std::uint64_t seed, int samples = 100);
// T sends manifold points into the flat strip; flat points pulled back
// through Y (with the delay re-solved) land on the manifold.
CheckResult check_manifold_transport(const TransformContext& ctx, std::uint64_t seed,
                                     int points = 20);
// Explicit-delay reduction: r + d(L psi) = 0 on T-images of manifold
// points. Applies to offset constraints with r-independent functionals.
CheckResult check_graph_reduction(const TransformContext& ctx, std::uint64_t seed, int points = 20);
// Newton search from the documented seed converges with clean residuals.
CheckResult check_manifold_point_search(const ModelSpec& m);
// Integration keeps the manifold residuals small along the trajectory.
CheckResult check_semiflow(const ModelSpec& m, double t_end, double dt);
// Observed order of the stepper under step halving, measured at the
// largest stable step where the signal clears the solver noise floor.
CheckResult check_convergence_order(const ModelSpec& m, double t_end = 2.0, double dt0 = 0.0);

// Full suite over one scenario. `sc.samples` > 0 overrides the per-check
// sample counts above.
VerificationReport run_verification(const Scenario& sc);

}  // namespace adsm
