#pragma once

#include <memory>
#include <mutex>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "adsm/model.hpp"
#include "adsm/segment.hpp"

namespace adsm {

// Pointwise smallness budget for the complement segments: how small a
// unit-slope correction direction must be near v so that the flattening
// map stays a contraction there. Positive on V, shrinking toward the
// boundary of V and wherever g or its Jacobian grows.
double h_g_eval(const GSpec& g, const Eigen::VectorXd& v);

// Projection data for one component j: segments gamma_m spanning a
// complement of the kernel of Q_j(r, .), the coordinate map tau of the
// (r-independent) range onto R^{d_q}, and the uniform bounds that size
// the seed segments.
struct ChiBasis {
    int component = 0;  // j, 0-based
    int dim_range = 0;  // d_q; 0 when Q_j is identically zero
    std::vector<ScalarSegment> gammas;  // unit C-norm, slope 0 at t = 0
    Eigen::MatrixXd tau;                // d_q x dim_f, orthonormal rows
    double c_tau = 0.0;  // grid bound on the basis-matrix inverses
    double c_q = 0.0;    // operator-norm bound of tau Q_j(r, .)
    std::vector<Eigen::VectorXd> r_grid;  // verification grid over J^k
};

// Builds the projection basis for one component. Requires the
// constant-range check (verify_Hq) to have passed for the model.
// Throws ConstructionError when no uniformly independent basis is
// found within the retry budget.
ChiBasis build_chi_basis(const ModelSpec& model, int component);

// One projected segment: chi(r) = seed - sum_m c_m(r) gamma_m with
// Q_j(r, chi(r)) = 0, slope exactly 1 at t = 0, and |chi|_C small of
// order eps (representable down to the mesh floor ~0.15 h/N).
ScalarSegment chi_single(const ModelSpec& model, const ChiBasis& basis, double eps,
                         const Eigen::VectorXd& r);

// One level of the exhaustion of V: nested box chains (inner strictly
// inside outer strictly inside cover, one triple per box of V), the
// analytic bump-derivative budget A, the sampled lower bound h on
// h_g over the cover, and the seed size eps = h / (2 A).
struct ChiLevel {
    struct BoxChain {
        Box inner, outer, cover;
        bool inner_empty = false;
        bool cover_empty = false;
    };
    std::vector<BoxChain> boxes;
    double bound_A = 2.0;
    double min_hg = 0.0;
    double eps = 0.0;
};

// The glued complement field (r, v) -> chi_g(r, v): per-component
// projection bases plus a lazily materialized exhaustion of V with
// smoothstep bumps. Levels build under an internal lock; evaluation
// afterwards is pure and shareable across threads.
class ChiField {
  public:
    explicit ChiField(std::shared_ptr<const ModelSpec> model);

    const ModelSpec& model() const { return *model_; }
    const ChiBasis& basis(int j) const { return bases_.at(j); }

    // Smallest level whose cover contains v.
    int level_of(const Eigen::VectorXd& v) const;

    // chi_{g,j}(r, v) for r in I^k, v in V: slope exactly 1 at t = 0,
    // Q_j(r, .) residual at solver accuracy, C-norm within h_g(v) away
    // from the boundary-of-V mesh-resolution regime.
    ScalarSegment eval(int j, const Eigen::VectorXd& r, const Eigen::VectorXd& v) const;

    // All components stacked: component j is eval(j, r, v).
    VectorSegment eval_all(const Eigen::VectorXd& r, const Eigen::VectorXd& v) const;

    // Analytic partial in v_iota (iota 0-based in {0..kn-1}): the bump
    // derivative times the difference of adjacent level segments.
    ScalarSegment partial(int j, const Eigen::VectorXd& r, const Eigen::VectorXd& v,
                          int iota) const;

    // Per-component bounds and per-level constants materialized so far.
    nlohmann::json diagnostics() const;

  private:
    struct LevelPair {
        ChiLevel level;         // the level owning v
        double eps_next = 0.0;  // seed size of the next level
        int number = 0;
    };
    LevelPair locate(const Eigen::VectorXd& v) const;
    void materialize_up_to(int ell) const;  // caller holds mutex_

    std::shared_ptr<const ModelSpec> model_;
    std::vector<ChiBasis> bases_;
    mutable std::mutex mutex_;
    mutable std::vector<ChiLevel> levels_;
};

ChiField build_chi_field(std::shared_ptr<const ModelSpec> model);

}  // namespace adsm
