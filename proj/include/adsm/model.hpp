#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "adsm/expr.hpp"
#include "adsm/segment.hpp"

namespace adsm {

// Open axis-aligned box; infinite bounds allowed.
struct Box {
    std::vector<std::pair<double, double>> bounds;

    int dim() const { return static_cast<int>(bounds.size()); }
    bool contains(const Eigen::VectorXd& v, double margin = 0.0) const;
    // min over faces of the gap to the boundary; +inf on unbounded sides,
    // negative outside.
    double face_gap(const Eigen::VectorXd& v) const;
    Eigen::VectorXd clamp_inside(const Eigen::VectorXd& v, double margin) const;
    void validate(int expected_dim, const std::string& what) const;
};

Box box_all(int dim);

// Domain V of the right-hand-side coefficient g: all of R^d or a finite
// union of open boxes.
class DomainSpec {
  public:
    static DomainSpec all(int dim);
    static DomainSpec boxes(int dim, std::vector<Box> boxes);

    int dim() const { return dim_; }
    bool is_all() const { return all_; }
    const std::vector<Box>& box_list() const { return boxes_; }

    bool contains(const Eigen::VectorXd& v) const;
    // Distance to the complement of V: +inf when V is everything, else the
    // largest per-face gap over the boxes containing v (exact for disjoint
    // boxes, a continuous positive lower bound when boxes overlap).
    double boundary_gap(const Eigen::VectorXd& v) const;
    Eigen::VectorXd project_inside(const Eigen::VectorXd& v, double margin) const;

  private:
    bool all_ = true;
    int dim_ = 0;
    std::vector<Box> boxes_;
};

// g: V subset R^{k n} -> R^n with an analytic Jacobian.
class GSpec {
  public:
    using ValueFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
    using JacobianFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

    GSpec(int k, int n, ValueFn value, JacobianFn jacobian, DomainSpec V);
    // One expression per output component over variables v1..v_{k n};
    // the Jacobian is the symbolic derivative.
    static GSpec from_expressions(int k, int n, const std::vector<std::string>& exprs, DomainSpec V);

    int k() const { return k_; }
    int n() const { return n_; }
    int kn() const { return k_ * n_; }
    const DomainSpec& V() const { return V_; }
    const std::vector<std::string>& expression_texts() const { return expr_texts_; }

    Eigen::VectorXd value(const Eigen::VectorXd& v) const;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& v) const;  // n x kn

  private:
    int k_, n_;
    ValueFn value_;
    JacobianFn jacobian_;
    DomainSpec V_;
    std::vector<std::string> expr_texts_;
};

// One weighted point evaluation w * phi_comp(t), t in [-h, 0], comp 0-based.
struct PointTerm {
    int comp = 0;
    double t = 0.0;
    double weight = 1.0;
};

struct CoordSelectQ {
    std::vector<int> nu;     // component per output, 0-based, injective
    std::vector<int> kappa;  // delay index per output, 0-based
};

struct ConstantLQ {
    std::vector<std::vector<PointTerm>> functionals;
};

struct UserQ {
    int dim_f = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const VectorSegment&)> q;
    // Candidate range basis per component (outer index j).
    std::vector<std::vector<ScalarSegment>> basis;
    std::optional<double> cq_bound;
};

// Value functional Q(r, phi) with values in F = R^{dim_f}.
class QSpec {
  public:
    enum class Variant { kCoordSelect, kConstantL, kUser };

    static QSpec coord_select(std::vector<int> nu, std::vector<int> kappa);
    static QSpec constant_l(std::vector<std::vector<PointTerm>> functionals);
    static QSpec user(UserQ u);

    Variant variant() const;
    int dim_f() const { return dim_f_; }

    Eigen::VectorXd eval(const Eigen::VectorXd& r, const VectorSegment& phi) const;
    // Q_j(r, phi) = Q(r, phi * e_j) for a scalar segment phi.
    Eigen::VectorXd eval_component(const Eigen::VectorXd& r, const ScalarSegment& phi, int j,
                                   int n) const;
    // d/dr Q(r, phi), dim_f x k. Analytic except for the user variant
    // (central differences there).
    Eigen::MatrixXd d_r(const Eigen::VectorXd& r, const VectorSegment& phi, int k) const;

    // Candidate basis functions whose images should span the range of
    // Q_j(r, .); empty when the component map is identically zero.
    std::vector<ScalarSegment> range_basis(int j, int n, double h, int intervals) const;
    // Deterministic probe family used for range checks.
    static std::vector<ScalarSegment> probe_family(int count, double h, int intervals);

    const CoordSelectQ* as_coord_select() const { return std::get_if<CoordSelectQ>(&v_); }
    const ConstantLQ* as_constant_l() const { return std::get_if<ConstantLQ>(&v_); }
    const UserQ* as_user() const { return std::get_if<UserQ>(&v_); }

  private:
    QSpec() = default;
    std::variant<CoordSelectQ, ConstantLQ, UserQ> v_;
    int dim_f_ = 0;
};

// Constraint map delta: J^k x W -> R^k.
class DeltaSpec {
  public:
    enum class Variant { kOffset, kGeneral };
    using MapFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
    using JacFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;
    using Map2Fn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;
    using Jac2Fn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

    // delta(r, w) = d(w) + r, expressions over w1..w_{dim_w}.
    static DeltaSpec offset(const std::vector<std::string>& d_exprs, int dim_w, Box W);
    static DeltaSpec offset_fn(int k, int dim_w, MapFn d, JacFn d_jacobian, Box W);
    // Fully general C^1 map with both partials supplied; expressions over
    // r1..rk, w1..w_{dim_w}.
    static DeltaSpec general(const std::vector<std::string>& exprs, int k, int dim_w, Box W);
    static DeltaSpec general_fn(int k, int dim_w, Map2Fn delta, Jac2Fn d1, Jac2Fn d2, Box W);

    Variant variant() const { return variant_; }
    bool is_offset() const { return variant_ == Variant::kOffset; }
    int k() const { return k_; }
    int dim_w() const { return dim_w_; }
    const Box& W() const { return W_; }
    const std::vector<std::string>& expression_texts() const { return expr_texts_; }

    Eigen::VectorXd eval(const Eigen::VectorXd& r, const Eigen::VectorXd& w) const;
    Eigen::MatrixXd d1(const Eigen::VectorXd& r, const Eigen::VectorXd& w) const;  // k x k
    Eigen::MatrixXd d2(const Eigen::VectorXd& r, const Eigen::VectorXd& w) const;  // k x dim_w
    Eigen::VectorXd offset_d(const Eigen::VectorXd& w) const;

  private:
    Variant variant_ = Variant::kOffset;
    int k_ = 0, dim_w_ = 0;
    Map2Fn delta_;
    Jac2Fn d1_, d2_;
    MapFn d_;
    JacFn d_jac_;
    Box W_;
    std::vector<std::string> expr_texts_;
};

// Full problem description plus discretization defaults.
class ModelSpec {
  public:
    ModelSpec(std::string name, double h, int n, int k, std::pair<double, double> I,
              std::pair<double, double> J, GSpec g, QSpec q, DeltaSpec delta, int mesh = 64);

    const std::string& name() const { return name_; }
    double h() const { return h_; }
    int n() const { return n_; }
    int k() const { return k_; }
    std::pair<double, double> I() const { return I_; }
    std::pair<double, double> J() const { return J_; }
    const GSpec& g() const { return g_; }
    const QSpec& q() const { return q_; }
    const DeltaSpec& delta() const { return delta_; }
    int mesh() const { return mesh_; }
    void set_mesh(int mesh);
    // Smallest admissible lag magnitude for explicit stepping.
    double delta_min() const { return h_ / 20.0; }

    bool r_in_I(const Eigen::VectorXd& r) const;
    bool r_in_J(const Eigen::VectorXd& r) const;
    VectorSegment zero_segment() const { return make_zero_vector_segment(h_, mesh_, n_); }

  private:
    std::string name_;
    double h_;
    int n_, k_;
    std::pair<double, double> I_, J_;
    GSpec g_;
    QSpec q_;
    DeltaSpec delta_;
    int mesh_;
};

struct StatePoint {
    Eigen::VectorXd r;
    VectorSegment phi;
};

enum class DomainFailure { kNone, kRNotInI, kHatNotInV, kQNotInW };

struct DomainCheck {
    bool ok = false;
    DomainFailure failure = DomainFailure::kNone;
    std::string detail;
};

// Membership in the common domain: r in I^k, hat vector in V, Q(r, phi) in W.
// Conditions are tested in that order and the first failure is reported.
DomainCheck in_domain_U(const ModelSpec& m, const StatePoint& p);

Eigen::VectorXd hat_of(const ModelSpec& m, const StatePoint& p);

// G(r, phi) = g(hat(r, phi)); requires p in the common domain.
Eigen::VectorXd G_eval(const ModelSpec& m, const StatePoint& p);

// Delta(r, phi) = delta(r, Q(r, phi)); requires p in the common domain.
Eigen::VectorXd Delta_eval(const ModelSpec& m, const StatePoint& p);
// Same map on the constraint's natural domain only (r in J^k, Q(r,phi) in W);
// used by solvers whose iterates may leave I^k.
Eigen::VectorXd Delta_eval_at(const ModelSpec& m, const Eigen::VectorXd& r,
                              const VectorSegment& phi);

// Directional derivative of G at p in direction (s, psi).
Eigen::VectorXd DG_directional(const ModelSpec& m, const StatePoint& p, const Eigen::VectorXd& s,
                               const VectorSegment& psi);

// D2 Delta(r, phi) psi = D2 delta(r, Q(r, phi)) Q(r, psi).
Eigen::VectorXd D2Delta_directional(const ModelSpec& m, const StatePoint& p,
                                    const VectorSegment& psi);

// Full k x k derivative of r -> Delta(r, phi) at fixed phi.
Eigen::MatrixXd D1Delta_jacobian(const ModelSpec& m, const StatePoint& p);
Eigen::MatrixXd D1Delta_jacobian_at(const ModelSpec& m, const Eigen::VectorXd& r,
                                    const VectorSegment& phi);

struct HqReport {
    bool pass = false;
    double min_singular_value = 0.0;
    double worst_span_residual = 0.0;
    int grid_points = 0;
    std::vector<int> range_dims;
    std::string detail;
};

// Checks the constant-range hypothesis for every component on an r-grid
// over J^k: candidate basis images stay uniformly independent and probe
// images stay inside their span.
HqReport verify_Hq(const ModelSpec& m, int grid_per_axis = 9);

}  // namespace adsm
