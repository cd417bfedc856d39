#include "adsm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace adsm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_vec(const Eigen::VectorXd& v) {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
    os << "]";
    return os.str();
}

std::vector<std::string> numbered_vars(const std::string& stem, int count, int offset = 0) {
    std::vector<std::string> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) out.push_back(stem + std::to_string(offset + i + 1));
    return out;
}

}  // namespace

bool Box::contains(const Eigen::VectorXd& v, double margin) const {
    if (v.size() != dim()) throw MeshError("box membership query with wrong dimension");
    for (int i = 0; i < dim(); ++i) {
        const auto [lo, hi] = bounds[i];
        if (std::isfinite(lo) && !(v[i] > lo + margin)) return false;
        if (std::isfinite(hi) && !(v[i] < hi - margin)) return false;
    }
    return true;
}

double Box::face_gap(const Eigen::VectorXd& v) const {
    if (v.size() != dim()) throw MeshError("box gap query with wrong dimension");
    double gap = kInf;
    for (int i = 0; i < dim(); ++i) {
        const auto [lo, hi] = bounds[i];
        if (std::isfinite(lo)) gap = std::min(gap, v[i] - lo);
        if (std::isfinite(hi)) gap = std::min(gap, hi - v[i]);
    }
    return gap;
}

Eigen::VectorXd Box::clamp_inside(const Eigen::VectorXd& v, double margin) const {
    Eigen::VectorXd out = v;
    for (int i = 0; i < dim(); ++i) {
        const auto [lo, hi] = bounds[i];
        if (std::isfinite(lo)) out[i] = std::max(out[i], lo + margin);
        if (std::isfinite(hi)) out[i] = std::min(out[i], hi - margin);
        if (std::isfinite(lo) && std::isfinite(hi) && lo + margin > hi - margin) {
            throw DomainError("box too small for requested interior margin");
        }
    }
    return out;
}

void Box::validate(int expected_dim, const std::string& what) const {
    if (dim() != expected_dim) {
        throw ParseError(what + ": expected dimension " + std::to_string(expected_dim) + ", got " +
                         std::to_string(dim()));
    }
    for (const auto& [lo, hi] : bounds) {
        if (std::isnan(lo) || std::isnan(hi) || !(lo < hi)) {
            throw ParseError(what + ": empty or malformed interval");
        }
    }
}

Box box_all(int dim) {
    Box b;
    b.bounds.assign(dim, {-kInf, kInf});
    return b;
}

DomainSpec DomainSpec::all(int dim) {
    DomainSpec d;
    d.all_ = true;
    d.dim_ = dim;
    return d;
}

DomainSpec DomainSpec::boxes(int dim, std::vector<Box> boxes) {
    if (boxes.empty()) throw ParseError("domain needs at least one box");
    for (const auto& b : boxes) b.validate(dim, "domain box");
    DomainSpec d;
    d.all_ = false;
    d.dim_ = dim;
    d.boxes_ = std::move(boxes);
    return d;
}

bool DomainSpec::contains(const Eigen::VectorXd& v) const {
    if (v.size() != dim_) throw MeshError("domain membership query with wrong dimension");
    if (all_) return true;
    return std::any_of(boxes_.begin(), boxes_.end(), [&](const Box& b) { return b.contains(v); });
}

double DomainSpec::boundary_gap(const Eigen::VectorXd& v) const {
    if (all_) return kInf;
    double best = 0.0;
    for (const auto& b : boxes_) {
        if (b.contains(v)) best = std::max(best, b.face_gap(v));
    }
    if (best <= 0.0) throw DomainError("boundary gap requested outside the domain");
    return best;
}

Eigen::VectorXd DomainSpec::project_inside(const Eigen::VectorXd& v, double margin) const {
    if (all_) return v;
    if (contains(v) && boundary_gap(v) > margin) return v;
    // Nearest clamped representative over the boxes.
    double best = kInf;
    Eigen::VectorXd out;
    for (const auto& b : boxes_) {
        const Eigen::VectorXd c = b.clamp_inside(v, margin);
        const double dist = (c - v).norm();
        if (dist < best) {
            best = dist;
            out = c;
        }
    }
    return out;
}

GSpec::GSpec(int k, int n, ValueFn value, JacobianFn jacobian, DomainSpec V)
    : k_(k), n_(n), value_(std::move(value)), jacobian_(std::move(jacobian)), V_(std::move(V)) {
    if (k_ < 1 || n_ < 1) throw ParseError("g needs k >= 1 and n >= 1");
    if (V_.dim() != kn()) throw ParseError("g domain dimension must be k*n");
}

GSpec GSpec::from_expressions(int k, int n, const std::vector<std::string>& exprs, DomainSpec V) {
    if (static_cast<int>(exprs.size()) != n) {
        throw ParseError("g needs exactly n component expressions");
    }
    const auto vars = numbered_vars("v", k * n);
    std::vector<Expr> comps;
    std::vector<std::vector<Expr>> partials(n);
    comps.reserve(n);
    for (int j = 0; j < n; ++j) {
        comps.push_back(Expr::parse(exprs[j], vars));
        for (int i = 0; i < k * n; ++i) partials[j].push_back(comps[j].diff(i));
    }
    auto value = [comps, n](const Eigen::VectorXd& v) {
        Eigen::VectorXd out(n);
        std::span<const double> x(v.data(), v.size());
        for (int j = 0; j < n; ++j) out[j] = comps[j].eval(x);
        return out;
    };
    auto jacobian = [partials, n, kn = k * n](const Eigen::VectorXd& v) {
        Eigen::MatrixXd out(n, kn);
        std::span<const double> x(v.data(), v.size());
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < kn; ++i) out(j, i) = partials[j][i].eval(x);
        }
        return out;
    };
    GSpec g(k, n, std::move(value), std::move(jacobian), std::move(V));
    g.expr_texts_ = exprs;
    return g;
}

Eigen::VectorXd GSpec::value(const Eigen::VectorXd& v) const {
    if (v.size() != kn()) throw MeshError("g evaluated with wrong dimension");
    return value_(v);
}

Eigen::MatrixXd GSpec::jacobian(const Eigen::VectorXd& v) const {
    if (v.size() != kn()) throw MeshError("g Jacobian evaluated with wrong dimension");
    return jacobian_(v);
}

QSpec QSpec::coord_select(std::vector<int> nu, std::vector<int> kappa) {
    if (nu.empty() || nu.size() != kappa.size()) {
        throw ParseError("coord_select needs matching nonempty nu/kappa lists");
    }
    std::set<int> uniq(nu.begin(), nu.end());
    if (uniq.size() != nu.size()) throw ParseError("coord_select nu must be injective");
    QSpec q;
    q.dim_f_ = static_cast<int>(nu.size());
    q.v_ = CoordSelectQ{std::move(nu), std::move(kappa)};
    return q;
}

QSpec QSpec::constant_l(std::vector<std::vector<PointTerm>> functionals) {
    if (functionals.empty()) throw ParseError("constant_l needs at least one functional");
    QSpec q;
    q.dim_f_ = static_cast<int>(functionals.size());
    q.v_ = ConstantLQ{std::move(functionals)};
    return q;
}

QSpec QSpec::user(UserQ u) {
    if (u.dim_f < 1 || !u.q) throw ParseError("user value functional needs dim_f >= 1 and a map");
    QSpec q;
    q.dim_f_ = u.dim_f;
    q.v_ = std::move(u);
    return q;
}

QSpec::Variant QSpec::variant() const {
    if (std::holds_alternative<CoordSelectQ>(v_)) return Variant::kCoordSelect;
    if (std::holds_alternative<ConstantLQ>(v_)) return Variant::kConstantL;
    return Variant::kUser;
}

Eigen::VectorXd QSpec::eval(const Eigen::VectorXd& r, const VectorSegment& phi) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_f_);
    if (const auto* cs = as_coord_select()) {
        for (int m = 0; m < dim_f_; ++m) {
            if (cs->kappa[m] >= r.size()) throw MeshError("coord_select kappa exceeds delay count");
            out[m] = phi.component(cs->nu[m]).eval_extension(r[cs->kappa[m]]).value;
        }
        return out;
    }
    if (const auto* cl = as_constant_l()) {
        for (int i = 0; i < dim_f_; ++i) {
            double acc = 0.0;
            for (const auto& term : cl->functionals[i]) {
                acc += term.weight * phi.component(term.comp).eval(term.t).value;
            }
            out[i] = acc;
        }
        return out;
    }
    return std::get<UserQ>(v_).q(r, phi);
}

Eigen::VectorXd QSpec::eval_component(const Eigen::VectorXd& r, const ScalarSegment& phi, int j,
                                      int n) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim_f_);
    if (const auto* cs = as_coord_select()) {
        for (int m = 0; m < dim_f_; ++m) {
            if (cs->nu[m] == j) out[m] = phi.eval_extension(r[cs->kappa[m]]).value;
        }
        return out;
    }
    if (const auto* cl = as_constant_l()) {
        for (int i = 0; i < dim_f_; ++i) {
            double acc = 0.0;
            for (const auto& term : cl->functionals[i]) {
                if (term.comp == j) acc += term.weight * phi.eval(term.t).value;
            }
            out[i] = acc;
        }
        return out;
    }
    return std::get<UserQ>(v_).q(r, embed_component(phi, j, n));
}

Eigen::MatrixXd QSpec::d_r(const Eigen::VectorXd& r, const VectorSegment& phi, int k) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(dim_f_, k);
    if (const auto* cs = as_coord_select()) {
        for (int m = 0; m < dim_f_; ++m) {
            out(m, cs->kappa[m]) = phi.component(cs->nu[m]).eval_extension(r[cs->kappa[m]]).slope;
        }
        return out;
    }
    if (as_constant_l()) return out;
    // User variant: central differences in each delay coordinate.
    for (int c = 0; c < k; ++c) {
        const double step = 1e-6 * (1.0 + std::abs(r[c]));
        Eigen::VectorXd rp = r, rm = r;
        rp[c] += step;
        rm[c] -= step;
        out.col(c) = (eval(rp, phi) - eval(rm, phi)) / (2.0 * step);
    }
    return out;
}

std::vector<ScalarSegment> QSpec::probe_family(int count, double h, int intervals) {
    std::vector<ScalarSegment> probes;
    probes.reserve(count);
    probes.push_back(make_constant_segment(h, intervals, 1.0));
    const double pi = std::acos(-1.0);
    for (int m = 1; m < count; ++m) {
        const double om = m * pi / h;
        probes.push_back(make_segment(
            h, intervals, [om](double t) { return std::cos(om * t); },
            [om](double t) { return -om * std::sin(om * t); }));
    }
    return probes;
}

std::vector<ScalarSegment> QSpec::range_basis(int j, int n, double h, int intervals) const {
    if (const auto* cs = as_coord_select()) {
        for (int m = 0; m < dim_f_; ++m) {
            if (cs->nu[m] == j) return {make_constant_segment(h, intervals, 1.0)};
        }
        return {};
    }
    if (as_constant_l()) {
        // Rank-reveal the probe images; the pivot columns become candidates.
        const auto probes = probe_family(2 * dim_f_ + 2, h, intervals);
        Eigen::MatrixXd images(dim_f_, static_cast<int>(probes.size()));
        const Eigen::VectorXd r0 = Eigen::VectorXd::Zero(1);  // unused by this variant
        for (size_t p = 0; p < probes.size(); ++p) {
            images.col(static_cast<int>(p)) = eval_component(r0, probes[p], j, n);
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(images);
        qr.setThreshold(1e-8);
        const int rank = static_cast<int>(qr.rank());
        std::vector<ScalarSegment> out;
        out.reserve(rank);
        const auto& perm = qr.colsPermutation().indices();
        for (int m = 0; m < rank; ++m) out.push_back(probes[perm[m]]);
        return out;
    }
    const auto& u = std::get<UserQ>(v_);
    if (j < 0 || j >= static_cast<int>(u.basis.size())) {
        throw ParseError("user value functional is missing range data for a component");
    }
    return u.basis[j];
}

DeltaSpec DeltaSpec::offset(const std::vector<std::string>& d_exprs, int dim_w, Box W) {
    const int k = static_cast<int>(d_exprs.size());
    const auto vars = numbered_vars("w", dim_w);
    std::vector<Expr> comps;
    std::vector<std::vector<Expr>> partials(k);
    for (int i = 0; i < k; ++i) {
        comps.push_back(Expr::parse(d_exprs[i], vars));
        for (int c = 0; c < dim_w; ++c) partials[i].push_back(comps[i].diff(c));
    }
    auto d = [comps, k](const Eigen::VectorXd& w) {
        Eigen::VectorXd out(k);
        std::span<const double> x(w.data(), w.size());
        for (int i = 0; i < k; ++i) out[i] = comps[i].eval(x);
        return out;
    };
    auto djac = [partials, k, dim_w](const Eigen::VectorXd& w) {
        Eigen::MatrixXd out(k, dim_w);
        std::span<const double> x(w.data(), w.size());
        for (int i = 0; i < k; ++i) {
            for (int c = 0; c < dim_w; ++c) out(i, c) = partials[i][c].eval(x);
        }
        return out;
    };
    DeltaSpec spec = offset_fn(k, dim_w, std::move(d), std::move(djac), std::move(W));
    spec.expr_texts_ = d_exprs;
    return spec;
}

DeltaSpec DeltaSpec::offset_fn(int k, int dim_w, MapFn d, JacFn d_jacobian, Box W) {
    if (k < 1 || dim_w < 1) throw ParseError("constraint needs k >= 1 and dim_w >= 1");
    W.validate(dim_w, "W");
    DeltaSpec s;
    s.variant_ = Variant::kOffset;
    s.k_ = k;
    s.dim_w_ = dim_w;
    s.d_ = std::move(d);
    s.d_jac_ = std::move(d_jacobian);
    s.W_ = std::move(W);
    return s;
}

DeltaSpec DeltaSpec::general(const std::vector<std::string>& exprs, int k, int dim_w, Box W) {
    if (static_cast<int>(exprs.size()) != k) {
        throw ParseError("general constraint needs exactly k expressions");
    }
    auto vars = numbered_vars("r", k);
    const auto wvars = numbered_vars("w", dim_w);
    vars.insert(vars.end(), wvars.begin(), wvars.end());
    std::vector<Expr> comps;
    std::vector<std::vector<Expr>> dr(k), dw(k);
    for (int i = 0; i < k; ++i) {
        comps.push_back(Expr::parse(exprs[i], vars));
        for (int c = 0; c < k; ++c) dr[i].push_back(comps[i].diff(c));
        for (int c = 0; c < dim_w; ++c) dw[i].push_back(comps[i].diff(k + c));
    }
    auto pack = [k, dim_w](const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
        Eigen::VectorXd x(k + dim_w);
        x.head(k) = r;
        x.tail(dim_w) = w;
        return x;
    };
    auto delta = [comps, pack, k](const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
        const Eigen::VectorXd x = pack(r, w);
        std::span<const double> xs(x.data(), x.size());
        Eigen::VectorXd out(k);
        for (int i = 0; i < k; ++i) out[i] = comps[i].eval(xs);
        return out;
    };
    auto d1 = [dr, pack, k](const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
        const Eigen::VectorXd x = pack(r, w);
        std::span<const double> xs(x.data(), x.size());
        Eigen::MatrixXd out(k, k);
        for (int i = 0; i < k; ++i) {
            for (int c = 0; c < k; ++c) out(i, c) = dr[i][c].eval(xs);
        }
        return out;
    };
    auto d2 = [dw, pack, k, dim_w](const Eigen::VectorXd& r, const Eigen::VectorXd& w) {
        const Eigen::VectorXd x = pack(r, w);
        std::span<const double> xs(x.data(), x.size());
        Eigen::MatrixXd out(k, dim_w);
        for (int i = 0; i < k; ++i) {
            for (int c = 0; c < dim_w; ++c) out(i, c) = dw[i][c].eval(xs);
        }
        return out;
    };
    DeltaSpec spec = general_fn(k, dim_w, std::move(delta), std::move(d1), std::move(d2), std::move(W));
    spec.expr_texts_ = exprs;
    return spec;
}

DeltaSpec DeltaSpec::general_fn(int k, int dim_w, Map2Fn delta, Jac2Fn d1, Jac2Fn d2, Box W) {
    if (k < 1 || dim_w < 1) throw ParseError("constraint needs k >= 1 and dim_w >= 1");
    W.validate(dim_w, "W");
    DeltaSpec s;
    s.variant_ = Variant::kGeneral;
    s.k_ = k;
    s.dim_w_ = dim_w;
    s.delta_ = std::move(delta);
    s.d1_ = std::move(d1);
    s.d2_ = std::move(d2);
    s.W_ = std::move(W);
    return s;
}

Eigen::VectorXd DeltaSpec::eval(const Eigen::VectorXd& r, const Eigen::VectorXd& w) const {
    if (r.size() != k_ || w.size() != dim_w_) throw MeshError("constraint evaluated with wrong dims");
    if (!W_.contains(w)) throw DomainError("constraint argument outside W: w = " + fmt_vec(w));
    if (variant_ == Variant::kOffset) return d_(w) + r;
    return delta_(r, w);
}

Eigen::MatrixXd DeltaSpec::d1(const Eigen::VectorXd& r, const Eigen::VectorXd& w) const {
    if (variant_ == Variant::kOffset) return Eigen::MatrixXd::Identity(k_, k_);
    return d1_(r, w);
}

Eigen::MatrixXd DeltaSpec::d2(const Eigen::VectorXd& r, const Eigen::VectorXd& w) const {
    if (variant_ == Variant::kOffset) return d_jac_(w);
    return d2_(r, w);
}

Eigen::VectorXd DeltaSpec::offset_d(const Eigen::VectorXd& w) const {
    if (variant_ != Variant::kOffset) throw DomainError("offset part requested from a general constraint");
    return d_(w);
}

ModelSpec::ModelSpec(std::string name, double h, int n, int k, std::pair<double, double> I,
                     std::pair<double, double> J, GSpec g, QSpec q, DeltaSpec delta, int mesh)
    : name_(std::move(name)),
      h_(h),
      n_(n),
      k_(k),
      I_(I),
      J_(J),
      g_(std::move(g)),
      q_(std::move(q)),
      delta_(std::move(delta)),
      mesh_(mesh) {
    if (!(h_ > 0.0)) throw ParseError("model needs h > 0");
    if (n_ < 1 || k_ < 1) throw ParseError("model needs n >= 1 and k >= 1");
    if (mesh_ < 1) throw ParseError("model needs at least one mesh interval");
    if (!(I_.first < -h_ && I_.second > 0.0)) {
        throw ParseError("delay window I must contain [-h, 0] strictly");
    }
    if (!(J_.first <= I_.first && J_.second >= I_.second)) {
        throw ParseError("closure of I must lie inside J");
    }
    if (!(J_.first >= -2.0 * h_ && J_.second <= h_)) {
        throw ParseError("J must lie inside [-2h, h]");
    }
    if (g_.k() != k_ || g_.n() != n_) throw ParseError("g dimensions disagree with the model");
    if (delta_.k() != k_) throw ParseError("constraint output dimension must be k");
    if (q_.dim_f() != delta_.dim_w()) {
        throw ParseError("value functional range and constraint argument dimensions disagree");
    }
    if (const auto* cs = q_.as_coord_select()) {
        for (int m = 0; m < q_.dim_f(); ++m) {
            if (cs->nu[m] < 0 || cs->nu[m] >= n_) throw ParseError("coord_select nu out of range");
            if (cs->kappa[m] < 0 || cs->kappa[m] >= k_) throw ParseError("coord_select kappa out of range");
        }
    }
    if (const auto* cl = q_.as_constant_l()) {
        for (const auto& fn : cl->functionals) {
            for (const auto& term : fn) {
                if (term.comp < 0 || term.comp >= n_) throw ParseError("functional component out of range");
                if (term.t < -h_ - 1e-12 * h_ || term.t > 1e-12 * h_) {
                    throw ParseError("functional evaluation time outside [-h, 0]");
                }
            }
        }
    }
    if (const auto* u = q_.as_user()) {
        if (static_cast<int>(u->basis.size()) != n_) {
            throw ParseError("user value functional needs range data for every component");
        }
    }
    if (g_.V().dim() != k_ * n_) throw ParseError("V dimension must be k*n");
}

void ModelSpec::set_mesh(int mesh) {
    if (mesh < 1) throw ParseError("model needs at least one mesh interval");
    mesh_ = mesh;
}

bool ModelSpec::r_in_I(const Eigen::VectorXd& r) const {
    if (r.size() != k_) return false;
    for (int i = 0; i < k_; ++i) {
        if (!(r[i] > I_.first && r[i] < I_.second)) return false;
    }
    return true;
}

bool ModelSpec::r_in_J(const Eigen::VectorXd& r) const {
    if (r.size() != k_) return false;
    for (int i = 0; i < k_; ++i) {
        if (!(r[i] >= J_.first && r[i] <= J_.second)) return false;
    }
    return true;
}

namespace {

void require_compatible(const ModelSpec& m, const VectorSegment& phi) {
    if (phi.dim() != m.n() || phi.h() != m.h()) {
        throw MeshError("state segment does not match the model (n, h)");
    }
}

}  // namespace

DomainCheck in_domain_U(const ModelSpec& m, const StatePoint& p) {
    require_compatible(m, p.phi);
    if (!m.r_in_I(p.r)) {
        return {false, DomainFailure::kRNotInI, "r = " + fmt_vec(p.r) + " not in I^k"};
    }
    const Eigen::VectorXd v = hat_vector(p.r, p.phi);
    if (!m.g().V().contains(v)) {
        return {false, DomainFailure::kHatNotInV, "hat vector " + fmt_vec(v) + " not in V"};
    }
    const Eigen::VectorXd w = m.q().eval(p.r, p.phi);
    if (!m.delta().W().contains(w)) {
        return {false, DomainFailure::kQNotInW, "Q(r, phi) = " + fmt_vec(w) + " not in W"};
    }
    return {true, DomainFailure::kNone, ""};
}

Eigen::VectorXd hat_of(const ModelSpec& m, const StatePoint& p) {
    require_compatible(m, p.phi);
    if (!m.r_in_J(p.r)) throw DomainError("hat vector needs r in J^k, r = " + fmt_vec(p.r));
    return hat_vector(p.r, p.phi);
}

namespace {

void require_in_U(const ModelSpec& m, const StatePoint& p, const char* op) {
    const DomainCheck c = in_domain_U(m, p);
    if (!c.ok) throw DomainError(std::string(op) + ": " + c.detail);
}

}  // namespace

Eigen::VectorXd G_eval(const ModelSpec& m, const StatePoint& p) {
    require_in_U(m, p, "G");
    return m.g().value(hat_vector(p.r, p.phi));
}

Eigen::VectorXd Delta_eval(const ModelSpec& m, const StatePoint& p) {
    require_in_U(m, p, "Delta");
    return m.delta().eval(p.r, m.q().eval(p.r, p.phi));
}

Eigen::VectorXd Delta_eval_at(const ModelSpec& m, const Eigen::VectorXd& r,
                              const VectorSegment& phi) {
    require_compatible(m, phi);
    if (!m.r_in_J(r)) throw DomainError("constraint needs r in J^k, r = " + fmt_vec(r));
    return m.delta().eval(r, m.q().eval(r, phi));
}

Eigen::VectorXd DG_directional(const ModelSpec& m, const StatePoint& p, const Eigen::VectorXd& s,
                               const VectorSegment& psi) {
    require_in_U(m, p, "DG");
    require_compatible(m, psi);
    if (s.size() != m.k()) throw MeshError("direction s must have k components");
    const Eigen::VectorXd v = hat_vector(p.r, p.phi);
    Eigen::VectorXd dir(m.k() * m.n());
    for (int kappa = 0; kappa < m.k(); ++kappa) {
        for (int j = 0; j < m.n(); ++j) {
            const double epsi = psi.component(j).eval_extension(p.r[kappa]).value;
            const double dphi = p.phi.component(j).eval_extension(p.r[kappa]).slope;
            dir[kappa * m.n() + j] = epsi + s[kappa] * dphi;
        }
    }
    return m.g().jacobian(v) * dir;
}

Eigen::VectorXd D2Delta_directional(const ModelSpec& m, const StatePoint& p,
                                    const VectorSegment& psi) {
    require_in_U(m, p, "D2Delta");
    require_compatible(m, psi);
    const Eigen::VectorXd w = m.q().eval(p.r, p.phi);
    return m.delta().d2(p.r, w) * m.q().eval(p.r, psi);
}

Eigen::MatrixXd D1Delta_jacobian(const ModelSpec& m, const StatePoint& p) {
    require_in_U(m, p, "D1Delta");
    return D1Delta_jacobian_at(m, p.r, p.phi);
}

Eigen::MatrixXd D1Delta_jacobian_at(const ModelSpec& m, const Eigen::VectorXd& r,
                                    const VectorSegment& phi) {
    require_compatible(m, phi);
    if (!m.r_in_J(r)) throw DomainError("constraint Jacobian needs r in J^k");
    const Eigen::VectorXd w = m.q().eval(r, phi);
    return m.delta().d1(r, w) + m.delta().d2(r, w) * m.q().d_r(r, phi, m.k());
}

HqReport verify_Hq(const ModelSpec& m, int grid_per_axis) {
    if (grid_per_axis < 2) throw ParseError("range check needs a grid with at least two points per axis");
    HqReport rep;
    rep.min_singular_value = kInf;
    rep.worst_span_residual = 0.0;

    // All grid points of J^k.
    const auto [jlo, jhi] = m.J();
    const long total = static_cast<long>(std::pow(grid_per_axis, m.k()));
    std::vector<Eigen::VectorXd> grid;
    grid.reserve(total);
    for (long idx = 0; idx < total; ++idx) {
        long rem = idx;
        Eigen::VectorXd r(m.k());
        for (int c = 0; c < m.k(); ++c) {
            const int g = static_cast<int>(rem % grid_per_axis);
            rem /= grid_per_axis;
            r[c] = jlo + g * (jhi - jlo) / (grid_per_axis - 1);
        }
        grid.push_back(std::move(r));
    }
    rep.grid_points = static_cast<int>(grid.size());

    const auto probes = QSpec::probe_family(2 * m.q().dim_f() + 2, m.h(), m.mesh());
    bool ok = true;
    for (int j = 0; j < m.n(); ++j) {
        const auto basis = m.q().range_basis(j, m.n(), m.h(), m.mesh());
        const int d = static_cast<int>(basis.size());
        rep.range_dims.push_back(d);
        for (const auto& r : grid) {
            if (d == 0) {
                // Claimed zero map: probes must produce (numerically) zero.
                for (const auto& p : probes) {
                    const double res = m.q().eval_component(r, p, j, m.n()).norm() /
                                       (1.0 + norms(p).c_norm);
                    if (res > rep.worst_span_residual) {
                        rep.worst_span_residual = res;
                        rep.detail = "component " + std::to_string(j) + " at r = " + fmt_vec(r);
                    }
                    if (res > 1e-10) ok = false;
                }
                continue;
            }
            Eigen::MatrixXd M(m.q().dim_f(), d);
            for (int c = 0; c < d; ++c) M.col(c) = m.q().eval_component(r, basis[c], j, m.n());
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU);
            const double sv = svd.singularValues().minCoeff();
            if (sv < rep.min_singular_value) {
                rep.min_singular_value = sv;
                if (sv < 1e-8) {
                    ok = false;
                    rep.detail = "component " + std::to_string(j) + " degenerates at r = " + fmt_vec(r);
                }
            }
            const Eigen::MatrixXd U = svd.matrixU().leftCols(d);
            for (const auto& p : probes) {
                const Eigen::VectorXd img = m.q().eval_component(r, p, j, m.n());
                const double res = (img - U * (U.transpose() * img)).norm() / (1.0 + img.norm());
                if (res > rep.worst_span_residual) {
                    rep.worst_span_residual = res;
                    rep.detail = "component " + std::to_string(j) + " range drifts at r = " + fmt_vec(r);
                }
                if (res > 1e-8) ok = false;
            }
        }
    }
    if (rep.min_singular_value == kInf) rep.min_singular_value = 0.0;
    rep.pass = ok;
    return rep;
}

}  // namespace adsm
