#include "adsm/complement.hpp"

#include <algorithm>
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
constexpr double kSigmaFloor = 1e-8;
constexpr double kZeroImageFloor = 1e-10;
constexpr int kBasisRetries = 20;
constexpr int kGridPerAxis = 9;
constexpr int kMaxLevels = 400;

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

std::vector<Eigen::VectorXd> grid_over_J(const ModelSpec& m, int per_axis) {
    const auto [jlo, jhi] = m.J();
    const long total = static_cast<long>(std::pow(per_axis, m.k()));
    std::vector<Eigen::VectorXd> grid;
    grid.reserve(total);
    for (long idx = 0; idx < total; ++idx) {
        long rem = idx;
        Eigen::VectorXd r(m.k());
        for (int c = 0; c < m.k(); ++c) {
            const int g = static_cast<int>(rem % per_axis);
            rem /= per_axis;
            r[c] = jlo + g * (jhi - jlo) / (per_axis - 1);
        }
        grid.push_back(std::move(r));
    }
    return grid;
}

// Unit-slope-at-zero shape t * exp(t / a); its stored C-norm is about
// a / e until a drops under the mesh spacing, where it saturates at the
// last-interval overshoot (~0.15 h/N).
ScalarSegment slope_seed(double h, int intervals, double a) {
    const double safe_a = std::max(a, 1e-300);
    return make_segment(
        h, intervals, [safe_a](double t) { return t * std::exp(t / safe_a); },
        [safe_a](double t) {
            const double u = t / safe_a;
            return std::exp(u) * (1.0 + u);
        });
}

double max_abs_weight_sum(const ConstantLQ& lq, int functional, int j) {
    double sum = 0.0;
    for (const auto& term : lq.functionals[functional])
        if (term.comp == j) sum += std::abs(term.weight);
    return sum;
}

double cq_bound_for(const ModelSpec& m, const ChiBasis& basis,
                    const std::vector<Eigen::VectorXd>& grid) {
    const QSpec& q = m.q();
    switch (q.variant()) {
        case QSpec::Variant::kCoordSelect:
            // Each selected coordinate is one extension evaluation,
            // bounded by 3 |psi|_C.
            return 3.0 * std::sqrt(static_cast<double>(basis.dim_range));
        case QSpec::Variant::kConstantL: {
            const auto* lq = q.as_constant_l();
            double sq = 0.0;
            for (std::size_t i = 0; i < lq->functionals.size(); ++i) {
                const double wi = max_abs_weight_sum(*lq, static_cast<int>(i), basis.component);
                sq += wi * wi;
            }
            return std::sqrt(sq);
        }
        case QSpec::Variant::kUser: {
            const auto* uq = q.as_user();
            if (uq->cq_bound) return *uq->cq_bound;
            // No declared bound: measure over the probe family and the
            // verification grid, with a factor-2 safety margin.
            const auto probes = QSpec::probe_family(q.dim_f() + 4, m.h(), m.mesh());
            double worst = 0.0;
            for (const auto& r : grid)
                for (const auto& p : probes) {
                    const double image =
                        (basis.tau * q.eval_component(r, p, basis.component, m.n())).norm();
                    worst = std::max(worst, image / std::max(norms(p).c_norm, 1e-12));
                }
            return 2.0 * worst;
        }
    }
    throw ConstructionError("unknown value-functional variant");
}

// Cubic smoothstep ramp: 0 left of [lo_out, lo_in], 1 on [lo_in, hi_in],
// 0 right of [hi_in, hi_out].
double ramp_value(double x, double lo_out, double lo_in, double hi_in, double hi_out) {
    if (x <= lo_out || x >= hi_out) return 0.0;
    if (x >= lo_in && x <= hi_in) return 1.0;
    const double s = x < lo_in ? (x - lo_out) / (lo_in - lo_out) : (hi_out - x) / (hi_out - hi_in);
    return s * s * (3.0 - 2.0 * s);
}

double ramp_slope(double x, double lo_out, double lo_in, double hi_in, double hi_out) {
    if (x <= lo_out || x >= hi_out) return 0.0;
    if (x >= lo_in && x <= hi_in) return 0.0;
    if (x < lo_in) {
        const double w = lo_in - lo_out;
        const double s = (x - lo_out) / w;
        return 6.0 * s * (1.0 - s) / w;
    }
    const double w = hi_out - hi_in;
    const double s = (hi_out - x) / w;
    return -6.0 * s * (1.0 - s) / w;
}

double box_bump(const ChiLevel::BoxChain& c, const Eigen::VectorXd& v) {
    if (c.inner_empty) return 0.0;
    double prod = 1.0;
    for (int i = 0; i < v.size(); ++i) {
        prod *= ramp_value(v[i], c.outer.bounds[i].first, c.inner.bounds[i].first,
                           c.inner.bounds[i].second, c.outer.bounds[i].second);
        if (prod == 0.0) return 0.0;
    }
    return prod;
}

double box_bump_partial(const ChiLevel::BoxChain& c, const Eigen::VectorXd& v, int iota) {
    if (c.inner_empty) return 0.0;
    double out = ramp_slope(v[iota], c.outer.bounds[iota].first, c.inner.bounds[iota].first,
                            c.inner.bounds[iota].second, c.outer.bounds[iota].second);
    for (int i = 0; i < v.size() && out != 0.0; ++i) {
        if (i == iota) continue;
        out *= ramp_value(v[i], c.outer.bounds[i].first, c.inner.bounds[i].first,
                          c.inner.bounds[i].second, c.outer.bounds[i].second);
    }
    return out;
}

double level_bump(const ChiLevel& level, const Eigen::VectorXd& v) {
    // Union of per-box bumps: 1 - prod (1 - a_box).
    double miss = 1.0;
    for (const auto& c : level.boxes) miss *= 1.0 - box_bump(c, v);
    return 1.0 - miss;
}

double level_bump_partial(const ChiLevel& level, const Eigen::VectorXd& v, int iota) {
    double out = 0.0;
    for (std::size_t b = 0; b < level.boxes.size(); ++b) {
        double term = box_bump_partial(level.boxes[b], v, iota);
        for (std::size_t o = 0; o < level.boxes.size() && term != 0.0; ++o) {
            if (o == b) continue;
            term *= 1.0 - box_bump(level.boxes[o], v);
        }
        out += term;
    }
    return out;
}

bool in_cover(const ChiLevel& level, const Eigen::VectorXd& v) {
    for (const auto& c : level.boxes)
        if (!c.cover_empty && c.cover.contains(v)) return true;
    return false;
}

// Chain set for margin 1/(q+3) and cube bound q+3, intersected with one
// box of V. Unbounded sides clamp to the cube.
Box chain_box(const Box& b, int q, bool* empty) {
    const double margin = 1.0 / (q + 3.0);
    const double cube = q + 3.0;
    Box out;
    out.bounds.reserve(b.bounds.size());
    *empty = false;
    for (const auto& [lo, hi] : b.bounds) {
        const double clo = std::max(lo + margin, -cube);
        const double chi = std::min(hi - margin, cube);
        if (!(clo < chi)) *empty = true;
        out.bounds.emplace_back(clo, chi);
    }
    return out;
}

std::vector<Box> domain_boxes(const DomainSpec& V) {
    if (V.is_all()) return {box_all(V.dim())};
    return V.box_list();
}

}  // namespace

double h_g_eval(const GSpec& g, const Eigen::VectorXd& v) {
    if (v.size() != g.kn()) throw DomainError("hat vector has the wrong dimension");
    if (!g.V().contains(v)) throw DomainError("hat vector outside V at " + fmt_vec(v));
    const double jac_max = g.jacobian(v).cwiseAbs().maxCoeff();
    const double val_max = g.value(v).cwiseAbs().maxCoeff();
    const double den = 6.0 * g.kn() * (1.0 + jac_max + val_max);
    const double num = g.V().is_all() ? 1.0 : std::min(1.0, g.V().boundary_gap(v));
    return num / den;
}

ChiBasis build_chi_basis(const ModelSpec& model, int component) {
    if (component < 0 || component >= model.n())
        throw DomainError("component index out of range");
    const QSpec& q = model.q();
    const int dw = q.dim_f();
    const int n = model.n();

    ChiBasis basis;
    basis.component = component;
    basis.r_grid = grid_over_J(model, kGridPerAxis);

    const auto probes = QSpec::probe_family(dw + 4, model.h(), model.mesh());
    const auto [jlo, jhi] = model.J();
    const Eigen::VectorXd r_center =
        Eigen::VectorXd::Constant(model.k(), 0.5 * (jlo + jhi));

    Eigen::MatrixXd images(dw, static_cast<int>(probes.size()));
    for (std::size_t p = 0; p < probes.size(); ++p)
        images.col(static_cast<int>(p)) = q.eval_component(r_center, probes[p], component, n);

    // Identically-zero component map: empty basis, nothing to project.
    if (images.cwiseAbs().maxCoeff() < kZeroImageFloor) {
        basis.tau = Eigen::MatrixXd(0, dw);
        basis.c_q = cq_bound_for(model, basis, basis.r_grid);
        return basis;
    }

    // Rank-reveal with an absolute pivot floor; the pivot columns name
    // the probes that become the raw basis segments.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(images);
    const Eigen::MatrixXd R = qr.matrixR();
    int d = 0;
    while (d < std::min<int>(dw, R.cols()) && std::abs(R(d, d)) >= kSigmaFloor) ++d;
    if (d == 0)
        throw ConstructionError("component " + std::to_string(component) +
                                " has probe images below the rank floor but above zero");
    basis.dim_range = d;

    Eigen::MatrixXd B = qr.householderQ() * Eigen::MatrixXd::Identity(dw, d);
    for (int c = 0; c < d; ++c) {
        int imax = 0;
        B.col(c).cwiseAbs().maxCoeff(&imax);
        if (B(imax, c) < 0.0) B.col(c) = -B.col(c);
    }
    basis.tau = B.transpose();

    std::vector<ScalarSegment> raw;
    raw.reserve(d);
    double max_raw_slope = 0.0;
    for (int m = 0; m < d; ++m) {
        raw.push_back(probes[qr.colsPermutation().indices()[m]]);
        max_raw_slope = std::max(max_raw_slope, std::abs(raw.back().slope_at_zero()));
    }

    // Flatten each raw segment's slope at 0 with the seed shape, then
    // normalize; re-verify uniform independence over the whole grid and
    // shrink the shape scale until it holds.
    double a0 = model.h() / 4.0;
    std::string fail_detail;
    for (int attempt = 0; attempt < kBasisRetries; ++attempt) {
        const ScalarSegment eta = slope_seed(model.h(), model.mesh(), a0);
        std::vector<ScalarSegment> gammas;
        gammas.reserve(d);
        bool degenerate = false;
        for (int m = 0; m < d; ++m) {
            const ScalarSegment segs[] = {raw[m], eta};
            const double coeffs[] = {1.0, -raw[m].slope_at_zero()};
            ScalarSegment g = linear_combine(segs, coeffs);
            const double cn = norms(g).c_norm;
            if (cn <= 0.0) {
                degenerate = true;
                break;
            }
            const double inv[] = {1.0 / cn};
            const ScalarSegment one[] = {g};
            gammas.push_back(linear_combine(one, inv));
        }

        double worst_inv = 0.0;
        bool ok = !degenerate;
        if (ok) {
            for (const auto& r : basis.r_grid) {
                Eigen::MatrixXd M(d, d);
                for (int m = 0; m < d; ++m)
                    M.col(m) = basis.tau * q.eval_component(r, gammas[m], component, n);
                Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
                const double smin = svd.singularValues().minCoeff();
                if (smin < kSigmaFloor) {
                    ok = false;
                    fail_detail = "min singular value " + std::to_string(smin) + " at r = " +
                                  fmt_vec(r);
                    break;
                }
                worst_inv = std::max(worst_inv, 1.0 / smin);
            }
        }
        if (ok) {
            basis.gammas = std::move(gammas);
            basis.c_tau = std::sqrt(static_cast<double>(d)) * worst_inv;
            basis.c_q = cq_bound_for(model, basis, basis.r_grid);
            return basis;
        }
        // With already-flat raw slopes the retry reproduces the same
        // gammas; shrinking the shape cannot help.
        if (max_raw_slope == 0.0) break;
        a0 *= 0.5;
    }
    throw ConstructionError("projection basis for component " + std::to_string(component) +
                            " stayed degenerate (" + fail_detail + ")");
}

ScalarSegment chi_single(const ModelSpec& model, const ChiBasis& basis, double eps,
                         const Eigen::VectorXd& r) {
    if (!(eps > 0.0)) throw DomainError("seed size must be positive");
    if (!model.r_in_J(r)) throw DomainError("delay vector outside J^k at " + fmt_vec(r));

    const double a = 0.9 * eps / (1.0 + basis.c_tau * basis.c_q);
    ScalarSegment seed = slope_seed(model.h(), model.mesh(), a);
    if (basis.dim_range == 0) return seed;

    const int d = basis.dim_range;
    Eigen::MatrixXd M(d, d);
    for (int m = 0; m < d; ++m)
        M.col(m) =
            basis.tau * model.q().eval_component(r, basis.gammas[m], basis.component, model.n());
    const Eigen::VectorXd y =
        basis.tau * model.q().eval_component(r, seed, basis.component, model.n());

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.singularValues().minCoeff() < 1e-12)
        throw ConstructionError("projection matrix singular at r = " + fmt_vec(r));
    const Eigen::VectorXd c = svd.solve(y);

    std::vector<ScalarSegment> segs;
    std::vector<double> coeffs;
    segs.reserve(d + 1);
    coeffs.reserve(d + 1);
    segs.push_back(std::move(seed));
    coeffs.push_back(1.0);
    for (int m = 0; m < d; ++m) {
        segs.push_back(basis.gammas[m]);
        coeffs.push_back(-c[m]);
    }
    return linear_combine(segs, coeffs);
}

ChiField::ChiField(std::shared_ptr<const ModelSpec> model) : model_(std::move(model)) {
    if (!model_) throw ConstructionError("complement field needs a model");
    const HqReport hq = verify_Hq(*model_);
    if (!hq.pass)
        throw ConstructionError("constant-range hypothesis fails: " + hq.detail);
    bases_.reserve(model_->n());
    for (int j = 0; j < model_->n(); ++j) bases_.push_back(build_chi_basis(*model_, j));
}

void ChiField::materialize_up_to(int ell) const {
    const DomainSpec& V = model_->g().V();
    const auto vboxes = domain_boxes(V);
    const int kn = model_->g().kn();

    while (static_cast<int>(levels_.size()) < ell) {
        const int lvl = static_cast<int>(levels_.size()) + 1;
        ChiLevel level;
        double sum_slopes = 0.0;
        double sampled_min = kInf;

        for (const auto& vb : vboxes) {
            ChiLevel::BoxChain chain;
            bool outer_empty = false;
            chain.inner = chain_box(vb, 3 * lvl - 2, &chain.inner_empty);
            chain.outer = chain_box(vb, 3 * lvl - 1, &outer_empty);
            chain.cover = chain_box(vb, 3 * lvl, &chain.cover_empty);
            chain.inner_empty = chain.inner_empty || outer_empty;

            if (!chain.inner_empty) {
                for (int i = 0; i < kn; ++i) {
                    const double gap_lo = chain.inner.bounds[i].first - chain.outer.bounds[i].first;
                    const double gap_hi =
                        chain.outer.bounds[i].second - chain.inner.bounds[i].second;
                    sum_slopes += 1.5 / std::min(gap_lo, gap_hi);
                }
            }

            if (!chain.cover_empty) {
                // Stratified minimum of h_g over the closed cover box.
                const int per_axis = std::max(
                    2, static_cast<int>(std::pow(10.0, std::min(kn, 4) / static_cast<double>(kn)) +
                                        1e-9));
                const long total = static_cast<long>(std::pow(per_axis, kn));
                Eigen::VectorXd v(kn);
                for (long idx = 0; idx < total; ++idx) {
                    long rem = idx;
                    for (int i = 0; i < kn; ++i) {
                        const int gidx = static_cast<int>(rem % per_axis);
                        rem /= per_axis;
                        const auto [lo, hi] = chain.cover.bounds[i];
                        v[i] = lo + gidx * (hi - lo) / (per_axis - 1);
                    }
                    sampled_min = std::min(sampled_min, h_g_eval(model_->g(), v));
                }
            }
            level.boxes.push_back(std::move(chain));
        }

        const double prev_A = levels_.empty() ? 0.0 : levels_.back().bound_A;
        const double prev_h = levels_.empty() ? kInf : levels_.back().min_hg;
        level.bound_A = std::max(2.0 + sum_slopes, prev_A + 1e-9);
        level.min_hg = std::min(0.5 * sampled_min, prev_h);
        level.eps = level.min_hg / (2.0 * level.bound_A);
        if (!(level.eps > 0.0) && level.min_hg < kInf)
            throw ConstructionError("level " + std::to_string(lvl) +
                                    " produced a nonpositive seed size");
        levels_.push_back(std::move(level));
    }
}

ChiField::LevelPair ChiField::locate(const Eigen::VectorXd& v) const {
    if (v.size() != model_->g().kn()) throw DomainError("hat vector has the wrong dimension");
    if (!model_->g().V().contains(v))
        throw DomainError("hat vector outside V at " + fmt_vec(v));
    std::lock_guard<std::mutex> lock(mutex_);
    for (int ell = 1; ell <= kMaxLevels; ++ell) {
        materialize_up_to(ell);
        if (in_cover(levels_[ell - 1], v)) {
            materialize_up_to(ell + 1);
            return {levels_[ell - 1], levels_[ell].eps, ell};
        }
    }
    throw ConstructionError("no exhaustion level reaches " + fmt_vec(v) +
                            "; the point sits too close to the boundary of V");
}

int ChiField::level_of(const Eigen::VectorXd& v) const { return locate(v).number; }

ScalarSegment ChiField::eval(int j, const Eigen::VectorXd& r, const Eigen::VectorXd& v) const {
    if (!model_->r_in_I(r)) throw DomainError("delay vector outside I^k at " + fmt_vec(r));
    const LevelPair lp = locate(v);
    const double w = level_bump(lp.level, v);
    if (w == 1.0) return chi_single(*model_, bases_.at(j), lp.level.eps, r);
    const ScalarSegment chi_next = chi_single(*model_, bases_.at(j), lp.eps_next, r);
    if (w == 0.0) return chi_next;
    const ScalarSegment chi_own = chi_single(*model_, bases_.at(j), lp.level.eps, r);
    return blend(chi_next, chi_own, w);
}

VectorSegment ChiField::eval_all(const Eigen::VectorXd& r, const Eigen::VectorXd& v) const {
    std::vector<ScalarSegment> comps;
    comps.reserve(model_->n());
    for (int j = 0; j < model_->n(); ++j) comps.push_back(eval(j, r, v));
    return VectorSegment(std::move(comps));
}

ScalarSegment ChiField::partial(int j, const Eigen::VectorXd& r, const Eigen::VectorXd& v,
                                int iota) const {
    if (!model_->r_in_I(r)) throw DomainError("delay vector outside I^k at " + fmt_vec(r));
    if (iota < 0 || iota >= model_->g().kn()) throw DomainError("partial index out of range");
    const LevelPair lp = locate(v);
    const double dw = level_bump_partial(lp.level, v, iota);
    const ScalarSegment chi_own = chi_single(*model_, bases_.at(j), lp.level.eps, r);
    const ScalarSegment chi_next = chi_single(*model_, bases_.at(j), lp.eps_next, r);
    const ScalarSegment segs[] = {chi_own, chi_next};
    const double coeffs[] = {dw, -dw};
    return linear_combine(segs, coeffs);
}

nlohmann::json ChiField::diagnostics() const {
    nlohmann::json out;
    out["components"] = nlohmann::json::array();
    for (const auto& b : bases_) {
        out["components"].push_back({{"component", b.component + 1},
                                     {"dim_range", b.dim_range},
                                     {"c_tau", b.c_tau},
                                     {"c_q", b.c_q}});
    }
    out["levels"] = nlohmann::json::array();
    std::lock_guard<std::mutex> lock(mutex_);
    for (std::size_t i = 0; i < levels_.size(); ++i) {
        const ChiLevel& L = levels_[i];
        nlohmann::json boxes = nlohmann::json::array();
        for (const auto& c : L.boxes) {
            auto dump_box = [](const Box& b, bool empty) -> nlohmann::json {
                if (empty) return nullptr;
                nlohmann::json arr = nlohmann::json::array();
                for (const auto& [lo, hi] : b.bounds) arr.push_back({lo, hi});
                return arr;
            };
            boxes.push_back({{"inner", dump_box(c.inner, c.inner_empty)},
                             {"outer", dump_box(c.outer, c.inner_empty)},
                             {"cover", dump_box(c.cover, c.cover_empty)}});
        }
        out["levels"].push_back({{"level", static_cast<int>(i) + 1},
                                 {"eps", L.eps},
                                 {"bound_A", L.bound_A},
                                 {"min_hg", L.min_hg},
                                 {"boxes", std::move(boxes)}});
    }
    return out;
}

ChiField build_chi_field(std::shared_ptr<const ModelSpec> model) {
    return ChiField(std::move(model));
}

}  // namespace adsm
