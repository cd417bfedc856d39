#include "adsm/verify.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>

#include <Eigen/Dense>

#include "adsm/complement.hpp"
#include "adsm/errors.hpp"

namespace adsm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

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

std::mt19937_64 check_rng(std::uint64_t seed, const std::string& check_name) {
    return std::mt19937_64(seed ^ fnv1a64(check_name));
}

ScalarSegment scale_segment(const ScalarSegment& s, double factor) {
    const std::array<ScalarSegment, 1> segs{s};
    const std::array<double, 1> w{factor};
    return linear_combine(std::span<const ScalarSegment>(segs), std::span<const double>(w));
}

VectorSegment seg_difference(const VectorSegment& a, const VectorSegment& b) {
    const std::array<VectorSegment, 2> segs{a, b};
    const std::array<double, 2> w{1.0, -1.0};
    return linear_combine(std::span<const VectorSegment>(segs), std::span<const double>(w));
}

ScalarSegment seg_difference(const ScalarSegment& a, const ScalarSegment& b) {
    const std::array<ScalarSegment, 2> segs{a, b};
    const std::array<double, 2> w{1.0, -1.0};
    return linear_combine(std::span<const ScalarSegment>(segs), std::span<const double>(w));
}

VectorSegment seg_sum(const VectorSegment& a, const VectorSegment& b, double wb) {
    const std::array<VectorSegment, 2> segs{a, b};
    const std::array<double, 2> w{1.0, wb};
    return linear_combine(std::span<const VectorSegment>(segs), std::span<const double>(w));
}

// Cosine-harmonic segment: the slope at zero vanishes exactly, so these
// sample the flat space directly.
ScalarSegment random_flat_segment(double h, int intervals, double scale, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double b0 = u(rng);
    const std::array<double, 3> b{u(rng), u(rng), u(rng)};
    auto f = [=](double t) {
        double acc = b0;
        for (int p = 0; p < 3; ++p) acc += b[p] * std::cos((p + 1) * std::numbers::pi * t / h);
        return acc;
    };
    auto fp = [=](double t) {
        double acc = 0.0;
        for (int p = 0; p < 3; ++p) {
            const double w = (p + 1) * std::numbers::pi / h;
            acc -= b[p] * w * std::sin(w * t);
        }
        return acc;
    };
    ScalarSegment raw = make_segment(h, intervals, f, fp);
    return scale_segment(raw, scale / std::max(norms(raw).c_norm, 1e-9));
}

VectorSegment random_flat_vector(const ModelSpec& m, double scale, std::mt19937_64& rng) {
    std::vector<ScalarSegment> comps;
    comps.reserve(m.n());
    for (int j = 0; j < m.n(); ++j) {
        comps.push_back(random_flat_segment(m.h(), m.mesh(), scale, rng));
    }
    return VectorSegment(std::move(comps));
}

VectorSegment random_vector_segment(const ModelSpec& m, double scale, std::mt19937_64& rng) {
    std::vector<ScalarSegment> comps;
    comps.reserve(m.n());
    for (int j = 0; j < m.n(); ++j) {
        comps.push_back(random_smooth_segment(m.h(), m.mesh(), scale, rng));
    }
    return VectorSegment(std::move(comps));
}

// Manifold point from a randomized seed near the documented one.
StatePoint random_manifold_point(const ModelSpec& m, std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::string last;
    for (int attempt = 0; attempt < 8; ++attempt) {
        try {
            Eigen::VectorXd r0 = documented_seed(m).r;
            for (int kappa = 0; kappa < m.k(); ++kappa) r0[kappa] += 0.02 * u(rng);
            return find_manifold_point(m, StatePoint{std::move(r0), random_vector_segment(m, scale, rng)});
        } catch (const std::exception& e) {
            last = e.what();
        }
    }
    throw ConvergenceError("no manifold point from randomized seeds: " + last);
}

// Newton in r for the algebraic condition pulled back through the inverse
// transform: Delta(Y(r, psi)) = 0 at fixed flat psi.
std::optional<Eigen::VectorXd> solve_flat_delay(const TransformContext& ctx,
                                                const VectorSegment& psi, Eigen::VectorXd r) {
    const ModelSpec& m = ctx.model();
    auto eval = [&](const Eigen::VectorXd& rr) -> std::optional<Eigen::VectorXd> {
        if (!m.r_in_I(rr)) return std::nullopt;
        try {
            const StatePoint q = Y_map(ctx, StatePoint{rr, psi});
            return Delta_eval_at(m, rr, q.phi);
        } catch (const std::exception&) {
            return std::nullopt;
        }
    };
    auto F = eval(r);
    if (!F) return std::nullopt;
    for (int it = 0; it < 30; ++it) {
        const double res = F->lpNorm<Eigen::Infinity>();
        if (res <= 1e-12) return r;
        Eigen::MatrixXd J(m.k(), m.k());
        for (int kappa = 0; kappa < m.k(); ++kappa) {
            const double eps = 1e-7 * (1.0 + std::abs(r[kappa]));
            Eigen::VectorXd rp = r;
            Eigen::VectorXd rm = r;
            rp[kappa] += eps;
            rm[kappa] -= eps;
            const auto Fp = eval(rp);
            const auto Fm = eval(rm);
            if (Fp && Fm) {
                J.col(kappa) = (*Fp - *Fm) / (2.0 * eps);
            } else if (Fp) {
                J.col(kappa) = (*Fp - *F) / eps;
            } else if (Fm) {
                J.col(kappa) = (*F - *Fm) / eps;
            } else {
                return std::nullopt;
            }
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
        if (!lu.isInvertible()) return std::nullopt;
        const Eigen::VectorXd step = lu.solve(*F);
        double scale = 1.0;
        bool accepted = false;
        for (int hv = 0; hv <= 10; ++hv, scale *= 0.5) {
            const auto Fc = eval(r - scale * step);
            if (Fc && Fc->lpNorm<Eigen::Infinity>() < res) {
                r -= scale * step;
                F = Fc;
                accepted = true;
                break;
            }
        }
        if (!accepted) return std::nullopt;
    }
    return std::nullopt;
}

}  // namespace

ScalarSegment random_smooth_segment(double h, int intervals, double scale, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double c0 = u(rng);
    const std::array<double, 3> a{u(rng), u(rng), u(rng)};
    const std::array<double, 3> b{u(rng), u(rng), u(rng)};
    auto f = [=](double t) {
        double acc = c0;
        for (int p = 0; p < 3; ++p) {
            const double w = (p + 1) * std::numbers::pi / h;
            acc += a[p] * std::sin(w * t) + b[p] * std::cos(w * t);
        }
        return acc;
    };
    auto fp = [=](double t) {
        double acc = 0.0;
        for (int p = 0; p < 3; ++p) {
            const double w = (p + 1) * std::numbers::pi / h;
            acc += a[p] * w * std::cos(w * t) - b[p] * w * std::sin(w * t);
        }
        return acc;
    };
    ScalarSegment raw = make_segment(h, intervals, f, fp);
    return scale_segment(raw, scale / std::max(norms(raw).c_norm, 1e-9));
}

Eigen::VectorXd sample_hat_point(const DomainSpec& V, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Eigen::VectorXd v(V.dim());
    if (V.is_all()) {
        for (int i = 0; i < V.dim(); ++i) v[i] = -2.0 + 4.0 * u01(rng);
        return v;
    }
    std::uniform_int_distribution<std::size_t> pick(0, V.box_list().size() - 1);
    const Box& box = V.box_list()[pick(rng)];
    for (int i = 0; i < V.dim(); ++i) {
        double lo = box.bounds[i].first;
        double hi = box.bounds[i].second;
        if (std::isfinite(lo) && std::isfinite(hi)) {
            const double margin = 0.1 * (hi - lo) / 2.0;
            lo += margin;
            hi -= margin;
        } else {
            lo = std::max(lo, -2.0);
            hi = std::min(hi, 2.0);
        }
        v[i] = lo + (hi - lo) * u01(rng);
    }
    return v;
}

Eigen::VectorXd sample_delay_point(const ModelSpec& m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const auto [lo, hi] = m.I();
    const double inset = 0.1 * (hi - lo);
    Eigen::VectorXd r(m.k());
    for (int kappa = 0; kappa < m.k(); ++kappa) {
        r[kappa] = lo + inset + (hi - lo - 2.0 * inset) * u01(rng);
    }
    return r;
}

StatePoint sample_domain_point(const ModelSpec& m, std::mt19937_64& rng, double scale) {
    double s = scale;
    for (int attempt = 0; attempt < 80; ++attempt) {
        StatePoint p{sample_delay_point(m, rng), random_vector_segment(m, s, rng)};
        if (in_domain_U(m, p).ok) return p;
        if (attempt % 8 == 7) s *= 0.7;
    }
    throw ConstructionError("no admissible sample found in the common domain");
}

StatePoint perturbed_manifold_point(const ModelSpec& m, double amplitude) {
    std::vector<ScalarSegment> comps;
    comps.reserve(m.n());
    for (int j = 0; j < m.n(); ++j) {
        const double phase = 0.7 * j;
        const double h = m.h();
        comps.push_back(make_segment(
            h, m.mesh(),
            [=](double t) { return amplitude * std::cos(std::numbers::pi * t / h + phase); },
            [=](double t) {
                return -amplitude * std::numbers::pi / h *
                       std::sin(std::numbers::pi * t / h + phase);
            }));
    }
    return find_manifold_point(
        m, StatePoint{documented_seed(m).r, VectorSegment(std::move(comps))});
}

CheckResult check_extension_contract(const ModelSpec& m, std::uint64_t seed, int segments) {
    CheckResult out;
    out.name = "extension_contract";
    out.bound = 3.0 + 1e-12;
    auto rng = check_rng(seed, out.name);
    std::uniform_real_distribution<double> uval(-1.0, 1.0);
    std::uniform_real_distribution<double> uslp(-3.0, 3.0);

    const double h = m.h();
    const int mesh = 64;
    double worst = 0.0;
    bool pass = true;
    for (int i = 0; i < segments; ++i) {
        std::vector<double> vals(mesh + 1);
        std::vector<double> slps(mesh + 1);
        for (int q = 0; q <= mesh; ++q) {
            vals[q] = uval(rng);
            slps[q] = uslp(rng);
        }
        const ScalarSegment phi(h, std::move(vals), std::move(slps));
        const double base = norms(phi).c_norm;
        if (base < 1e-12) continue;
        const double ratio = extension_sup_norm(phi, -2.0 * h, h) / base;
        if (ratio > worst) {
            worst = ratio;
            out.worst_at = "random segment " + std::to_string(i);
        }
        if (ratio > out.bound) pass = false;
        ++out.samples;
    }

    // witness: the odd reflection of a cosine arc triples its sup at t = h
    const ScalarSegment cosine = make_segment(
        h, mesh, [h](double t) { return std::cos(std::numbers::pi * t / h); },
        [h](double t) { return -std::numbers::pi / h * std::sin(std::numbers::pi * t / h); });
    const double witness = extension_sup_norm(cosine, -2.0 * h, h) / norms(cosine).c_norm;
    if (witness < 2.99) pass = false;

    // affine segments reproduce themselves under the extension
    const ScalarSegment affine =
        make_segment(h, mesh, [](double t) { return 0.3 + 0.7 * t; }, [](double) { return 0.7; });
    double affine_err = 0.0;
    for (int i = 0; i <= 200; ++i) {
        const double t = -2.0 * h + 3.0 * h * i / 200.0;
        affine_err = std::max(affine_err,
                              std::abs(affine.eval_extension(t).value - (0.3 + 0.7 * t)));
    }
    if (affine_err > 1e-12) pass = false;

    out.worst = std::max(worst, witness);
    out.pass = pass;
    out.detail = "max norm ratio " + fmt_num(worst) + " (cap 3), cosine witness " +
                 fmt_num(witness) + " (needs >= 2.99), affine extension error " +
                 fmt_num(affine_err);
    return out;
}

CheckResult check_constant_range(const ModelSpec& m) {
    CheckResult out;
    out.name = "constant_range";
    out.bound = 1e-8;
    const HqReport rep = verify_Hq(m);
    out.pass = rep.pass && rep.min_singular_value >= out.bound;
    out.worst = rep.min_singular_value;
    out.samples = rep.grid_points;
    out.worst_at = rep.detail;
    std::string dims;
    for (std::size_t j = 0; j < rep.range_dims.size(); ++j) {
        dims += (j ? ", " : "") + std::to_string(rep.range_dims[j]);
    }
    out.detail = "min singular value " + fmt_num(rep.min_singular_value) +
                 " (needs >= 1e-08), span residual " + fmt_num(rep.worst_span_residual) +
                 ", range dims [" + dims + "]";
    return out;
}

CheckResult check_derivative_consistency(const ModelSpec& m, std::uint64_t seed, int samples) {
    CheckResult out;
    out.name = "derivative_consistency";
    out.bound = 1e-5;
    auto rng = check_rng(seed, out.name);
    std::uniform_real_distribution<double> u(-1.0, 1.0);

    const double eps = 1e-6;
    double worst = 0.0;
    bool pass = true;
    int done = 0;
    for (int attempt = 0; attempt < 4 * samples && done < samples; ++attempt) {
        try {
            const StatePoint p = sample_domain_point(m, rng, 0.25);
            Eigen::VectorXd s(m.k());
            for (int kappa = 0; kappa < m.k(); ++kappa) s[kappa] = u(rng);
            const VectorSegment psi = random_vector_segment(m, 0.1, rng);

            const VectorSegment phi_p = seg_sum(p.phi, psi, eps);
            const VectorSegment phi_m = seg_sum(p.phi, psi, -eps);

            const Eigen::VectorXd dg = DG_directional(m, p, s, psi);
            const Eigen::VectorXd g_p = G_eval(m, StatePoint{p.r + eps * s, phi_p});
            const Eigen::VectorXd g_m = G_eval(m, StatePoint{p.r - eps * s, phi_m});
            const double eg = ((g_p - g_m) / (2.0 * eps) - dg).lpNorm<Eigen::Infinity>() /
                              (1.0 + dg.lpNorm<Eigen::Infinity>());

            const Eigen::VectorXd d2 = D2Delta_directional(m, p, psi);
            const Eigen::VectorXd f_p = Delta_eval_at(m, p.r, phi_p);
            const Eigen::VectorXd f_m = Delta_eval_at(m, p.r, phi_m);
            const double e2 = ((f_p - f_m) / (2.0 * eps) - d2).lpNorm<Eigen::Infinity>() /
                              (1.0 + d2.lpNorm<Eigen::Infinity>());

            const Eigen::MatrixXd d1 = D1Delta_jacobian(m, p);
            Eigen::MatrixXd fd1(m.k(), m.k());
            for (int kappa = 0; kappa < m.k(); ++kappa) {
                Eigen::VectorXd rp = p.r;
                Eigen::VectorXd rm = p.r;
                rp[kappa] += eps;
                rm[kappa] -= eps;
                fd1.col(kappa) =
                    (Delta_eval_at(m, rp, p.phi) - Delta_eval_at(m, rm, p.phi)) / (2.0 * eps);
            }
            const double e1 = (fd1 - d1).cwiseAbs().maxCoeff() / (1.0 + d1.cwiseAbs().maxCoeff());

            const double err = std::max({eg, e2, e1});
            if (err > worst) {
                worst = err;
                out.worst_at = "r = " + fmt_vec(p.r);
            }
            if (err > out.bound) pass = false;
            ++done;
        } catch (const DomainError&) {
            // probe stepped outside; draw a fresh point
        }
    }
    out.samples = done;
    out.worst = worst;
    out.pass = pass && done >= samples;
    out.detail = "max relative derivative mismatch over G and the constraint maps";
    if (done < samples) out.detail += "; only " + std::to_string(done) + " usable samples";
    return out;
}

CheckResult check_complement_contract(const TransformContext& ctx, std::uint64_t seed,
                                      int samples) {
    CheckResult out;
    out.name = "complement_contract";
    out.bound = 1.0;  // c-norm over the scale cap
    const ModelSpec& m = ctx.model();
    auto rng = check_rng(seed, out.name);

    double worst_ratio = 0.0;
    double worst_q = 0.0;
    bool slope_exact = true;
    bool pass = true;
    for (int i = 0; i < samples; ++i) {
        const Eigen::VectorXd r = sample_delay_point(m, rng);
        const Eigen::VectorXd v = sample_hat_point(m.g().V(), rng);
        const double cap = h_g_eval(m.g(), v);
        for (int j = 0; j < m.n(); ++j) {
            const ScalarSegment chi = ctx.field().eval(j, r, v);
            if (chi.slope_at_zero() != 1.0) slope_exact = false;
            const double qres = m.q().eval_component(r, chi, j, m.n()).lpNorm<Eigen::Infinity>();
            worst_q = std::max(worst_q, qres);
            if (qres > 1e-8) pass = false;
            const double ratio = norms(chi).c_norm / cap;
            if (ratio > worst_ratio) {
                worst_ratio = ratio;
                out.worst_at = "component " + std::to_string(j) + " at v = " + fmt_vec(v);
            }
            if (ratio > 1.0) pass = false;
        }
        ++out.samples;
    }
    out.worst = worst_ratio;
    out.pass = pass && slope_exact;
    out.detail = "max |chi|_C over the cap " + fmt_num(worst_ratio) + ", max |Q(chi)| " +
                 fmt_num(worst_q) + " (needs <= 1e-08), slope at zero " +
                 (slope_exact ? "exactly one" : "NOT exactly one");
    return out;
}

CheckResult check_complement_partials(const TransformContext& ctx, std::uint64_t seed,
                                      int samples) {
    CheckResult out;
    out.name = "complement_partials";
    const ModelSpec& m = ctx.model();
    auto rng = check_rng(seed, out.name);

    double worst_norm = 0.0;
    double worst_cap = kInf;
    double worst_mismatch = 0.0;
    bool pass = true;
    for (int i = 0; i < samples; ++i) {
        const Eigen::VectorXd r = sample_delay_point(m, rng);
        const Eigen::VectorXd v = sample_hat_point(m.g().V(), rng);
        const double cap = h_g_eval(m.g(), v) + 1e-6;
        for (int j = 0; j < m.n(); ++j) {
            for (int iota = 0; iota < m.g().kn(); ++iota) {
                const double step = 1e-6 * (1.0 + std::abs(v[iota]));
                Eigen::VectorXd vp = v;
                Eigen::VectorXd vm = v;
                vp[iota] += step;
                vm[iota] -= step;
                const ScalarSegment fd = scale_segment(
                    seg_difference(ctx.field().eval(j, r, vp), ctx.field().eval(j, r, vm)),
                    1.0 / (2.0 * step));
                const double cn = norms(fd).c_norm;
                if (cn > worst_norm) {
                    worst_norm = cn;
                    worst_cap = cap;
                    out.worst_at = "component " + std::to_string(j) + ", direction " +
                                   std::to_string(iota) + " at v = " + fmt_vec(v);
                }
                if (cn > cap) pass = false;
                const ScalarSegment ana = ctx.field().partial(j, r, v, iota);
                const double mismatch = norms(seg_difference(fd, ana)).c_norm;
                worst_mismatch = std::max(worst_mismatch, mismatch);
                if (mismatch > 1e-6) pass = false;
            }
        }
        ++out.samples;
    }
    out.worst = worst_norm;
    out.bound = worst_cap;
    out.pass = pass;
    out.detail = "max finite-difference partial norm " + fmt_num(worst_norm) +
                 " against cap-at-worst " + fmt_num(worst_cap) +
                 ", max mismatch with the analytic partial " + fmt_num(worst_mismatch);
    return out;
}

CheckResult check_contraction_bound(const TransformContext& ctx, std::uint64_t seed, int samples) {
    CheckResult out;
    out.name = "contraction_bound";
    out.bound = 0.5 + 1e-6;
    const ModelSpec& m = ctx.model();
    const DomainSpec& V = m.g().V();
    auto rng = check_rng(seed, out.name);

    double worst = 0.0;
    double worst_r_over_gap = 0.0;
    bool pass = true;
    for (int i = 0; i < samples; ++i) {
        const Eigen::VectorXd r = sample_delay_point(m, rng);
        const Eigen::VectorXd v = sample_hat_point(V, rng);
        const double dn = d2R_norm_estimate(ctx, r, v);
        if (dn > worst) {
            worst = dn;
            out.worst_at = "v = " + fmt_vec(v);
        }
        if (dn > out.bound) pass = false;
        if (!V.is_all()) {
            const double gap = V.boundary_gap(v);
            const double rmag = R_eval(ctx, r, v).lpNorm<Eigen::Infinity>();
            worst_r_over_gap = std::max(worst_r_over_gap, rmag / gap);
            if (rmag > 0.5 * gap + 1e-9) pass = false;
        }
        ++out.samples;
    }
    out.worst = worst;
    out.pass = pass;
    out.detail = "max |D2 R| estimate " + fmt_num(worst) + " (cap 0.5)";
    if (!V.is_all()) {
        out.detail += ", max |R| over half the boundary gap " + fmt_num(2.0 * worst_r_over_gap);
    }
    return out;
}

CheckResult check_fixed_point_inverse(const TransformContext& ctx, std::uint64_t seed,
                                      int samples) {
    CheckResult out;
    out.name = "fixed_point_inverse";
    out.bound = 1e-10;
    const ModelSpec& m = ctx.model();
    auto rng = check_rng(seed, out.name);

    double worst = 0.0;
    double worst_ratio = 0.0;
    int worst_iters = 0;
    bool pass = true;
    for (int i = 0; i < samples; ++i) {
        const Eigen::VectorXd r = sample_delay_point(m, rng);
        const Eigen::VectorXd v = sample_hat_point(m.g().V(), rng);
        const Eigen::VectorXd y = S_eval(ctx, r, v);
        try {
            const SInverseResult res = S_inverse(ctx, r, y);
            const double err = (S_eval(ctx, r, res.v) - y).lpNorm<Eigen::Infinity>();
            if (err > worst) {
                worst = err;
                out.worst_at = "y = " + fmt_vec(y);
            }
            if (err > out.bound) pass = false;
            worst_iters = std::max(worst_iters, res.iterations);
            if (res.iterations > 60) pass = false;
            for (std::size_t q = 0; q + 1 < res.step_norms.size(); ++q) {
                if (res.step_norms[q] <= 1e-13) continue;
                const double ratio = res.step_norms[q + 1] / res.step_norms[q];
                worst_ratio = std::max(worst_ratio, ratio);
                if (ratio > 0.5 + 1e-3) pass = false;
            }
        } catch (const ConvergenceError& e) {
            pass = false;
            out.worst_at = std::string("unreachable: ") + e.what();
        }
        ++out.samples;
    }
    out.worst = worst;
    out.pass = pass;
    out.detail = "max round-trip error " + fmt_num(worst) + ", max step ratio " +
                 fmt_num(worst_ratio) + " (cap 0.5), max iterations " +
                 std::to_string(worst_iters) + " (cap 60)";
    return out;
}

CheckResult check_round_trips(const TransformContext& ctx, std::uint64_t seed, int samples) {
    CheckResult out;
    out.name = "round_trips";
    out.bound = 1e-8;
    const ModelSpec& m = ctx.model();
    auto rng = check_rng(seed, out.name);

    double worst = 0.0;
    bool pass = true;
    int fwd_done = 0;
    for (int attempt = 0; attempt < 4 * samples && fwd_done < samples; ++attempt) {
        try {
            const StatePoint p = sample_domain_point(m, rng, 0.3);
            const StatePoint tp = T_map(ctx, p);
            const StatePoint back = Y_map(ctx, tp);
            const double err = norms(seg_difference(back.phi, p.phi)).c1_norm;
            if (err > worst) {
                worst = err;
                out.worst_at = "forward trip, r = " + fmt_vec(p.r);
            }
            if (err > out.bound) pass = false;
            ++fwd_done;
        } catch (const std::exception& e) {
            // a domain point whose image escapes the inverse domain would be
            // a genuine failure, not a resample
            pass = false;
            out.worst_at = std::string("forward trip failed: ") + e.what();
            ++fwd_done;
        }
    }

    int rev_done = 0;
    double scale = 0.15;
    for (int attempt = 0; attempt < 6 * samples && rev_done < samples; ++attempt) {
        const Eigen::VectorXd r = sample_delay_point(m, rng);
        const VectorSegment psi = random_flat_vector(m, scale, rng);
        StatePoint yq{r, psi};
        StatePoint pulled{r, psi};
        try {
            pulled = Y_map(ctx, yq);
        } catch (const DomainError&) {
            // flat sample outside the inverse domain; shrink and redraw
            if (attempt % 10 == 9) scale *= 0.7;
            continue;
        }
        const StatePoint round = T_map(ctx, pulled);
        const double err = norms(seg_difference(round.phi, psi)).c1_norm;
        if (err > worst) {
            worst = err;
            out.worst_at = "reverse trip, r = " + fmt_vec(r);
        }
        if (err > out.bound) pass = false;
        ++rev_done;
    }

    out.samples = fwd_done + rev_done;
    out.worst = worst;
    out.pass = pass && fwd_done >= samples && rev_done >= samples;
    out.detail = "max C1 round-trip error over " + std::to_string(fwd_done) + " forward and " +
                 std::to_string(rev_done) + " reverse trips";
    return out;
}

CheckResult check_manifold_transport(const TransformContext& ctx, std::uint64_t seed, int points) {
    CheckResult out;
    out.name = "manifold_transport";
    out.bound = 1e-7;
    const ModelSpec& m = ctx.model();
    auto rng = check_rng(seed, out.name);

    double worst = 0.0;
    bool pass = true;
    for (int i = 0; i < points; ++i) {
        try {
            const StatePoint p = random_manifold_point(m, rng, 0.05);
            const StatePoint tp = T_map(ctx, p);
            const double flat = tp.phi.slopes_at_zero().lpNorm<Eigen::Infinity>();
            if (flat > worst) {
                worst = flat;
                out.worst_at = "forward image, r = " + fmt_vec(p.r);
            }
            if (flat > out.bound) pass = false;
        } catch (const std::exception& e) {
            pass = false;
            out.worst_at = std::string("forward transport failed: ") + e.what();
        }
        ++out.samples;
    }

    int rev_done = 0;
    double scale = 0.05;
    for (int attempt = 0; attempt < 6 * points && rev_done < points; ++attempt) {
        const VectorSegment psi = random_flat_vector(m, scale, rng);
        const auto r = solve_flat_delay(ctx, psi, documented_seed(m).r);
        if (!r) {
            if (attempt % 10 == 9) scale *= 0.7;
            continue;
        }
        try {
            const StatePoint p = Y_map(ctx, StatePoint{*r, psi});
            const DomainCheck dc = in_domain_U(m, p);
            if (!dc.ok) throw DomainError(dc.detail);
            const double ode =
                (p.phi.slopes_at_zero() - G_eval(m, p)).lpNorm<Eigen::Infinity>();
            const double del = Delta_eval(m, p).lpNorm<Eigen::Infinity>();
            const double err = std::max(ode, del);
            if (err > worst) {
                worst = err;
                out.worst_at = "reverse image, r = " + fmt_vec(*r);
            }
            if (err > out.bound) pass = false;
        } catch (const std::exception& e) {
            pass = false;
            out.worst_at = std::string("reverse transport failed: ") + e.what();
        }
        ++rev_done;
        ++out.samples;
    }

    out.worst = worst;
    out.pass = pass && rev_done >= points;
    out.detail = "flat-slope residual of forward images and manifold residuals of " +
                 std::to_string(rev_done) + " pulled-back flat points";
    return out;
}

CheckResult check_graph_reduction(const TransformContext& ctx, std::uint64_t seed, int points) {
    CheckResult out;
    out.name = "graph_reduction";
    out.bound = 1e-9;
    const ModelSpec& m = ctx.model();
    if (!m.delta().is_offset() || m.q().as_constant_l() == nullptr) {
        out.pass = true;
        out.detail = "not applicable: needs an offset constraint over r-independent functionals";
        return out;
    }
    auto rng = check_rng(seed, out.name);

    double worst = 0.0;
    bool pass = true;
    for (int i = 0; i < points; ++i) {
        try {
            const StatePoint p = random_manifold_point(m, rng, 0.05);
            const StatePoint tp = T_map(ctx, p);
            const Eigen::VectorXd w = m.q().eval(tp.r, tp.phi);
            const double res = (tp.r + m.delta().offset_d(w)).lpNorm<Eigen::Infinity>();
            if (res > worst) {
                worst = res;
                out.worst_at = "r = " + fmt_vec(tp.r);
            }
            if (res > out.bound) pass = false;
        } catch (const std::exception& e) {
            pass = false;
            out.worst_at = std::string("sample failed: ") + e.what();
        }
        ++out.samples;
    }
    out.worst = worst;
    out.pass = pass;
    out.detail = "max |r + d(L psi)| over flat images of manifold points";
    return out;
}

CheckResult check_manifold_point_search(const ModelSpec& m) {
    CheckResult out;
    out.name = "manifold_point_search";
    out.bound = 1e-10;
    try {
        const StatePoint p = find_manifold_point(m, documented_seed(m));
        const double ode = (p.phi.slopes_at_zero() - G_eval(m, p)).lpNorm<Eigen::Infinity>();
        const double del = Delta_eval(m, p).lpNorm<Eigen::Infinity>();
        const double det = std::abs(D1Delta_jacobian(m, p).determinant());
        out.worst = std::max(ode, del);
        out.samples = 1;
        out.worst_at = "r = " + fmt_vec(p.r);
        bool target_ok = true;
        std::string target;
        Eigen::VectorXd expect;
        if (m.name() == "echo" || m.name() == "echo-domain") {
            expect = Eigen::VectorXd::Constant(1, -1.0);
        } else if (m.name() == "lin2") {
            expect = Eigen::VectorXd::Constant(1, -0.5);
        } else if (m.name() == "pair") {
            expect = Eigen::VectorXd(2);
            expect << -0.6, -0.7;
        }
        if (expect.size() > 0) {
            const double dist = (p.r - expect).lpNorm<Eigen::Infinity>();
            target_ok = dist <= 1e-6;
            target = ", distance to the documented root " + fmt_num(dist);
        }
        out.pass = ode <= out.bound && del <= out.bound && det >= 0.5 && target_ok;
        out.detail = "slope residual " + fmt_num(ode) + ", constraint residual " + fmt_num(del) +
                     ", |det D1 Delta| = " + fmt_num(det) + " (needs >= 0.5)" + target;
    } catch (const std::exception& e) {
        out.pass = false;
        out.detail = std::string("search failed: ") + e.what();
    }
    return out;
}

CheckResult check_semiflow(const ModelSpec& m, double t_end, double dt) {
    CheckResult out;
    out.name = "semiflow_residuals";
    out.bound = 1e-7;
    const StatePoint p0 = perturbed_manifold_point(m);
    const Trajectory traj = integrate(m, p0, t_end, dt);
    const ResidualSweep sweep = trajectory_residuals(m, traj, 200);

    const VectorSegment recon = traj.segment_at(traj.t_e, m.mesh());
    const double recon_err =
        (recon.values_at_zero() - traj.values.back()).lpNorm<Eigen::Infinity>();

    out.worst = sweep.max_delta;
    out.samples = sweep.checks;
    out.pass = traj.completed && sweep.max_delta <= 1e-7 && sweep.max_ode <= 1e-6 &&
               sweep.min_abs_det >= 0.5 && recon_err <= 1e-9;
    out.detail = "max |Delta| " + fmt_num(sweep.max_delta) + " (cap 1e-07), max ODE residual " +
                 fmt_num(sweep.max_ode) + " (cap 1e-06), min |det D1 Delta| " +
                 fmt_num(sweep.min_abs_det) + ", delay continuity |dr|/dt <= " +
                 fmt_num(sweep.max_r_step / traj.dt) + ", reconstruction error " +
                 fmt_num(recon_err);
    if (!traj.completed) {
        out.detail += "; " + traj.abort_reason;
        out.worst_at = "t_e = " + fmt_num(traj.t_e);
    }
    return out;
}

CheckResult check_convergence_order(const ModelSpec& m, double t_end, double dt0) {
    CheckResult out;
    out.name = "convergence_order";
    out.bound = 3.5;
    if (dt0 <= 0.0) dt0 = 0.8 * m.delta_min() / 4.0;

    const StatePoint p0 = perturbed_manifold_point(m, 0.2);
    const Trajectory coarse = integrate(m, p0, t_end, dt0);
    const Trajectory fine = integrate(m, p0, t_end, dt0 / 2.0);
    const Trajectory ref = integrate(m, p0, t_end, dt0 / 8.0);
    if (!coarse.completed || !fine.completed || !ref.completed) {
        out.pass = false;
        out.detail = "a run aborted early: " + coarse.abort_reason + fine.abort_reason +
                     ref.abort_reason;
        return out;
    }
    double e1 = 0.0;
    double e2 = 0.0;
    for (int j = 0; j < m.n(); ++j) {
        const double xr = ref.eval_component(j, t_end).value;
        e1 = std::max(e1, std::abs(coarse.eval_component(j, t_end).value - xr));
        e2 = std::max(e2, std::abs(fine.eval_component(j, t_end).value - xr));
    }
    out.samples = 2;
    if (e1 < 1e-13 || e2 < 1e-14) {
        // nothing left to measure against the rounding floor
        out.pass = true;
        out.worst = kInf;
        out.detail = "errors at the rounding floor (coarse " + fmt_num(e1) + ", fine " +
                     fmt_num(e2) + "); order not measurable";
        return out;
    }
    const double order = std::log2(e1 / e2);
    out.worst = order;
    out.pass = order >= out.bound;
    out.detail = "observed order " + fmt_num(order) + " from errors " + fmt_num(e1) + " -> " +
                 fmt_num(e2) + " at dt = " + fmt_num(dt0) + " halved";
    return out;
}

nlohmann::json VerificationReport::to_json() const {
    auto num = [](double x) {
        return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("non-finite");
    };
    nlohmann::json j;
    j["pass"] = pass;
    j["provenance"] = {{"scenario", scenario}, {"hash", scenario_hash},
                       {"seed", seed},         {"tol", tol},
                       {"dt", dt},             {"t_end", t_end},
                       {"mesh", mesh}};
    auto arr = nlohmann::json::array();
    for (const CheckResult& c : checks) {
        arr.push_back({{"name", c.name},
                       {"pass", c.pass},
                       {"worst", num(c.worst)},
                       {"bound", num(c.bound)},
                       {"samples", c.samples},
                       {"worst_at", c.worst_at},
                       {"detail", c.detail}});
    }
    j["checks"] = std::move(arr);
    return j;
}

VerificationReport run_verification(const Scenario& sc) {
    VerificationReport rep;
    rep.scenario = sc.model.name();
    rep.scenario_hash = sc.hash_hex();
    rep.seed = sc.seed;
    rep.tol = sc.tol;
    rep.dt = sc.dt;
    rep.t_end = sc.t_end;
    rep.mesh = sc.model.mesh();

    auto guarded = [&](const std::string& name, auto&& fn) {
        try {
            rep.checks.push_back(fn());
        } catch (const std::exception& e) {
            CheckResult c;
            c.name = name;
            c.pass = false;
            c.detail = std::string("exception: ") + e.what();
            rep.checks.push_back(std::move(c));
        }
    };
    const auto count = [&](int def) { return sc.samples > 0 ? sc.samples : def; };
    const int few = sc.samples > 0 ? std::min(sc.samples, 50) : 20;

    guarded("extension_contract",
            [&] { return check_extension_contract(sc.model, sc.seed, count(1000)); });
    guarded("constant_range", [&] { return check_constant_range(sc.model); });
    guarded("derivative_consistency",
            [&] { return check_derivative_consistency(sc.model, sc.seed, count(100)); });

    std::shared_ptr<TransformContext> ctx;
    try {
        ctx = std::make_shared<TransformContext>(std::make_shared<const ModelSpec>(sc.model));
    } catch (const std::exception& e) {
        CheckResult c;
        c.name = "complement_construction";
        c.pass = false;
        c.detail = std::string("exception: ") + e.what();
        rep.checks.push_back(std::move(c));
    }
    if (ctx) {
        guarded("complement_contract",
                [&] { return check_complement_contract(*ctx, sc.seed, count(500)); });
        guarded("complement_partials",
                [&] { return check_complement_partials(*ctx, sc.seed, count(500)); });
        guarded("contraction_bound",
                [&] { return check_contraction_bound(*ctx, sc.seed, count(200)); });
        guarded("fixed_point_inverse",
                [&] { return check_fixed_point_inverse(*ctx, sc.seed, count(100)); });
        guarded("round_trips", [&] { return check_round_trips(*ctx, sc.seed, count(100)); });
        guarded("manifold_transport",
                [&] { return check_manifold_transport(*ctx, sc.seed, few); });
        if (sc.model.delta().is_offset() && sc.model.q().as_constant_l() != nullptr) {
            guarded("graph_reduction",
                    [&] { return check_graph_reduction(*ctx, sc.seed, few); });
        }
    }
    guarded("manifold_point_search", [&] { return check_manifold_point_search(sc.model); });
    guarded("semiflow_residuals", [&] { return check_semiflow(sc.model, sc.t_end, sc.dt); });

    rep.pass = true;
    for (const CheckResult& c : rep.checks) rep.pass = rep.pass && c.pass;
    return rep;
}

}  // namespace adsm
