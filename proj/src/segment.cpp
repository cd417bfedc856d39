#include "adsm/segment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adsm {

namespace {

void require_finite(double x, const char* what, int i) {
    if (!std::isfinite(x)) {
        throw DomainError(std::string(what) + " is not finite at node " + std::to_string(i));
    }
}

// Relative slack for domain checks at interval endpoints.
double edge_slack(double h) { return 16.0 * std::numeric_limits<double>::epsilon() * h; }

}  // namespace

ScalarSegment::ScalarSegment(double h, std::vector<double> values, std::vector<double> slopes)
    : h_(h), values_(std::move(values)), slopes_(std::move(slopes)) {
    if (!(h > 0.0) || !std::isfinite(h)) throw DomainError("segment length h must be positive");
    if (values_.size() < 2) throw MeshError("segment needs at least one mesh interval");
    if (values_.size() != slopes_.size()) throw MeshError("values/slopes node counts differ");
    for (int i = 0; i < static_cast<int>(values_.size()); ++i) {
        require_finite(values_[i], "value", i);
        require_finite(slopes_[i], "slope", i);
    }
}

EvalResult ScalarSegment::eval(double t) const {
    const double slack = edge_slack(h_);
    if (t < -h_ - slack || t > slack) {
        throw DomainError("evaluation time " + std::to_string(t) + " outside [-h, 0]");
    }
    t = std::clamp(t, -h_, 0.0);
    const int N = intervals();
    const double d = dt();

    // Node hits return stored data exactly.
    const double pos = (t + h_) / d;
    const int near = static_cast<int>(std::llround(pos));
    if (near >= 0 && near <= N && t == node(near)) {
        return {values_[near], slopes_[near]};
    }

    int i = std::clamp(static_cast<int>(std::floor(pos)), 0, N - 1);
    const double s = (t - node(i)) / d;
    const double u0 = values_[i], u1 = values_[i + 1];
    const double m0 = slopes_[i], m1 = slopes_[i + 1];

    const double h00 = (2.0 * s - 3.0) * s * s + 1.0;
    const double h10 = ((s - 2.0) * s + 1.0) * s;
    const double h01 = (3.0 - 2.0 * s) * s * s;
    const double h11 = (s - 1.0) * s * s;
    const double g00 = 6.0 * s * (s - 1.0);
    const double g10 = (3.0 * s - 4.0) * s + 1.0;
    const double g01 = -g00;
    const double g11 = (3.0 * s - 2.0) * s;

    EvalResult out;
    out.value = h00 * u0 + h01 * u1 + d * (h10 * m0 + h11 * m1);
    out.slope = (g00 * u0 + g01 * u1) / d + g10 * m0 + g11 * m1;
    return out;
}

EvalResult ScalarSegment::eval_extension(double t) const {
    const double slack = edge_slack(h_);
    if (t < -2.0 * h_ - slack || t > h_ + slack) {
        throw DomainError("extension time " + std::to_string(t) + " outside [-2h, h]");
    }
    if (t > 0.0) {
        const EvalResult m = eval(std::max(-t, -h_));
        return {2.0 * values_.back() - m.value, m.slope};
    }
    if (t < -h_) {
        const EvalResult m = eval(std::min(-t - 2.0 * h_, 0.0));
        return {2.0 * values_.front() - m.value, m.slope};
    }
    return eval(t);
}

VectorSegment::VectorSegment(std::vector<ScalarSegment> components) : comps_(std::move(components)) {
    if (comps_.empty()) throw MeshError("vector segment needs at least one component");
    for (const auto& c : comps_) {
        if (!c.same_mesh(comps_.front())) throw MeshError("vector segment components disagree on mesh");
    }
}

Eigen::VectorXd VectorSegment::eval_values(double t) const {
    Eigen::VectorXd out(dim());
    for (int j = 0; j < dim(); ++j) out[j] = comps_[j].eval(t).value;
    return out;
}

Eigen::VectorXd VectorSegment::eval_slopes(double t) const {
    Eigen::VectorXd out(dim());
    for (int j = 0; j < dim(); ++j) out[j] = comps_[j].eval(t).slope;
    return out;
}

Eigen::VectorXd VectorSegment::values_at_zero() const {
    Eigen::VectorXd out(dim());
    for (int j = 0; j < dim(); ++j) out[j] = comps_[j].value_at_zero();
    return out;
}

Eigen::VectorXd VectorSegment::slopes_at_zero() const {
    Eigen::VectorXd out(dim());
    for (int j = 0; j < dim(); ++j) out[j] = comps_[j].slope_at_zero();
    return out;
}

ScalarSegment make_segment(double h, int intervals, const std::function<double(double)>& f,
                           const std::function<double(double)>& fp) {
    if (intervals < 1) throw MeshError("segment needs at least one mesh interval");
    std::vector<double> u(intervals + 1), du(intervals + 1);
    for (int i = 0; i <= intervals; ++i) {
        const double t = (i == intervals) ? 0.0 : -h + i * (h / intervals);
        u[i] = f(t);
        du[i] = fp(t);
    }
    return {h, std::move(u), std::move(du)};
}

ScalarSegment make_zero_segment(double h, int intervals) {
    return {h, std::vector<double>(intervals + 1, 0.0), std::vector<double>(intervals + 1, 0.0)};
}

ScalarSegment make_constant_segment(double h, int intervals, double c) {
    return {h, std::vector<double>(intervals + 1, c), std::vector<double>(intervals + 1, 0.0)};
}

VectorSegment make_zero_vector_segment(double h, int intervals, int n) {
    return VectorSegment(std::vector<ScalarSegment>(n, make_zero_segment(h, intervals)));
}

Eigen::VectorXd hat_vector(const Eigen::VectorXd& r, const VectorSegment& phi) {
    const int k = static_cast<int>(r.size());
    const int n = phi.dim();
    Eigen::VectorXd v(k * n);
    for (int kappa = 0; kappa < k; ++kappa) {
        for (int j = 0; j < n; ++j) {
            v[kappa * n + j] = phi.component(j).eval_extension(r[kappa]).value;
        }
    }
    return v;
}

VectorSegment odot(const VectorSegment& phi, const Eigen::VectorXd& c) {
    if (c.size() != phi.dim()) throw MeshError("odot coefficient count does not match dimension");
    std::vector<ScalarSegment> out;
    out.reserve(phi.dim());
    for (int j = 0; j < phi.dim(); ++j) {
        const auto& s = phi.component(j);
        std::vector<double> u(s.values()), du(s.slopes());
        for (auto& x : u) x *= c[j];
        for (auto& x : du) x *= c[j];
        out.emplace_back(s.h(), std::move(u), std::move(du));
    }
    return VectorSegment(std::move(out));
}

VectorSegment embed_component(const ScalarSegment& phi, int j, int n) {
    if (j < 0 || j >= n) throw MeshError("embed index out of range");
    std::vector<ScalarSegment> out;
    out.reserve(n);
    for (int m = 0; m < n; ++m) {
        if (m == j) {
            out.push_back(phi);
        } else {
            out.push_back(make_zero_segment(phi.h(), phi.intervals()));
        }
    }
    return VectorSegment(std::move(out));
}

namespace {

// Uniform norm grid over [-h, 0]: nodes plus kNormSamplesPerInterval
// interior points each, spacing dt/(kNormSamplesPerInterval+1).
template <typename F>
void for_each_norm_sample(double h, int intervals, F&& f) {
    const int per = kNormSamplesPerInterval + 1;
    const double step = h / (intervals * per);
    const int total = intervals * per;
    for (int m = 0; m <= total; ++m) {
        f(m == total ? 0.0 : -h + m * step);
    }
}

}  // namespace

SegmentNorms norms(const ScalarSegment& phi) {
    SegmentNorms out;
    double sup_slope = 0.0;
    for_each_norm_sample(phi.h(), phi.intervals(), [&](double t) {
        const EvalResult e = phi.eval(t);
        out.c_norm = std::max(out.c_norm, std::abs(e.value));
        sup_slope = std::max(sup_slope, std::abs(e.slope));
    });
    out.c1_norm = out.c_norm + sup_slope;
    return out;
}

SegmentNorms norms(const VectorSegment& phi) {
    SegmentNorms out;
    double sup_slope = 0.0;
    for_each_norm_sample(phi.h(), phi.intervals(), [&](double t) {
        out.c_norm = std::max(out.c_norm, phi.eval_values(t).norm());
        sup_slope = std::max(sup_slope, phi.eval_slopes(t).norm());
    });
    out.c1_norm = out.c_norm + sup_slope;
    return out;
}

namespace {

// Grid points anchored at -2h with the norm-grid spacing, clipped to [lo, hi].
template <typename F>
void for_each_extension_sample(double h, int intervals, double lo, double hi, F&& f) {
    const int per = kNormSamplesPerInterval + 1;
    const double step = h / (intervals * per);
    const double slack = edge_slack(h);
    if (lo < -2.0 * h - slack || hi > h + slack || lo > hi) {
        throw DomainError("extension norm window outside [-2h, h]");
    }
    lo = std::max(lo, -2.0 * h);
    hi = std::min(hi, h);
    const long first = static_cast<long>(std::ceil((lo + 2.0 * h) / step - 1e-9));
    const long last = static_cast<long>(std::floor((hi + 2.0 * h) / step + 1e-9));
    for (long m = first; m <= last; ++m) {
        const double t = -2.0 * h + m * step;
        f(std::clamp(t, lo, hi));
    }
}

}  // namespace

double extension_sup_norm(const ScalarSegment& phi, double lo, double hi) {
    double sup = 0.0;
    for_each_extension_sample(phi.h(), phi.intervals(), lo, hi, [&](double t) {
        sup = std::max(sup, std::abs(phi.eval_extension(t).value));
    });
    return sup;
}

double extension_sup_norm(const VectorSegment& phi, double lo, double hi) {
    double sup = 0.0;
    for_each_extension_sample(phi.h(), phi.intervals(), lo, hi, [&](double t) {
        double acc = 0.0;
        for (int j = 0; j < phi.dim(); ++j) {
            const double x = phi.component(j).eval_extension(t).value;
            acc += x * x;
        }
        sup = std::max(sup, std::sqrt(acc));
    });
    return sup;
}

double extension_sup_slope(const ScalarSegment& phi, double lo, double hi) {
    double sup = 0.0;
    for_each_extension_sample(phi.h(), phi.intervals(), lo, hi, [&](double t) {
        sup = std::max(sup, std::abs(phi.eval_extension(t).slope));
    });
    return sup;
}

ScalarSegment linear_combine(std::span<const ScalarSegment> segs, std::span<const double> coeffs) {
    if (segs.empty() || segs.size() != coeffs.size()) {
        throw MeshError("linear_combine needs matching nonempty segment/coefficient lists");
    }
    const auto& first = segs[0];
    std::vector<double> u(first.values().size(), 0.0), du(u.size(), 0.0);
    for (size_t s = 0; s < segs.size(); ++s) {
        if (!segs[s].same_mesh(first)) throw MeshError("linear_combine segments disagree on mesh");
        for (size_t i = 0; i < u.size(); ++i) {
            u[i] += coeffs[s] * segs[s].values()[i];
            du[i] += coeffs[s] * segs[s].slopes()[i];
        }
    }
    return {first.h(), std::move(u), std::move(du)};
}

VectorSegment linear_combine(std::span<const VectorSegment> segs, std::span<const double> coeffs) {
    if (segs.empty() || segs.size() != coeffs.size()) {
        throw MeshError("linear_combine needs matching nonempty segment/coefficient lists");
    }
    const int n = segs[0].dim();
    std::vector<ScalarSegment> comps;
    comps.reserve(n);
    for (int j = 0; j < n; ++j) {
        std::vector<ScalarSegment> parts;
        parts.reserve(segs.size());
        for (const auto& s : segs) {
            if (s.dim() != n) throw MeshError("linear_combine segments disagree on dimension");
            parts.push_back(s.component(j));
        }
        comps.push_back(linear_combine(std::span<const ScalarSegment>(parts), coeffs));
    }
    return VectorSegment(std::move(comps));
}

ScalarSegment blend(const ScalarSegment& a, const ScalarSegment& b, double w) {
    if (!a.same_mesh(b)) throw MeshError("blend segments disagree on mesh");
    std::vector<double> u(a.values().size()), du(u.size());
    for (size_t i = 0; i < u.size(); ++i) {
        u[i] = a.values()[i] + w * (b.values()[i] - a.values()[i]);
        du[i] = a.slopes()[i] + w * (b.slopes()[i] - a.slopes()[i]);
    }
    return {a.h(), std::move(u), std::move(du)};
}

nlohmann::json segment_to_json(const VectorSegment& s) {
    nlohmann::json j;
    j["h"] = s.h();
    j["n"] = s.dim();
    j["N"] = s.intervals();
    auto values = nlohmann::json::array();
    auto slopes = nlohmann::json::array();
    for (int c = 0; c < s.dim(); ++c) {
        values.push_back(s.component(c).values());
        slopes.push_back(s.component(c).slopes());
    }
    j["values"] = std::move(values);
    j["slopes"] = std::move(slopes);
    return j;
}

VectorSegment segment_from_json(const nlohmann::json& j) {
    try {
        const double h = j.at("h").get<double>();
        const int n = j.at("n").get<int>();
        const int N = j.at("N").get<int>();
        const auto& values = j.at("values");
        const auto& slopes = j.at("slopes");
        if (static_cast<int>(values.size()) != n || static_cast<int>(slopes.size()) != n) {
            throw ParseError("segment json: component count does not match n");
        }
        std::vector<ScalarSegment> comps;
        comps.reserve(n);
        for (int c = 0; c < n; ++c) {
            auto u = values.at(c).get<std::vector<double>>();
            auto du = slopes.at(c).get<std::vector<double>>();
            if (static_cast<int>(u.size()) != N + 1 || static_cast<int>(du.size()) != N + 1) {
                throw ParseError("segment json: node count does not match N");
            }
            comps.emplace_back(h, std::move(u), std::move(du));
        }
        return VectorSegment(std::move(comps));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("segment json: ") + e.what());
    } catch (const DomainError& e) {
        throw ParseError(std::string("segment json: ") + e.what());
    } catch (const MeshError& e) {
        throw ParseError(std::string("segment json: ") + e.what());
    }
}

}  // namespace adsm
