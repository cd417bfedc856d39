#pragma once

#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "adsm/errors.hpp"

namespace adsm {

struct EvalResult {
    double value = 0.0;
    double slope = 0.0;
};

struct SegmentNorms {
    double c_norm = 0.0;   // sup |phi|
    double c1_norm = 0.0;  // sup |phi| + sup |phi'|
};

// Interior sample count per mesh interval for sup-norm estimates.
inline constexpr int kNormSamplesPerInterval = 8;

// C^1 function [-h,0] -> R: (value, slope) data on a uniform mesh,
// cubic Hermite in between. Evaluation at a node returns the stored
// data exactly.
class ScalarSegment {
  public:
    ScalarSegment(double h, std::vector<double> values, std::vector<double> slopes);

    double h() const { return h_; }
    int intervals() const { return static_cast<int>(values_.size()) - 1; }
    double dt() const { return h_ / intervals(); }
    double node(int i) const { return i == intervals() ? 0.0 : -h_ + i * dt(); }
    const std::vector<double>& values() const { return values_; }
    const std::vector<double>& slopes() const { return slopes_; }
    double value_at_zero() const { return values_.back(); }
    double slope_at_zero() const { return slopes_.back(); }

    bool same_mesh(const ScalarSegment& other) const {
        return h_ == other.h_ && values_.size() == other.values_.size();
    }

    // t in [-h, 0].
    EvalResult eval(double t) const;

    // Reflection extension E on [-2h, h]:
    //   E phi(t) = 2 phi(0)  - phi(-t)      for 0 <= t,
    //   E phi(t) = 2 phi(-h) - phi(-t-2h)   for t <= -h,
    // and E phi = phi on [-h, 0]; slopes are phi'(-t) resp. phi'(-t-2h).
    EvalResult eval_extension(double t) const;

  private:
    double h_;
    std::vector<double> values_;
    std::vector<double> slopes_;
};

// n scalar components on one shared mesh.
class VectorSegment {
  public:
    explicit VectorSegment(std::vector<ScalarSegment> components);

    int dim() const { return static_cast<int>(comps_.size()); }
    double h() const { return comps_.front().h(); }
    int intervals() const { return comps_.front().intervals(); }
    const ScalarSegment& component(int j) const { return comps_.at(j); }
    const std::vector<ScalarSegment>& components() const { return comps_; }

    Eigen::VectorXd eval_values(double t) const;
    Eigen::VectorXd eval_slopes(double t) const;
    Eigen::VectorXd values_at_zero() const;
    Eigen::VectorXd slopes_at_zero() const;

    bool same_mesh(const VectorSegment& other) const {
        return dim() == other.dim() && comps_.front().same_mesh(other.comps_.front());
    }

  private:
    std::vector<ScalarSegment> comps_;
};

ScalarSegment make_segment(double h, int intervals, const std::function<double(double)>& f,
                           const std::function<double(double)>& fp);
ScalarSegment make_zero_segment(double h, int intervals);
ScalarSegment make_constant_segment(double h, int intervals, double c);
VectorSegment make_zero_vector_segment(double h, int intervals, int n);

// Hat vector of (r, phi): component (kappa*n + j) is E phi_j(r_kappa),
// indices 0-based, r_kappa in [-2h, h].
Eigen::VectorXd hat_vector(const Eigen::VectorXd& r, const VectorSegment& phi);

// Componentwise scaling (phi odot c)_j = c_j * phi_j.
VectorSegment odot(const VectorSegment& phi, const Eigen::VectorXd& c);

// phi * e_j: scalar segment placed in component j (0-based) of an
// n-dimensional segment, zero elsewhere.
VectorSegment embed_component(const ScalarSegment& phi, int j, int n);

SegmentNorms norms(const ScalarSegment& phi);
SegmentNorms norms(const VectorSegment& phi);

// Sampled sup of |E phi| over [lo, hi] subset of [-2h, h]. Samples lie on
// the uniform norm grid anchored at -2h, so every reflected sample point
// is itself a grid point of the base interval.
double extension_sup_norm(const ScalarSegment& phi, double lo, double hi);
double extension_sup_norm(const VectorSegment& phi, double lo, double hi);
// Same grid, sup of |(E phi)'|.
double extension_sup_slope(const ScalarSegment& phi, double lo, double hi);

ScalarSegment linear_combine(std::span<const ScalarSegment> segs, std::span<const double> coeffs);
VectorSegment linear_combine(std::span<const VectorSegment> segs, std::span<const double> coeffs);

// a + w * (b - a), computed nodewise in exactly that form. Where a and b
// store equal node data the result reproduces it bit for bit.
ScalarSegment blend(const ScalarSegment& a, const ScalarSegment& b, double w);

nlohmann::json segment_to_json(const VectorSegment& s);
VectorSegment segment_from_json(const nlohmann::json& j);

}  // namespace adsm
