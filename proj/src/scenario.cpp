#include "adsm/scenario.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace adsm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

nlohmann::json box_to_json(const Box& b) {
    auto out = nlohmann::json::array();
    for (const auto& [lo, hi] : b.bounds) {
        nlohmann::json pair = nlohmann::json::array();
        pair.push_back(std::isfinite(lo) ? nlohmann::json(lo) : nlohmann::json(nullptr));
        pair.push_back(std::isfinite(hi) ? nlohmann::json(hi) : nlohmann::json(nullptr));
        out.push_back(std::move(pair));
    }
    return out;
}

Box box_from_json(const nlohmann::json& j, const std::string& what) {
    Box b;
    if (!j.is_array()) throw ParseError(what + ": expected an array of [lo, hi] pairs");
    for (const auto& pair : j) {
        if (!pair.is_array() || pair.size() != 2) {
            throw ParseError(what + ": expected [lo, hi] pairs");
        }
        const double lo = pair[0].is_null() ? -kInf : pair[0].get<double>();
        const double hi = pair[1].is_null() ? kInf : pair[1].get<double>();
        b.bounds.emplace_back(lo, hi);
    }
    return b;
}

nlohmann::json model_to_json(const ModelSpec& m) {
    nlohmann::json j;
    j["name"] = m.name();
    j["h"] = m.h();
    j["n"] = m.n();
    j["k"] = m.k();
    j["I"] = {m.I().first, m.I().second};
    j["J"] = {m.J().first, m.J().second};
    j["mesh"] = m.mesh();

    if (!m.g().expression_texts().empty()) {
        j["g"] = {{"exprs", m.g().expression_texts()}};
    } else {
        j["g"] = {{"exprs", "opaque"}};
    }
    if (m.g().V().is_all()) {
        j["V"] = "all";
    } else {
        auto boxes = nlohmann::json::array();
        for (const auto& b : m.g().V().box_list()) boxes.push_back(box_to_json(b));
        j["V"] = {{"boxes", std::move(boxes)}};
    }

    nlohmann::json q;
    if (const auto* cs = m.q().as_coord_select()) {
        q["variant"] = "coord_select";
        auto nu = nlohmann::json::array();
        auto kappa = nlohmann::json::array();
        for (int v : cs->nu) nu.push_back(v + 1);
        for (int v : cs->kappa) kappa.push_back(v + 1);
        q["nu"] = std::move(nu);
        q["kappa"] = std::move(kappa);
    } else if (const auto* cl = m.q().as_constant_l()) {
        q["variant"] = "constant_l";
        auto fns = nlohmann::json::array();
        for (const auto& fn : cl->functionals) {
            auto terms = nlohmann::json::array();
            for (const auto& t : fn) {
                terms.push_back({{"comp", t.comp + 1}, {"t", t.t}, {"w", t.weight}});
            }
            fns.push_back(std::move(terms));
        }
        q["functionals"] = std::move(fns);
    } else {
        q["variant"] = "user";
        q["dim_f"] = m.q().dim_f();
    }
    j["Q"] = std::move(q);

    nlohmann::json d;
    d["variant"] = m.delta().is_offset() ? "offset" : "general";
    if (!m.delta().expression_texts().empty()) {
        d[m.delta().is_offset() ? "d" : "exprs"] = m.delta().expression_texts();
    }
    d["dim_w"] = m.delta().dim_w();
    bool w_all = true;
    for (const auto& [lo, hi] : m.delta().W().bounds) {
        if (std::isfinite(lo) || std::isfinite(hi)) w_all = false;
    }
    d["W"] = w_all ? nlohmann::json("all") : box_to_json(m.delta().W());
    j["delta"] = std::move(d);
    return j;
}

Scenario finish(ModelSpec model, const nlohmann::json& overrides) {
    Scenario s{std::move(model), 42, 1e-3, 10.0, 1e-9, 0, nlohmann::json{}};
    if (overrides.contains("seed")) s.seed = overrides.at("seed").get<std::uint64_t>();
    if (overrides.contains("dt")) s.dt = overrides.at("dt").get<double>();
    if (overrides.contains("t_end")) s.t_end = overrides.at("t_end").get<double>();
    if (overrides.contains("tol")) s.tol = overrides.at("tol").get<double>();
    if (overrides.contains("samples")) s.samples = overrides.at("samples").get<int>();
    if (!(s.dt > 0.0) || !(s.t_end > 0.0) || !(s.tol > 0.0) || s.samples < 0) {
        throw ParseError("scenario run parameters must be positive");
    }
    nlohmann::json src = model_to_json(s.model);
    src["seed"] = s.seed;
    src["dt"] = s.dt;
    src["t_end"] = s.t_end;
    src["tol"] = s.tol;
    if (s.samples > 0) src["samples"] = s.samples;
    s.source = std::move(src);
    return s;
}

std::pair<double, double> default_I(double h) { return {-9.0 * h / 8.0, h / 8.0}; }
std::pair<double, double> default_J(double h) { return {-2.0 * h, h}; }

ModelSpec make_echo() {
    const double h = 2.0;
    Box W;
    W.bounds = {{-1.0, 1.0}};
    return ModelSpec("echo", h, 1, 1, default_I(h), default_J(h),
                     GSpec::from_expressions(1, 1, {"-v1"}, DomainSpec::all(1)),
                     QSpec::coord_select({0}, {0}),
                     DeltaSpec::offset({"1 + w1^2 / 2"}, 1, std::move(W)));
}

ModelSpec make_lin2() {
    const double h = 1.0;
    return ModelSpec("lin2", h, 1, 1, default_I(h), default_J(h),
                     GSpec::from_expressions(1, 1, {"-v1"}, DomainSpec::all(1)),
                     QSpec::constant_l({{PointTerm{0, -0.5, 1.0}}}),
                     DeltaSpec::offset({"(1 + tanh(w1)) / 2"}, 1, box_all(1)));
}

ModelSpec make_pair() {
    const double h = 1.0;
    return ModelSpec("pair", h, 2, 2, default_I(h), default_J(h),
                     GSpec::from_expressions(2, 2, {"-v1 + 0.1*v4", "-v2"}, DomainSpec::all(4)),
                     QSpec::coord_select({0, 1}, {0, 1}),
                     DeltaSpec::offset({"0.6 + 0.1*tanh(w1)", "0.7 + 0.1*tanh(w2)"}, 2, box_all(2)));
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t hash = 1469598103934665603ull;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

std::uint64_t Scenario::hash() const { return fnv1a64(source.dump()); }

std::string Scenario::hash_hex() const {
    std::ostringstream os;
    os << std::hex << hash();
    return os.str();
}

bool is_builtin_scenario(const std::string& name) {
    return name == "echo" || name == "lin2" || name == "pair";
}

Scenario builtin_scenario(const std::string& name) {
    if (name == "echo") return finish(make_echo(), {});
    if (name == "lin2") return finish(make_lin2(), {});
    if (name == "pair") return finish(make_pair(), {});
    throw ParseError("unknown builtin scenario '" + name + "'");
}

Scenario scenario_from_json(const nlohmann::json& j) {
    try {
        if (j.is_string()) return builtin_scenario(j.get<std::string>());
        if (j.contains("builtin")) {
            Scenario base = builtin_scenario(j.at("builtin").get<std::string>());
            if (j.contains("mesh")) base.model.set_mesh(j.at("mesh").get<int>());
            if (j.contains("V")) {
                // Domain override, mainly for restricted-domain variants of
                // the builtins.
                const auto& vj = j.at("V");
                DomainSpec V = DomainSpec::all(base.model.k() * base.model.n());
                if (!(vj.is_string() && vj.get<std::string>() == "all")) {
                    std::vector<Box> boxes;
                    for (const auto& bj : vj.at("boxes")) boxes.push_back(box_from_json(bj, "V box"));
                    V = DomainSpec::boxes(base.model.k() * base.model.n(), std::move(boxes));
                }
                const ModelSpec& b = base.model;
                ModelSpec replaced(b.name() + "-domain", b.h(), b.n(), b.k(), b.I(), b.J(),
                                   GSpec::from_expressions(b.k(), b.n(), b.g().expression_texts(),
                                                           std::move(V)),
                                   b.q(), b.delta(), b.mesh());
                return finish(std::move(replaced), j);
            }
            return finish(std::move(base.model), j);
        }

        const double h = j.at("h").get<double>();
        const int n = j.at("n").get<int>();
        const int k = j.at("k").get<int>();
        std::pair<double, double> I = default_I(h);
        std::pair<double, double> J = default_J(h);
        if (j.contains("I")) I = {j.at("I").at(0).get<double>(), j.at("I").at(1).get<double>()};
        if (j.contains("J")) J = {j.at("J").at(0).get<double>(), j.at("J").at(1).get<double>()};

        DomainSpec V = DomainSpec::all(k * n);
        if (j.contains("V")) {
            const auto& vj = j.at("V");
            if (!(vj.is_string() && vj.get<std::string>() == "all")) {
                std::vector<Box> boxes;
                for (const auto& bj : vj.at("boxes")) boxes.push_back(box_from_json(bj, "V box"));
                V = DomainSpec::boxes(k * n, std::move(boxes));
            }
        }
        GSpec g = GSpec::from_expressions(k, n, j.at("g").at("exprs").get<std::vector<std::string>>(),
                                          std::move(V));

        const auto& qj = j.at("Q");
        const std::string qv = qj.at("variant").get<std::string>();
        QSpec q = [&] {
            if (qv == "coord_select") {
                auto nu = qj.at("nu").get<std::vector<int>>();
                auto kappa = qj.at("kappa").get<std::vector<int>>();
                for (auto& v : nu) --v;
                for (auto& v : kappa) --v;
                return QSpec::coord_select(std::move(nu), std::move(kappa));
            }
            if (qv == "constant_l") {
                std::vector<std::vector<PointTerm>> fns;
                for (const auto& fj : qj.at("functionals")) {
                    std::vector<PointTerm> terms;
                    for (const auto& tj : fj) {
                        terms.push_back(PointTerm{tj.at("comp").get<int>() - 1, tj.at("t").get<double>(),
                                                  tj.at("w").get<double>()});
                    }
                    fns.push_back(std::move(terms));
                }
                return QSpec::constant_l(std::move(fns));
            }
            throw ParseError("scenario files support Q variants coord_select and constant_l");
        }();

        const auto& dj = j.at("delta");
        const std::string dv = dj.at("variant").get<std::string>();
        const int dim_w = q.dim_f();
        Box W = box_all(dim_w);
        if (dj.contains("W")) {
            const auto& wj = dj.at("W");
            if (!(wj.is_string() && wj.get<std::string>() == "all")) W = box_from_json(wj, "W");
        }
        DeltaSpec delta = [&] {
            if (dv == "offset") {
                return DeltaSpec::offset(dj.at("d").get<std::vector<std::string>>(), dim_w,
                                         std::move(W));
            }
            if (dv == "general") {
                return DeltaSpec::general(dj.at("exprs").get<std::vector<std::string>>(), k, dim_w,
                                          std::move(W));
            }
            throw ParseError("unknown constraint variant '" + dv + "'");
        }();

        const std::string name = j.contains("name") ? j.at("name").get<std::string>() : "inline";
        const int mesh = j.contains("mesh") ? j.at("mesh").get<int>() : 64;
        return finish(ModelSpec(name, h, n, k, I, J, std::move(g), std::move(q), std::move(delta), mesh),
                      j);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("scenario json: ") + e.what());
    }
}

Scenario load_scenario(const std::string& path_or_name) {
    if (is_builtin_scenario(path_or_name)) return builtin_scenario(path_or_name);
    std::ifstream in(path_or_name);
    if (!in) throw ParseError("cannot open scenario '" + path_or_name + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("scenario '" + path_or_name + "': " + e.what());
    }
    return scenario_from_json(j);
}

StatePoint documented_seed(const ModelSpec& model) {
    Eigen::VectorXd r;
    if (model.name() == "echo" || model.name() == "echo-domain") {
        r = Eigen::VectorXd::Constant(1, -0.9);
    } else if (model.name() == "lin2") {
        r = Eigen::VectorXd::Constant(1, -0.45);
    } else if (model.name() == "pair") {
        r = Eigen::VectorXd(2);
        r << -0.55, -0.75;
    } else {
        r = Eigen::VectorXd::Constant(model.k(), -model.h() / 2.0);
    }
    return StatePoint{std::move(r), model.zero_segment()};
}

nlohmann::json state_point_to_json(const StatePoint& p) {
    nlohmann::json j;
    j["r"] = std::vector<double>(p.r.data(), p.r.data() + p.r.size());
    j["phi"] = segment_to_json(p.phi);
    return j;
}

StatePoint state_point_from_json(const nlohmann::json& j) {
    try {
        const auto r = j.at("r").get<std::vector<double>>();
        Eigen::VectorXd rv = Eigen::Map<const Eigen::VectorXd>(r.data(), r.size());
        return StatePoint{std::move(rv), segment_from_json(j.at("phi"))};
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("point json: ") + e.what());
    }
}

}  // namespace adsm
