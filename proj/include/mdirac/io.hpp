#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "birkhoff.hpp"
#include "dirac.hpp"
#include "poly.hpp"
#include "symmetry.hpp"

namespace mdirac {

using json = nlohmann::ordered_json;

inline json to_json(const Vec& v) {
    json a = json::array();
    for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json to_json(const Mat& m) {
    json a = json::array();
    for (int r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        a.push_back(row);
    }
    return a;
}

// Terms in the library's monomial order with exponent vectors.
inline json to_json(const Poly& p) {
    json terms = json::array();
    for (const auto& t : p.terms()) terms.push_back({{"exp", expo::unpack(t.exp, p.n_vars())}, {"coef", t.coef}});
    return {{"n_vars", p.n_vars()}, {"max_degree", p.max_degree()}, {"terms", terms}};
}

inline Poly poly_from_json(const json& j) {
    Poly p(j.at("n_vars").get<int>(), j.at("max_degree").get<int>());
    for (const auto& t : j.at("terms")) p.add_term(expo::pack(t.at("exp").get<std::vector<int>>()), t.at("coef").get<double>());
    return p.normalize();
}

inline json to_json(const SingularityReport& r) {
    return {{"point", to_json(r.point)},
            {"rank_dphi", r.rank_dphi},
            {"sigma_min_c", r.sigma_min_c},
            {"cond_c", std::isfinite(r.cond_c) ? json(r.cond_c) : json("inf")},
            {"flags", r.flags}};
}

inline json to_json(const DriftReport& r) {
    return {{"max_residual", r.max_residual},
            {"hessian_cross_block", r.hessian_cross_block},
            {"field_at_x0", r.field_at_x0},
            {"tau", r.tau},
            {"n_probes", r.residuals.size()},
            {"pass", r.is_drift_free}};
}

inline json to_json(const StationarityReport& r) {
    return {{"max_directional_derivative", r.max_directional_derivative},
            {"per_direction", r.per_direction},
            {"pass", r.stationary}};
}

inline json to_json(const NormalFormResult& r) {
    json res = json::object(), gens = json::object(), resid = json::object(), div = json::object();
    for (const auto& [k, p] : r.resonant_terms) res[std::to_string(k)] = to_json(p);
    for (const auto& [k, p] : r.generators) gens[std::to_string(k)] = to_json(p);
    for (const auto& [k, v] : r.residual_report) resid[std::to_string(k)] = v;
    for (const auto& [k, v] : r.min_divisor)
        div[std::to_string(k)] = std::isfinite(v) ? json(v) : json(nullptr);
    json z = json::array();
    for (const auto& p : r.composed_transform) z.push_back(to_json(p));
    return {{"K", r.k},
            {"eta", to_json(r.h2.eta)},
            {"linear_transform", to_json(r.h2.t)},
            {"resonant_terms", res},
            {"generators", gens},
            {"residual_report", resid},
            {"min_divisor", div},
            {"warnings", r.warnings},
            {"composed_transform", z}};
}

}  // namespace mdirac
