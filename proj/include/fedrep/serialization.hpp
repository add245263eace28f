#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedrep/federation.hpp"
#include "fedrep/mdp.hpp"

namespace fedrep {

using json = nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty())
    throw std::invalid_argument("matrix_from_json: expected nonempty array");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(j[i].size()) != cols)
      throw std::invalid_argument("matrix_from_json: ragged rows");
    for (int c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

inline json vector_to_json(const Vector& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Vector vector_from_json(const json& j) {
  Vector v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v(i) = j[i].get<double>();
  return v;
}

// Self-describing MDP fixture: states, actions, kernel slices, reward table,
// gamma. Round-trips exactly (doubles serialize losslessly).
inline json mdp_to_json(const Mdp& mdp) {
  json j;
  j["n_states"] = mdp.n_states();
  j["n_actions"] = mdp.n_actions();
  j["gamma"] = mdp.gamma;
  json kernel = json::array();
  for (const Matrix& P : mdp.kernel) kernel.push_back(matrix_to_json(P));
  j["kernel"] = std::move(kernel);
  j["reward"] = matrix_to_json(mdp.reward);
  return j;
}

inline Mdp mdp_from_json(const json& j) {
  Mdp mdp;
  mdp.gamma = j.at("gamma").get<double>();
  mdp.reward = matrix_from_json(j.at("reward"));
  for (const json& slice : j.at("kernel"))
    mdp.kernel.push_back(matrix_from_json(slice));
  if (j.at("n_states").get<int>() != mdp.n_states() ||
      j.at("n_actions").get<int>() != mdp.n_actions())
    throw std::invalid_argument("mdp_from_json: declared shape mismatch");
  mdp.validate();
  return mdp;
}

inline void save_mdp(const Mdp& mdp, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_mdp: cannot open " + path);
  out << mdp_to_json(mdp).dump(1) << '\n';
}

inline Mdp load_mdp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_mdp: cannot open " + path);
  json j;
  in >> j;
  return mdp_from_json(j);
}

// Full training state incl. RNG streams, so long reference runs can stop and
// resume with bit-identical continuation. RNG words are stored as decimal
// strings: JSON numbers cannot carry 64-bit integers faithfully.
inline json federation_state_to_json(const FederationState& st) {
  json j;
  j["round"] = st.round;
  j["phi"] = matrix_to_json(st.phi);
  json thetas = json::array();
  for (const Vector& th : st.thetas) thetas.push_back(vector_to_json(th));
  j["thetas"] = std::move(thetas);
  json locals = json::array();
  for (const Matrix& m : st.local_phis) locals.push_back(matrix_to_json(m));
  j["local_phis"] = std::move(locals);
  j["chain_states"] = st.chain_states;
  j["episodes"] = st.episodes;
  json streams = json::array();
  for (const RandomStream& s : st.streams)
    streams.push_back(std::to_string(s.state()));
  j["rng_states"] = std::move(streams);
  return j;
}

inline FederationState federation_state_from_json(const json& j) {
  FederationState st;
  st.round = j.at("round").get<long>();
  st.phi = matrix_from_json(j.at("phi"));
  for (const json& th : j.at("thetas")) st.thetas.push_back(vector_from_json(th));
  for (const json& m : j.at("local_phis"))
    st.local_phis.push_back(matrix_from_json(m));
  st.chain_states = j.at("chain_states").get<std::vector<int>>();
  st.episodes = j.at("episodes").get<std::vector<long>>();
  for (const json& s : j.at("rng_states")) {
    RandomStream rs(0);
    rs.set_state(std::stoull(s.get<std::string>()));
    st.streams.push_back(rs);
  }
  if (st.thetas.size() != st.streams.size() ||
      st.thetas.size() != st.chain_states.size())
    throw std::invalid_argument("federation_state_from_json: ragged state");
  return st;
}

inline void save_checkpoint(const FederationState& st, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << federation_state_to_json(st).dump(1) << '\n';
}

inline FederationState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  in >> j;
  return federation_state_from_json(j);
}

}  // namespace fedrep
