#pragma once

// Fluid embedding of the regime-switching jump diffusion: jumps are unfolded
// into ladder excursions through auxiliary phase states, so the embedded
// process (A, Y) moves continuously with unit slopes on the jump states.

#include <vector>

#include "model.hpp"

namespace rsjd {

struct StateSpace {
  int n_regimes = 0;
  std::vector<int> plus_size;   // m_i^+ per regime
  std::vector<int> minus_size;  // m_i^- per regime

  int n_plus = 0;   // N^+ = sum of plus blocks
  int n_minus = 0;  // N^- = sum of minus blocks

  std::vector<int> plus_offset;   // start of E_i^+ block
  std::vector<int> minus_offset;  // start of E_i^- block
  int zero_offset = 0;            // start of E^0

  std::vector<int> owner_of;  // embedded index -> regime

  int total() const { return n_plus + n_regimes + n_minus; }
  int zero_index(int regime) const { return zero_offset + regime; }
  bool is_plus(int e) const { return e < n_plus; }
  bool is_zero(int e) const { return e >= n_plus && e < n_plus + n_regimes; }
  bool is_minus(int e) const { return e >= n_plus + n_regimes; }
  int owner(int e) const { return owner_of[e]; }

  std::vector<int> plus_indices() const {
    std::vector<int> idx(n_plus);
    for (int e = 0; e < n_plus; ++e) idx[e] = e;
    return idx;
  }
  std::vector<int> zero_indices() const {
    std::vector<int> idx(n_regimes);
    for (int i = 0; i < n_regimes; ++i) idx[i] = zero_offset + i;
    return idx;
  }
  std::vector<int> minus_indices() const {
    std::vector<int> idx(n_minus);
    for (int e = 0; e < n_minus; ++e) idx[e] = zero_offset + n_regimes + e;
    return idx;
  }
};

struct FluidEmbedding {
  StateSpace states;
  Matrix Q;      // block generator with killing folded into the E^0 diagonal
  Vector v;      // drift diagonal: +1 on E^+, mu_i on E^0, -1 on E^-
  Vector sigma;  // volatility diagonal: sigma_i on E^0, 0 elsewhere
  Vector kill;   // exit rates (-Q)1, nonzero only on E^0 rows
};

inline StateSpace make_state_space(std::vector<int> plus_size,
                                   std::vector<int> minus_size) {
  StateSpace s;
  s.n_regimes = static_cast<int>(plus_size.size());
  s.plus_size = std::move(plus_size);
  s.minus_size = std::move(minus_size);
  s.plus_offset.resize(s.n_regimes, 0);
  s.minus_offset.resize(s.n_regimes, 0);
  int at = 0;
  for (int i = 0; i < s.n_regimes; ++i) {
    s.plus_offset[i] = at;
    at += s.plus_size[i];
  }
  s.n_plus = at;
  s.zero_offset = at;
  at += s.n_regimes;
  for (int i = 0; i < s.n_regimes; ++i) {
    s.minus_offset[i] = at;
    at += s.minus_size[i];
  }
  s.n_minus = at - s.zero_offset - s.n_regimes;
  s.owner_of.assign(s.total(), -1);
  for (int i = 0; i < s.n_regimes; ++i) {
    for (int k = 0; k < s.plus_size[i]; ++k) s.owner_of[s.plus_offset[i] + k] = i;
    s.owner_of[s.zero_index(i)] = i;
    for (int k = 0; k < s.minus_size[i]; ++k) s.owner_of[s.minus_offset[i] + k] = i;
  }
  return s;
}

// Assemble the embedded generator with per-regime killing rates a >= 0 on the
// E^0 diagonal. Phase-type laws with an atom at zero contribute that mass
// back to the regime state, so rows stay conservative up to the killing.
inline FluidEmbedding embed(const ModelSpec& m, const Vector& a) {
  m.validate();
  if (a.size() != m.n_regimes()) {
    throw validation_error("embed: killing vector has wrong length");
  }
  if ((a.array() < 0.0).any()) {
    throw validation_error("embed: killing rates must be nonnegative");
  }

  FluidEmbedding fe;
  fe.states = make_state_space(m);
  const StateSpace& s = fe.states;
  const int n = s.total();
  fe.Q = Matrix::Zero(n, n);
  fe.v = Vector::Zero(n);
  fe.sigma = Vector::Zero(n);

  for (int i = 0; i < s.n_regimes; ++i) {
    const auto& reg = m.regimes[i];
    const int z = s.zero_index(i);
    fe.v(z) = reg.mu;
    fe.sigma(z) = reg.sigma;

    for (int j = 0; j < s.n_regimes; ++j) {
      fe.Q(z, s.zero_index(j)) = m.G(i, j);
    }
    fe.Q(z, z) -= reg.lambda + a(i);

    if (s.plus_size[i] > 0) {
      const PhaseType& ph = *reg.jumps->plus;
      const double rate = reg.jumps->p * reg.lambda;
      const int o = s.plus_offset[i];
      fe.Q.block(o, o, ph.dim(), ph.dim()) = ph.T;
      fe.Q.block(o, z, ph.dim(), 1) = ph.exit_rates();
      fe.Q.block(z, o, 1, ph.dim()) = rate * ph.alpha.transpose();
      fe.Q(z, z) += rate * (1.0 - ph.alpha.sum());  // atom at zero
      fe.v.segment(o, ph.dim()).setConstant(1.0);
    }

    if (s.minus_size[i] > 0) {
      const PhaseType& ph = *reg.jumps->minus;
      const double rate = (1.0 - reg.jumps->p) * reg.lambda;
      const int o = s.minus_offset[i];
      fe.Q.block(o, o, ph.dim(), ph.dim()) = ph.T;
      fe.Q.block(o, z, ph.dim(), 1) = ph.exit_rates();
      fe.Q.block(z, o, 1, ph.dim()) = rate * ph.alpha.transpose();
      fe.Q(z, z) += rate * (1.0 - ph.alpha.sum());
      fe.v.segment(o, ph.dim()).setConstant(-1.0);
    }
  }

  fe.kill = -fe.Q.rowwise().sum();
  return fe;
}

inline FluidEmbedding embed(const ModelSpec& m) {
  return embed(m, Vector::Zero(m.n_regimes()));
}

// Killing by the per-regime discount rates r(i), the case used for pricing.
inline FluidEmbedding embed_discounted(const ModelSpec& m) {
  Vector a(m.n_regimes());
  for (int i = 0; i < m.n_regimes(); ++i) a(i) = m.regimes[i].r;
  return embed(m, a);
}

}  // namespace rsjd
