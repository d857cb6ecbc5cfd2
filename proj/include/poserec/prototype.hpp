#pragma once

#include <vector>

#include "poserec/autodiff.hpp"
#include "poserec/rng.hpp"

namespace poserec {

// K learnable d-dim prototype directions r_k. Rows are separate parameters
// ("proto.r0", "proto.r1", ...) so the checkpoint naming falls out directly.
class PrototypeBank {
 public:
  PrototypeBank() = default;

  PrototypeBank(ParamStore& store, std::size_t k, std::size_t dim) : dim_(dim) {
    rows_.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      rows_.push_back(&store.create("proto.r" + std::to_string(i), {dim}));
    }
  }

  // Unit-norm random directions; resamples until every pair has cosine
  // below 0.5, since near-duplicate prototypes stall the separation loss.
  void init(std::mt19937_64& g) {
    for (std::size_t i = 0; i < rows_.size(); ++i) {
      for (int attempt = 0; attempt < 1000; ++attempt) {
        Tensor& r = rows_[i]->value;
        for (double& v : r.data()) v = rng::normal(g);
        const double n = detail::norm(r.data());
        for (double& v : r.data()) v /= n;
        bool ok = true;
        for (std::size_t j = 0; j < i && ok; ++j) {
          ok = cosine_sim(r, rows_[j]->value) < 0.5;
        }
        if (ok) break;
      }
    }
  }

  std::size_t count() const { return rows_.size(); }
  std::size_t dim() const { return dim_; }
  Parameter& row(std::size_t k) const { return *rows_.at(k); }

  // omega'_k = cos(e_ic, r_k) / temperature; omega = softmax(omega').
  // The temperature is an ablation knob and defaults to 1 (no temperature).
  Tape::VarId contribution_weights(Tape& tape, Tape::VarId e_ic,
                                   double temperature = 1.0) const {
    std::vector<Tape::VarId> sims;
    sims.reserve(rows_.size());
    for (Parameter* r : rows_) sims.push_back(tape.cosine(e_ic, tape.param(*r)));
    auto stacked = tape.stack(sims);
    if (temperature != 1.0) stacked = tape.scale(stacked, 1.0 / temperature);
    return tape.softmax(stacked);
  }

  // L_pro = sum_{k1 < k2} cos(r_k1, r_k2); zero for a single prototype.
  Tape::VarId separation_loss(Tape& tape) const {
    std::vector<Tape::VarId> terms;
    for (std::size_t a = 0; a + 1 < rows_.size(); ++a) {
      for (std::size_t b = a + 1; b < rows_.size(); ++b) {
        terms.push_back(tape.cosine(tape.param(*rows_[a]), tape.param(*rows_[b])));
      }
    }
    if (terms.empty()) return tape.input(Tensor::scalar(0.0));
    return tape.sum(terms);
  }

 private:
  std::vector<Parameter*> rows_;
  std::size_t dim_ = 0;
};

// Eq.-7 style score: omega-weighted sum of per-chunk cosines between the two
// shared embeddings. K = 1 reduces to the plain cosine.
inline Tape::VarId prototype_score(Tape& tape, Tape::VarId e_i, Tape::VarId e_v,
                                   Tape::VarId omega, std::size_t k_chunks,
                                   std::size_t chunk_dim) {
  const Tensor& ti = tape.value(e_i);
  const Tensor& tv = tape.value(e_v);
  const Tensor& tw = tape.value(omega);
  if (ti.size() != k_chunks * chunk_dim || !ti.same_dims(tv) || tw.size() != k_chunks) {
    throw ShapeError("prototype_score: e_i " + ti.dims_str() + ", e_v " + tv.dims_str() +
                     ", omega " + tw.dims_str());
  }
  std::vector<Tape::VarId> sims;
  sims.reserve(k_chunks);
  for (std::size_t k = 0; k < k_chunks; ++k) {
    auto ci = tape.chunk(e_i, k * chunk_dim, chunk_dim);
    auto cv = tape.chunk(e_v, k * chunk_dim, chunk_dim);
    sims.push_back(tape.cosine(ci, cv));
  }
  return tape.dot(omega, tape.stack(sims));
}

}  // namespace poserec
