#pragma once

#include <cstdint>
#include <string>

#include "poserec/autodiff.hpp"

namespace poserec {

inline constexpr std::size_t kDefaultFactorCount = 9;
inline constexpr std::size_t kDefaultFactorDim = 768;

// An item with its F factor embeddings [F x dim]. `category` is the name
// factor's head noun, the grouping key for Cat Rec. Bit j of factor_mask
// enables factor j; masked factors contribute zero to the merge.
struct ItemRecord {
  std::string item_id;
  std::string category;
  Tensor factors;
  std::uint32_t factor_mask = 0xFFFFFFFFu;

  std::size_t factor_count() const { return factors.rank() == 2 ? factors.dim(0) : 0; }
  std::size_t factor_dim() const { return factors.rank() == 2 ? factors.dim(1) : 0; }
};

// The item tower: weighted factor merge, then two projections into the
// shared space (e_i, 256-d) and the prototype-query space (e_ic, d-dim).
class ItemTower {
 public:
  ItemTower() = default;

  ItemTower(ParamStore& store, std::size_t factor_count, std::size_t factor_dim,
            std::size_t embed_dim, std::size_t chunk_dim)
      : factor_count_(factor_count) {
    w_ = &store.create("item.w", {factor_count});
    // 1/F so the initial merge is the plain mean of factors.
    for (double& v : w_->value.data()) v = 1.0 / static_cast<double>(factor_count);
    w2_ = &store.create("item.W2", {embed_dim, factor_dim});
    b2_ = &store.create("item.b2", {embed_dim});
    w3_ = &store.create("item.W3", {chunk_dim, factor_dim});
    b3_ = &store.create("item.b3", {chunk_dim});
  }

  // s_i = sum_j w_j f_{i,j} over unmasked factors.
  Tape::VarId merge_factors(Tape& tape, const ItemRecord& item,
                            std::uint32_t config_mask = 0xFFFFFFFFu) const {
    if (item.factor_count() != factor_count_) {
      throw ShapeError("merge_factors: item " + item.item_id + " has " +
                       std::to_string(item.factor_count()) + " factors, model expects " +
                       std::to_string(factor_count_));
    }
    return tape.factor_merge(tape.param(*w_), tape.input(item.factors),
                             item.factor_mask & config_mask);
  }

  struct Encoded {
    Tape::VarId e_i;   // [embed_dim]
    Tape::VarId e_ic;  // [chunk_dim]
  };

  Encoded encode(Tape& tape, const ItemRecord& item,
                 std::uint32_t config_mask = 0xFFFFFFFFu) const {
    auto s = merge_factors(tape, item, config_mask);
    return Encoded{
        tape.affine(tape.param(*w2_), s, tape.param(*b2_)),
        tape.affine(tape.param(*w3_), s, tape.param(*b3_)),
    };
  }

  Parameter& factor_weights() const { return *w_; }
  Parameter& w2() const { return *w2_; }
  Parameter& b2() const { return *b2_; }
  Parameter& w3() const { return *w3_; }
  Parameter& b3() const { return *b3_; }
  std::size_t factor_count() const { return factor_count_; }

 private:
  std::size_t factor_count_ = kDefaultFactorCount;
  Parameter* w_ = nullptr;
  Parameter* w2_ = nullptr;
  Parameter* b2_ = nullptr;
  Parameter* w3_ = nullptr;
  Parameter* b3_ = nullptr;
};

}  // namespace poserec
