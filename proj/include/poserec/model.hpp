#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "poserec/item_encoder.hpp"
#include "poserec/optim.hpp"
#include "poserec/pose_encoder.hpp"
#include "poserec/prototype.hpp"

namespace poserec {

struct ModelConfig {
  std::size_t window_len = 10;
  std::vector<StgcnLayerSpec> layers = default_stgcn_stack();
  std::size_t embed_dim = 256;  // K * chunk_dim
  std::size_t prototypes = 4;   // K
  std::size_t chunk_dim = 64;   // d
  std::size_t factor_count = kDefaultFactorCount;
  std::size_t factor_dim = kDefaultFactorDim;
  std::uint32_t factor_mask = 0x1FFu;
  double softmax_temperature = 1.0;

  void validate() const {
    if (prototypes == 0 || chunk_dim == 0 || prototypes * chunk_dim != embed_dim) {
      throw UsageError("model config: K * chunk_dim must equal embed_dim (" +
                       std::to_string(prototypes) + " * " + std::to_string(chunk_dim) +
                       " != " + std::to_string(embed_dim) + ")");
    }
    if (layers.empty() || window_len == 0 || factor_count == 0 || factor_dim == 0) {
      throw UsageError("model config: empty tower or zero-sized field");
    }
  }
};

// Both towers plus the prototype bank over one ParamStore. Encoding through a
// tape is the training path; the *_values helpers run a throwaway tape for
// frozen-weight evaluation.
class PoseRecModel {
 public:
  PoseRecModel(ModelConfig cfg, Tensor adjacency, std::uint64_t seed)
      : cfg_(std::move(cfg)), adjacency_(std::move(adjacency)) {
    cfg_.validate();
    video_ = VideoTower(store_, cfg_.layers, cfg_.embed_dim);
    items_ = ItemTower(store_, cfg_.factor_count, cfg_.factor_dim, cfg_.embed_dim,
                       cfg_.chunk_dim);
    bank_ = PrototypeBank(store_, cfg_.prototypes, cfg_.chunk_dim);
    init_weights(seed);
  }

  const ModelConfig& config() const { return cfg_; }
  const Tensor& adjacency() const { return adjacency_; }
  ParamStore& params() { return store_; }
  const VideoTower& video_tower() const { return video_; }
  const ItemTower& item_tower() const { return items_; }
  const PrototypeBank& prototypes() const { return bank_; }

  // --- tape encoders (training) ---

  Tape::VarId encode_video(Tape& tape, const Tensor& window) const {
    return video_.encode(tape, window, cfg_.window_len, adjacency_);
  }

  struct ItemCode {
    Tape::VarId e_i;
    Tape::VarId e_ic;
    Tape::VarId omega;
  };

  ItemCode encode_item(Tape& tape, const ItemRecord& item) const {
    auto enc = items_.encode(tape, item, cfg_.factor_mask);
    auto omega = bank_.contribution_weights(tape, enc.e_ic, cfg_.softmax_temperature);
    return ItemCode{enc.e_i, enc.e_ic, omega};
  }

  Tape::VarId score(Tape& tape, const ItemCode& item, Tape::VarId e_v) const {
    return prototype_score(tape, item.e_i, e_v, item.omega, cfg_.prototypes, cfg_.chunk_dim);
  }

  // --- frozen-weight helpers (inference/evaluation) ---

  Tensor embed_video(const Tensor& window) {
    Tape tape;
    return tape.value(encode_video(tape, window));
  }

  struct ItemEmbedding {
    Tensor e_i;
    Tensor e_ic;
    Tensor omega;
  };

  ItemEmbedding embed_item(const ItemRecord& item) {
    Tape tape;
    auto code = encode_item(tape, item);
    return ItemEmbedding{tape.value(code.e_i), tape.value(code.e_ic), tape.value(code.omega)};
  }

  double score_pair(const ItemRecord& item, const Tensor& window) {
    Tape tape;
    auto code = encode_item(tape, item);
    auto ev = encode_video(tape, window);
    return tape.value(score(tape, code, ev))[0];
  }

 private:
  void init_weights(std::uint64_t seed) {
    auto g = rng::engine(rng::derive(seed, "model-init"));
    for (std::size_t l = 0; l < video_.layers().size(); ++l) {
      const auto& spec = cfg_.layers[l];
      const auto& lp = video_.layers()[l];
      const double spatial_scale = std::sqrt(2.0 / static_cast<double>(spec.in_channels));
      for (double& v : lp.spatial_w->value.data()) v = spatial_scale * rng::normal(g);
      const double temporal_scale = 1.0 / std::sqrt(static_cast<double>(spec.temporal_kernel));
      for (double& v : lp.temporal_w->value.data()) v = temporal_scale * rng::normal(g);
      // temporal bias stays zero
    }
    xavier(video_.w1().value, cfg_.layers.back().out_channels, cfg_.embed_dim, g);
    xavier(items_.w2().value, cfg_.factor_dim, cfg_.embed_dim, g);
    xavier(items_.w3().value, cfg_.factor_dim, cfg_.chunk_dim, g);
    bank_.init(g);
  }

  static void xavier(Tensor& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& g) {
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w.data()) v = scale * rng::normal(g);
  }

  ModelConfig cfg_;
  Tensor adjacency_;
  ParamStore store_;
  VideoTower video_;
  ItemTower items_;
  PrototypeBank bank_;
};

}  // namespace poserec
