#pragma once

#include <array>
#include <vector>

#include "poserec/autodiff.hpp"
#include "poserec/skeleton.hpp"

namespace poserec {

inline constexpr std::size_t kPoseChannels = 4;  // x, y, z, visibility

// One video's landmark sequence: frames [T x 33 x 4].
struct PoseTrajectory {
  std::string video_id;
  Tensor frames;

  std::size_t length() const { return frames.rank() == 3 ? frames.dim(0) : 0; }
};

struct StgcnLayerSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t temporal_kernel = 3;
  std::size_t temporal_stride = 1;
};

// Channel/time progression 4 -> 64 -> 128 -> 256, T 10 -> 10 -> 5 -> 5.
inline std::vector<StgcnLayerSpec> default_stgcn_stack() {
  return {
      {4, 64, 3, 1},
      {64, 128, 3, 2},
      {128, 256, 3, 1},
  };
}

// Learned weights of one layer; lives in the model's ParamStore.
struct StgcnLayerParams {
  Parameter* spatial_w = nullptr;   // [C_in x C_out]
  Parameter* temporal_w = nullptr;  // [C_out x kernel]
  Parameter* temporal_b = nullptr;  // [C_out]
};

// Spatial graph mixing per frame, then a depthwise temporal convolution over
// time, then max(0, .). The activation can be switched off so the bare linear
// map is testable.
inline Tape::VarId stgcn_layer(Tape& tape, Tape::VarId x, const StgcnLayerSpec& spec,
                               const StgcnLayerParams& params, Tape::VarId adjacency,
                               bool activation = true) {
  const Tensor& tx = tape.value(x);
  if (tx.rank() != 3 || tx.dim(0) != spec.in_channels) {
    throw ShapeError("stgcn_layer: input " + tx.dims_str() + " does not match spec in_channels " +
                     std::to_string(spec.in_channels));
  }
  auto h = tape.spatial_gcn(x, adjacency, tape.param(*params.spatial_w));
  h = tape.temporal_conv(h, tape.param(*params.temporal_w), tape.param(*params.temporal_b),
                         spec.temporal_stride);
  return activation ? tape.relu(h) : h;
}

// Root-centers each frame on the mid-hip and scales by the window's mean
// torso length (mid-hip to mid-shoulder). The visibility channel is passed
// through untouched, and the output is transposed to the [4 x T x N] tower
// layout. Works for any landmark count >= 25 that follows the BlazePose
// index convention; other layouts skip normalization.
inline Tensor normalize_pose_window(const Tensor& window) {
  if (window.rank() != 3 || window.dim(2) != kPoseChannels) {
    throw ShapeError("normalize_pose_window: expected [T x N x 4], got " + window.dims_str());
  }
  const std::size_t t = window.dim(0), n = window.dim(1);
  constexpr std::size_t kLHip = 23, kRHip = 24, kLShoulder = 11, kRShoulder = 12;
  const bool has_torso = n > kRHip;

  std::vector<std::array<double, 3>> root(t, {0.0, 0.0, 0.0});
  double torso = 0.0;
  if (has_torso) {
    for (std::size_t ti = 0; ti < t; ++ti) {
      double sh[3];
      for (std::size_t c = 0; c < 3; ++c) {
        root[ti][c] = 0.5 * (window.at(ti, kLHip, c) + window.at(ti, kRHip, c));
        sh[c] = 0.5 * (window.at(ti, kLShoulder, c) + window.at(ti, kRShoulder, c));
      }
      torso += std::sqrt((sh[0] - root[ti][0]) * (sh[0] - root[ti][0]) +
                         (sh[1] - root[ti][1]) * (sh[1] - root[ti][1]) +
                         (sh[2] - root[ti][2]) * (sh[2] - root[ti][2]));
    }
    torso /= static_cast<double>(t);
  }
  const double scale = torso > 1e-9 ? torso : 1.0;

  Tensor out({kPoseChannels, t, n});
  for (std::size_t ti = 0; ti < t; ++ti) {
    for (std::size_t ni = 0; ni < n; ++ni) {
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(c, ti, ni) = (window.at(ti, ni, c) - root[ti][c]) / scale;
      }
      out.at(3, ti, ni) = window.at(ti, ni, 3);
    }
  }
  return out;
}

// The video tower: normalized window -> stacked ST-GCN -> mean pool -> W1,b1
// projection into the shared 256-d space.
class VideoTower {
 public:
  VideoTower() = default;

  VideoTower(ParamStore& store, std::vector<StgcnLayerSpec> specs, std::size_t embed_dim)
      : specs_(std::move(specs)), embed_dim_(embed_dim) {
    for (std::size_t l = 0; l < specs_.size(); ++l) {
      const auto& s = specs_[l];
      StgcnLayerParams p;
      p.spatial_w = &store.create("gcn.l" + std::to_string(l + 1) + ".W",
                                  {s.in_channels, s.out_channels});
      p.temporal_w = &store.create("gcn.l" + std::to_string(l + 1) + ".tw",
                                   {s.out_channels, s.temporal_kernel});
      p.temporal_b = &store.create("gcn.l" + std::to_string(l + 1) + ".tb", {s.out_channels});
      layers_.push_back(p);
    }
    const std::size_t c_last = specs_.back().out_channels;
    w1_ = &store.create("video.W1", {embed_dim_, c_last});
    b1_ = &store.create("video.b1", {embed_dim_});
  }

  // window [T x 33 x 4] with T equal to the configured window length.
  Tape::VarId encode(Tape& tape, const Tensor& window, std::size_t expected_len,
                     const Tensor& adjacency) const {
    if (window.rank() != 3 || window.dim(0) != expected_len) {
      throw ShapeError("encode_video: window " + window.dims_str() + ", expected length " +
                       std::to_string(expected_len));
    }
    auto x = tape.input(normalize_pose_window(window));
    auto adj = tape.input(adjacency);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      x = stgcn_layer(tape, x, specs_[l], layers_[l], adj);
    }
    auto pooled = tape.mean_pool_tn(x);
    return tape.affine(tape.param(*w1_), pooled, tape.param(*b1_));
  }

  const std::vector<StgcnLayerSpec>& specs() const { return specs_; }
  const std::vector<StgcnLayerParams>& layers() const { return layers_; }
  Parameter& w1() const { return *w1_; }
  Parameter& b1() const { return *b1_; }

 private:
  std::vector<StgcnLayerSpec> specs_;
  std::vector<StgcnLayerParams> layers_;
  std::size_t embed_dim_ = 256;
  Parameter* w1_ = nullptr;
  Parameter* b1_ = nullptr;
};

}  // namespace poserec
