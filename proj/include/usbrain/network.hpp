#pragma once

// Parametric encoder-decoder segmentation network.
//
// Layout for a spec (n, l, k, f):
//   encoder level i (i = 0 .. l-1): conv-BN-ReLU, conv-BN-ReLU, 2x maxpool.
//     Convolutions are numbered in order; the first two have f and 2f
//     filters, every later one 4f.
//   decoder level i (i = l-1 .. 0): 2x nearest upsample, concatenate the
//     output of encoder level i (before pooling), conv-BN-ReLU with 4f filters.
//   head: 1x1x1 convolution to one channel, sigmoid.
// All convolutions use k^3 kernels (the head excepted) with "same" padding.
// This layout reproduces the trainable-parameter counts of the published
// eight-network grid to within 20%; see table1_specs().

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "usbrain/autodiff.hpp"
#include "usbrain/tensor.hpp"

namespace usbrain {

struct NetworkSpec {
  std::uint32_t n = 32;  // input voxels per axis
  std::uint32_t l = 3;   // pooling levels
  std::uint32_t k = 3;   // kernel size per axis
  std::uint32_t f = 4;   // filters of the first convolution

  // Throws InvalidSpec.
  void validate() const;
  std::string str() const;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

struct NamedSpec {
  char label;
  NetworkSpec spec;
  double published_params;  // as printed, e.g. 1.6e6
};

// Networks A-H with their published parameter counts.
const std::array<NamedSpec, 8>& table1_specs();

// Exact trainable scalar count (conv weights + biases + BN gamma/beta),
// computed from the layout without allocating anything.
std::uint64_t param_count(const NetworkSpec& spec);

struct ConvBlock {
  std::string name;
  Tensor<float> weight;  // (out, in, k, k, k)
  Tensor<float> bias;    // (1, out, 1, 1, 1)
  Tensor<float> gamma;
  Tensor<float> beta;
  RunningStats<float> stats;
};

struct BlobRef {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float>* values;
  bool trainable;
};

class Network {
 public:
  // He-uniform weights from the seeded generator, zero biases, BN gamma 1 /
  // beta 0, running mean 0 / var 1. Throws InvalidSpec.
  static Network build(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  // Every stored array in a fixed order; trainable ones first within a block.
  std::vector<BlobRef> blobs();
  std::vector<const std::vector<float>*> trainable() const;
  std::vector<std::vector<float>*> trainable();
  std::size_t trainable_count() const;

  // Builds the graph on `tape`. When `params` is non-null the trainable
  // arrays enter the tape as gradient-carrying leaves, in trainable() order.
  Var forward(Tape<float>& tape, Var input, BnMode mode, std::vector<Var>* params);

  // Eval-mode inference; input (b, 1, n, n, n). Throws ShapeMismatch.
  Tensor<float> predict(const Tensor<float>& input) const;

 private:
  NetworkSpec spec_;
  std::uint64_t seed_ = 0;
  std::uint64_t step_ = 0;
  std::vector<ConvBlock> encoder_;  // 2 per level
  std::vector<ConvBlock> decoder_;  // 1 per level, index = level
  Tensor<float> head_weight_;
  Tensor<float> head_bias_;
};

// NNCK1 checkpoint IO. load throws BadMagic, SpecMismatch, TruncatedPayload.
void save_checkpoint(Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace usbrain
