#pragma once

#include <vector>

#include "rrp/tensor.hpp"

namespace rrp {

struct RramConfig {
  std::size_t nodes = 8;       // n region nodes
  std::size_t dim = 64;        // d, reduced channel dimension
  std::size_t gcn_layers = 1;  // L_g; 0 disables cross-region mixing
};

void validate_rram_config(const RramConfig& cfg);

// Weights of one region relation-aware block attached to Cx-channel features.
struct RramParams {
  Tensor theta_weight;  // [n,Cx,1,1] attention 1x1 conv, one output per node
  Tensor theta_bias;    // [n]
  Tensor phi_weight;    // [d,Cx,1,1] channel reduction
  Tensor phi_bias;      // [d]
  Tensor psi_weight;    // [Cx,d,1,1] channel expansion
  Tensor psi_bias;      // [Cx]
  Tensor adjacency;     // [n,n] raw learnable graph A
  std::vector<Tensor> gcn_weights;  // L_g x [d,d]
};

// Sigmoid-squashed attention maps, one [H,W] plane per node: [n,H,W].
Tensor attention_maps(const Tensor& features, const Tensor& theta_weight, const Tensor& theta_bias);

// z_v = GAP(W_v (.) phi(X)) for every node, stacked to [n,d].
Tensor weighted_pool(const Tensor& features, const Tensor& phi_weight, const Tensor& phi_bias,
                     const Tensor& attention);

// softmax_rows(A + I): row-stochastic, identity added on every call.
Tensor normalize_adjacency(const Tensor& adjacency);

// ReLU(A_hat * H * W).
Tensor gcn_layer(const Tensor& h, const Tensor& adjacency_hat, const Tensor& weight);

// X + psi(sum_v broadcast(H_v) (.) W_v).
Tensor broadcast_fuse(const Tensor& relation, const Tensor& attention, const Tensor& features,
                      const Tensor& psi_weight, const Tensor& psi_bias);

struct RramOutput {
  Tensor fused;       // [Cx,H,W]
  Tensor attention;   // [n,H,W]
  Tensor descriptors; // Z, [n,d]
  Tensor relation;    // H^L, [n,d]
};

RramOutput rram_forward(const Tensor& features, const RramParams& params);

}  // namespace rrp
