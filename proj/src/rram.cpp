#include "rrp/rram.hpp"

#include "rrp/errors.hpp"

namespace rrp {

void validate_rram_config(const RramConfig& cfg) {
  if (cfg.nodes == 0) throw ValidationError("rram: nodes must be positive");
  if (cfg.dim == 0) throw ValidationError("rram: dim must be positive");
}

Tensor attention_maps(const Tensor& features, const Tensor& theta_weight, const Tensor& theta_bias) {
  if (theta_weight.rank() != 4 || theta_weight.dim(2) != 1 || theta_weight.dim(3) != 1) {
    throw DimensionError("attention_maps: theta must be a 1x1 convolution, got " + shape_string(theta_weight.shape()));
  }
  return sigmoid(conv2d(features, theta_weight, theta_bias, 0));
}

Tensor weighted_pool(const Tensor& features, const Tensor& phi_weight, const Tensor& phi_bias,
                     const Tensor& attention) {
  if (phi_weight.rank() != 4 || phi_weight.dim(2) != 1 || phi_weight.dim(3) != 1) {
    throw DimensionError("weighted_pool: phi must be a 1x1 convolution, got " + shape_string(phi_weight.shape()));
  }
  const Tensor reduced = conv2d(features, phi_weight, phi_bias, 0);
  if (attention.rank() != 3 || attention.dim(1) != reduced.dim(1) || attention.dim(2) != reduced.dim(2)) {
    throw DimensionError("weighted_pool: attention " + shape_string(attention.shape()) +
                         " does not match features " + shape_string(reduced.shape()));
  }
  std::vector<Tensor> rows;
  rows.reserve(attention.dim(0));
  for (std::size_t v = 0; v < attention.dim(0); ++v) {
    rows.push_back(global_average_pool(mul(reduced, select_channel(attention, v))));
  }
  return stack_rows(rows);
}

Tensor normalize_adjacency(const Tensor& adjacency) {
  if (adjacency.rank() != 2 || adjacency.dim(0) != adjacency.dim(1)) {
    throw DimensionError("normalize_adjacency: A must be square, got " + shape_string(adjacency.shape()));
  }
  const std::size_t n = adjacency.dim(0);
  Tensor identity = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) identity.mutable_data()[i * n + i] = 1.0;
  return softmax_rows(add(adjacency, identity));
}

Tensor gcn_layer(const Tensor& h, const Tensor& adjacency_hat, const Tensor& weight) {
  if (h.rank() != 2 || adjacency_hat.rank() != 2 || weight.rank() != 2 || adjacency_hat.dim(1) != h.dim(0) ||
      weight.dim(0) != h.dim(1)) {
    throw DimensionError("gcn_layer: shapes " + shape_string(adjacency_hat.shape()) + " x " + shape_string(h.shape()) +
                         " x " + shape_string(weight.shape()) + " do not chain");
  }
  return relu(matmul(matmul(adjacency_hat, h), weight));
}

Tensor broadcast_fuse(const Tensor& relation, const Tensor& attention, const Tensor& features,
                      const Tensor& psi_weight, const Tensor& psi_bias) {
  if (relation.rank() != 2 || attention.rank() != 3 || relation.dim(0) != attention.dim(0)) {
    throw DimensionError("broadcast_fuse: " + std::to_string(relation.rank() == 2 ? relation.dim(0) : 0) +
                         " node vectors for attention " + shape_string(attention.shape()));
  }
  const std::size_t h = attention.dim(1), w = attention.dim(2);
  Tensor mixed;
  for (std::size_t v = 0; v < relation.dim(0); ++v) {
    Tensor term = mul(broadcast_spatial(select_row(relation, v), h, w), select_channel(attention, v));
    mixed = mixed.defined() ? add(mixed, term) : term;
  }
  return add(features, conv2d(mixed, psi_weight, psi_bias, 0));
}

RramOutput rram_forward(const Tensor& features, const RramParams& params) {
  RramOutput out;
  out.attention = attention_maps(features, params.theta_weight, params.theta_bias);
  out.descriptors = weighted_pool(features, params.phi_weight, params.phi_bias, out.attention);
  out.relation = out.descriptors;
  if (!params.gcn_weights.empty()) {
    const Tensor a_hat = normalize_adjacency(params.adjacency);
    for (const auto& w : params.gcn_weights) out.relation = gcn_layer(out.relation, a_hat, w);
  }
  out.fused = broadcast_fuse(out.relation, out.attention, features, params.psi_weight, params.psi_bias);
  return out;
}

}  // namespace rrp
