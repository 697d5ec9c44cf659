#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "supcon_asr/common.hpp"
#include "supcon_asr/encoder.hpp"

namespace supcon_asr {

// Two-layer MLP with ReLU; output is l2-normalized by project_and_normalize.
struct ProjectionHead {
  Matrix w1;  // D_hidden x D
  Vector b1;
  Matrix w2;  // P x D_hidden
  Vector b2;

  int output_dim() const { return static_cast<int>(w2.rows()); }
  ProjectionHead zeros_like() const;
  bool operator==(const ProjectionHead& o) const {
    return w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
  }
};

ProjectionHead init_projection_head(int input_dim, int hidden_dim, int output_dim,
                                    std::uint64_t seed);

std::vector<int> valid_mask(const FrameRepresentation& frames);

Vector masked_mean_pool(const FrameRepresentation& frames);

// Scatters a pooled-embedding gradient back onto the padded frame matrix.
Matrix masked_mean_pool_backward(const FrameRepresentation& frames,
                                 const Vector& grad_u);

struct Projection {
  Vector u;       // input
  Vector hidden;  // ReLU(w1 u + b1)
  Vector v;       // w2 hidden + b2, before normalization
  Vector z;       // v / |v|
};

Projection project_and_normalize(const ProjectionHead& head, const Vector& u);

// Accumulates head gradients; returns dLoss/du.
Vector projection_backward(const ProjectionHead& head, const Projection& fwd,
                           const Vector& grad_z, ProjectionHead& head_grad);

struct ContrastBatch {
  std::vector<Vector> projections;  // unit vectors z_i
  std::vector<std::string> labels;  // transcript ids
  std::vector<int> anchors;         // indices into projections
};

std::vector<int> all_anchors(int batch_size);
// First occurrence of each label.
std::vector<int> one_anchor_per_label(std::span<const std::string> labels);

struct SupConResult {
  double loss = 0.0;
  std::vector<Vector> grad_z;
  int skipped_anchors = 0;
  int contributing_anchors = 0;
};

SupConResult supcon_loss_and_grad(const ContrastBatch& batch, double temperature);

}  // namespace supcon_asr
