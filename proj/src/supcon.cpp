#include "supcon_asr/supcon.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <set>

namespace supcon_asr {

ProjectionHead ProjectionHead::zeros_like() const {
  return {Matrix::Zero(w1.rows(), w1.cols()), Vector::Zero(b1.size()),
          Matrix::Zero(w2.rows(), w2.cols()), Vector::Zero(b2.size())};
}

ProjectionHead init_projection_head(int input_dim, int hidden_dim, int output_dim,
                                    std::uint64_t seed) {
  if (output_dim < 2)
    throw Error(ErrorKind::kInvalidArgument, "projection dim must be >= 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  auto fill = [&](int rows, int cols, double fan_in) {
    Matrix m(rows, cols);
    const double scale = 1.0 / std::sqrt(fan_in);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) m(r, c) = scale * dist(rng);
    return m;
  };
  ProjectionHead head;
  head.w1 = fill(hidden_dim, input_dim, input_dim);
  head.b1 = fill(hidden_dim, 1, input_dim);
  head.w2 = fill(output_dim, hidden_dim, hidden_dim);
  head.b2 = fill(output_dim, 1, hidden_dim);
  return head;
}

std::vector<int> valid_mask(const FrameRepresentation& frames) {
  std::vector<int> mask(frames.padded_len(), 0);
  for (int t = 0; t < frames.valid_len; ++t) mask[t] = 1;
  return mask;
}

Vector masked_mean_pool(const FrameRepresentation& frames) {
  // Only valid rows are read, so padding content cannot leak in.
  return frames.values.topRows(frames.valid_len).colwise().sum().transpose() /
         static_cast<double>(frames.valid_len);
}

Matrix masked_mean_pool_backward(const FrameRepresentation& frames,
                                 const Vector& grad_u) {
  Matrix g = Matrix::Zero(frames.values.rows(), frames.values.cols());
  g.topRows(frames.valid_len).rowwise() =
      grad_u.transpose() / static_cast<double>(frames.valid_len);
  return g;
}

Projection project_and_normalize(const ProjectionHead& head, const Vector& u) {
  if (head.w1.cols() != u.size())
    throw Error(ErrorKind::kShapeMismatch, "projection head input dimension");
  Projection p;
  p.u = u;
  p.hidden = (head.w1 * u + head.b1).cwiseMax(0.0);
  p.v = head.w2 * p.hidden + head.b2;
  const double norm = p.v.norm();
  if (norm < 1e-12)
    throw Error(ErrorKind::kDegenerateProjection, "projection has near-zero norm");
  p.z = p.v / norm;
  return p;
}

Vector projection_backward(const ProjectionHead& head, const Projection& fwd,
                           const Vector& grad_z, ProjectionHead& head_grad) {
  // d(v/|v|)/dv = (I - z z^T) / |v|
  const double norm = fwd.v.norm();
  const Vector grad_v = (grad_z - fwd.z * fwd.z.dot(grad_z)) / norm;
  head_grad.w2.noalias() += grad_v * fwd.hidden.transpose();
  head_grad.b2 += grad_v;
  Vector grad_hidden = head.w2.transpose() * grad_v;
  for (Eigen::Index i = 0; i < grad_hidden.size(); ++i)
    if (fwd.hidden(i) <= 0.0) grad_hidden(i) = 0.0;
  head_grad.w1.noalias() += grad_hidden * fwd.u.transpose();
  head_grad.b1 += grad_hidden;
  return head.w1.transpose() * grad_hidden;
}

std::vector<int> all_anchors(int batch_size) {
  std::vector<int> a(batch_size);
  for (int i = 0; i < batch_size; ++i) a[i] = i;
  return a;
}

std::vector<int> one_anchor_per_label(std::span<const std::string> labels) {
  std::vector<int> anchors;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (seen.insert(labels[i]).second) anchors.push_back(static_cast<int>(i));
  return anchors;
}

SupConResult supcon_loss_and_grad(const ContrastBatch& batch, double temperature) {
  if (!(temperature > 0.0))
    throw Error(ErrorKind::kBadTemperature, "temperature must be > 0");
  const int n = static_cast<int>(batch.projections.size());
  if (n < 2 || static_cast<int>(batch.labels.size()) != n)
    throw Error(ErrorKind::kInvalidArgument,
                "contrast batch needs >= 2 projections with matching labels");
  if (batch.anchors.empty())
    throw Error(ErrorKind::kInvalidArgument, "contrast batch has no anchors");

  Matrix z(n, batch.projections.front().size());
  for (int i = 0; i < n; ++i) z.row(i) = batch.projections[i].transpose();
  const Matrix sim = (z * z.transpose()) / temperature;

  // dLoss/ds_ij accumulated before dividing by the anchor count.
  Matrix grad_sim = Matrix::Zero(n, n);
  SupConResult result;
  double total = 0.0;
  for (int i : batch.anchors) {
    if (i < 0 || i >= n)
      throw Error(ErrorKind::kInvalidArgument, "anchor index out of range");
    std::vector<int> positives;
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      mx = std::max(mx, sim(i, k));
      if (batch.labels[k] == batch.labels[i]) positives.push_back(k);
    }
    if (positives.empty()) {
      ++result.skipped_anchors;
      continue;
    }
    ++result.contributing_anchors;
    double denom = 0.0;
    for (int k = 0; k < n; ++k)
      if (k != i) denom += std::exp(sim(i, k) - mx);
    const double lse = mx + std::log(denom);

    const double inv_pos = 1.0 / static_cast<double>(positives.size());
    double term = 0.0;
    for (int j : positives) term += sim(i, j) - lse;
    total -= inv_pos * term;

    for (int k = 0; k < n; ++k)
      if (k != i) grad_sim(i, k) += std::exp(sim(i, k) - lse);
    for (int j : positives) grad_sim(i, j) -= inv_pos;
  }
  if (result.contributing_anchors == 0)
    throw Error(ErrorKind::kNoValidAnchors, "every anchor has an empty positive set");

  const double scale = 1.0 / result.contributing_anchors;
  result.loss = total * scale;
  grad_sim *= scale;
  // s_ij = z_i . z_j / tau
  const Matrix grad = (grad_sim + grad_sim.transpose()) * z / temperature;
  result.grad_z.resize(n);
  for (int i = 0; i < n; ++i) result.grad_z[i] = grad.row(i).transpose();
  return result;
}

}  // namespace supcon_asr
