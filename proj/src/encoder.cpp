#include "supcon_asr/encoder.hpp"

#include <cmath>
#include <random>
#include <string>

namespace supcon_asr {

namespace {

Matrix uniform_matrix(std::mt19937_64& rng, int rows, int cols,
                      double fan_in) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  const double scale = 1.0 / std::sqrt(fan_in);
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = scale * dist(rng);
  return m;
}

}  // namespace

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  z.conv_kernel.setZero();
  for (auto& layer : z.layers) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  return z;
}

bool EncoderParams::all_finite() const {
  if (!conv_kernel.allFinite()) return false;
  for (const auto& layer : layers)
    if (!layer.weight.allFinite() || !layer.bias.allFinite()) return false;
  return true;
}

void EncoderParams::validate_shapes() const {
  auto bad = [](const std::string& what) {
    return Error(ErrorKind::kShapeMismatch, "encoder: " + what);
  };
  if (feature_dim < 1 || hidden_dim < 1 || width < 1 || stride < 1)
    throw bad("non-positive dimension");
  if (conv_kernel.rows() != hidden_dim ||
      conv_kernel.cols() != width * feature_dim)
    throw bad("conv kernel shape");
  for (const auto& layer : layers) {
    if (layer.weight.rows() != hidden_dim || layer.weight.cols() != hidden_dim ||
        layer.bias.size() != hidden_dim)
      throw bad("layer shape");
  }
}

bool EncoderParams::operator==(const EncoderParams& o) const {
  if (feature_dim != o.feature_dim || hidden_dim != o.hidden_dim ||
      width != o.width || stride != o.stride ||
      layers.size() != o.layers.size() || conv_kernel != o.conv_kernel)
    return false;
  for (std::size_t l = 0; l < layers.size(); ++l)
    if (layers[l].weight != o.layers[l].weight ||
        layers[l].bias != o.layers[l].bias)
      return false;
  return true;
}

EncoderParams init_encoder(int feature_dim, int hidden_dim, int width,
                           int stride, int num_layers, std::uint64_t seed) {
  if (feature_dim < 1 || hidden_dim < 1 || width < 1 || stride < 1 ||
      num_layers < 0)
    throw Error(ErrorKind::kInvalidArgument, "bad encoder dimensions");
  std::mt19937_64 rng(seed);
  EncoderParams p;
  p.feature_dim = feature_dim;
  p.hidden_dim = hidden_dim;
  p.width = width;
  p.stride = stride;
  p.conv_kernel =
      uniform_matrix(rng, hidden_dim, width * feature_dim, width * feature_dim);
  for (int l = 0; l < num_layers; ++l) {
    EncoderLayer layer;
    layer.weight = uniform_matrix(rng, hidden_dim, hidden_dim, hidden_dim);
    layer.bias = uniform_matrix(rng, hidden_dim, 1, hidden_dim);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

int encoded_length(int raw_frames, int width, int stride) {
  if (raw_frames < width) return 0;
  return (raw_frames - width) / stride + 1;
}

EncodedBatch encode_batch(const EncoderParams& params,
                          std::span<const Utterance* const> utterances) {
  EncodedBatch batch;
  const int dim = params.hidden_dim;
  const int in_dim = params.feature_dim;
  int max_len = 0;
  for (const Utterance* u : utterances) {
    if (u->features.cols() != in_dim)
      throw Error(ErrorKind::kShapeMismatch,
                  "utterance " + u->id + " has feature_dim " +
                      std::to_string(u->features.cols()) + ", encoder expects " +
                      std::to_string(in_dim));
    const int len = encoded_length(u->raw_frames(), params.width, params.stride);
    if (len < 1)
      throw Error(ErrorKind::kTooShort,
                  "utterance " + u->id + " has " +
                      std::to_string(u->raw_frames()) +
                      " frames, fewer than the conv width");
    max_len = std::max(max_len, len);
  }

  for (const Utterance* u : utterances) {
    const int len = encoded_length(u->raw_frames(), params.width, params.stride);
    EncoderCache::Entry entry;
    entry.windows.resize(len, params.width * in_dim);
    for (int t = 0; t < len; ++t)
      for (int k = 0; k < params.width; ++k)
        entry.windows.block(t, k * in_dim, 1, in_dim) =
            u->features.row(t * params.stride + k);

    Matrix h = entry.windows * params.conv_kernel.transpose();
    entry.activations.push_back(h);
    for (const auto& layer : params.layers) {
      Matrix pre = h * layer.weight.transpose();
      pre.rowwise() += layer.bias.transpose();
      h = pre.array().tanh().matrix();
      entry.activations.push_back(h);
    }

    FrameRepresentation rep;
    rep.valid_len = len;
    rep.values = Matrix::Zero(max_len, dim);
    rep.values.topRows(len) = h;
    batch.outputs.push_back(std::move(rep));
    batch.cache.entries.push_back(std::move(entry));
  }
  return batch;
}

FrameRepresentation encode_one(const EncoderParams& params,
                               const Utterance& utterance) {
  const Utterance* ptr = &utterance;
  return std::move(encode_batch(params, std::span(&ptr, 1)).outputs.front());
}

EncoderParams encoder_backward(const EncoderParams& params,
                               const EncoderCache& cache,
                               std::span<const Matrix> grad_frames) {
  if (grad_frames.size() != cache.entries.size())
    throw Error(ErrorKind::kShapeMismatch,
                "encoder_backward: gradient count does not match batch size");
  EncoderParams grads = params.zeros_like();
  const int num_layers = params.num_layers();
  for (std::size_t i = 0; i < cache.entries.size(); ++i) {
    const auto& entry = cache.entries[i];
    const Eigen::Index len = entry.windows.rows();
    if (grad_frames[i].rows() < len ||
        grad_frames[i].cols() != params.hidden_dim)
      throw Error(ErrorKind::kShapeMismatch,
                  "encoder_backward: gradient shape for utterance " +
                      std::to_string(i));
    Matrix g = grad_frames[i].topRows(len);
    for (int l = num_layers - 1; l >= 0; --l) {
      const Matrix& out = entry.activations[l + 1];
      const Matrix dpre =
          (g.array() * (1.0 - out.array().square())).matrix();
      grads.layers[l].weight.noalias() += dpre.transpose() * entry.activations[l];
      grads.layers[l].bias += dpre.colwise().sum().transpose();
      g = dpre * params.layers[l].weight;
    }
    grads.conv_kernel.noalias() += g.transpose() * entry.windows;
  }
  return grads;
}

}  // namespace supcon_asr
