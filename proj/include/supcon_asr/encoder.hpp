#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "supcon_asr/common.hpp"
#include "supcon_asr/corpus.hpp"

namespace supcon_asr {

struct EncoderLayer {
  Matrix weight;  // D x D
  Vector bias;    // D
};

// Strided temporal convolution (no bias) followed by `layers.size()`
// per-frame affine + tanh layers. Also used as the gradient container.
struct EncoderParams {
  int feature_dim = 0;
  int hidden_dim = 0;
  int width = 1;
  int stride = 1;
  Matrix conv_kernel;  // D x (width * feature_dim), window laid out frame-major
  std::vector<EncoderLayer> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }

  // Same shapes, all zeros.
  EncoderParams zeros_like() const;
  bool all_finite() const;
  void validate_shapes() const;

  bool operator==(const EncoderParams& o) const;
};

EncoderParams init_encoder(int feature_dim, int hidden_dim, int width,
                           int stride, int num_layers, std::uint64_t seed);

int encoded_length(int raw_frames, int width, int stride);

// Encoder output for one utterance: rows >= valid_len are zero padding.
struct FrameRepresentation {
  Matrix values;  // T x D
  int valid_len = 0;

  int padded_len() const { return static_cast<int>(values.rows()); }
};

// Activations kept for the backward pass, one entry per utterance and
// covering only valid frames.
struct EncoderCache {
  struct Entry {
    Matrix windows;                  // T~ x (width * F)
    std::vector<Matrix> activations;  // L + 1 entries, each T~ x D
  };
  std::vector<Entry> entries;
};

struct EncodedBatch {
  std::vector<FrameRepresentation> outputs;
  EncoderCache cache;
};

// Every output is padded to the longest valid length in the batch.
EncodedBatch encode_batch(const EncoderParams& params,
                          std::span<const Utterance* const> utterances);

FrameRepresentation encode_one(const EncoderParams& params,
                               const Utterance& utterance);

// grad_frames[i] must have the padded shape of output i; padded rows are
// ignored. Returns dLoss/dParams.
EncoderParams encoder_backward(const EncoderParams& params,
                               const EncoderCache& cache,
                               std::span<const Matrix> grad_frames);

}  // namespace supcon_asr
