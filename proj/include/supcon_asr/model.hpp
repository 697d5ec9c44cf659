#pragma once

#include <cstdint>
#include <filesystem>

#include "supcon_asr/ctc.hpp"
#include "supcon_asr/encoder.hpp"
#include "supcon_asr/supcon.hpp"

namespace supcon_asr {

struct ModelShape {
  int feature_dim = 8;
  int vocab_size = 11;  // including blank
  int hidden_dim = 24;
  int conv_width = 3;
  int conv_stride = 2;
  int num_layers = 1;
  int proj_hidden_dim = 0;  // 0 means hidden_dim
  int proj_dim = 32;
};

// Whole trainable model. Also used as the gradient container.
struct ModelParams {
  EncoderParams encoder;
  CtcHead ctc;
  ProjectionHead projection;

  ModelParams zeros_like() const;
  bool operator==(const ModelParams&) const = default;
};

ModelParams init_model(const ModelShape& shape, std::uint64_t seed);

// Visits every parameter block as an Eigen map, in a fixed order.
// Group: 0 encoder, 1 CTC head, 2 projection head.
template <typename Params, typename Fn>
void for_each_block(Params& params, Fn&& fn) {
  auto visit = [&](auto& m, int group) {
    fn(Eigen::Map<std::conditional_t<std::is_const_v<Params>, const Vector, Vector>>(
           m.data(), m.size()),
       group);
  };
  visit(params.encoder.conv_kernel, 0);
  for (auto& layer : params.encoder.layers) {
    visit(layer.weight, 0);
    visit(layer.bias, 0);
  }
  visit(params.ctc.weight, 1);
  visit(params.ctc.bias, 1);
  visit(params.projection.w1, 2);
  visit(params.projection.b1, 2);
  visit(params.projection.w2, 2);
  visit(params.projection.b2, 2);
}

// Flat copy of every parameter in for_each_block order.
Vector flatten(const ModelParams& params);
void unflatten(const Vector& flat, ModelParams& params);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace supcon_asr
