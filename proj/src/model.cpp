#include "supcon_asr/model.hpp"

#include <fstream>

#include <json.hpp>

namespace supcon_asr {

namespace {

using nlohmann::json;

json matrix_json(const Matrix& m) {
  return {{"rows", m.rows()},
          {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

json vector_json(const Vector& v) {
  return {{"size", v.size()},
          {"data", std::vector<double>(v.data(), v.data() + v.size())}};
}

Matrix matrix_from(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw Error(ErrorKind::kMalformedRecord, "matrix data size mismatch");
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

Vector vector_from(const json& j) {
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != j.at("size").get<Eigen::Index>())
    throw Error(ErrorKind::kMalformedRecord, "vector data size mismatch");
  return Eigen::Map<const Vector>(data.data(), static_cast<Eigen::Index>(data.size()));
}

}  // namespace

ModelParams ModelParams::zeros_like() const {
  return {encoder.zeros_like(), ctc.zeros_like(), projection.zeros_like()};
}

ModelParams init_model(const ModelShape& shape, std::uint64_t seed) {
  ModelParams p;
  p.encoder = init_encoder(shape.feature_dim, shape.hidden_dim, shape.conv_width,
                           shape.conv_stride, shape.num_layers, derive_seed(seed, 11));
  p.ctc = init_ctc_head(shape.vocab_size, shape.hidden_dim, derive_seed(seed, 12));
  const int proj_hidden =
      shape.proj_hidden_dim > 0 ? shape.proj_hidden_dim : shape.hidden_dim;
  p.projection = init_projection_head(shape.hidden_dim, proj_hidden, shape.proj_dim,
                                      derive_seed(seed, 13));
  return p;
}

Vector flatten(const ModelParams& params) {
  Eigen::Index total = 0;
  for_each_block(params, [&](const auto& block, int) { total += block.size(); });
  Vector flat(total);
  Eigen::Index offset = 0;
  for_each_block(params, [&](const auto& block, int) {
    flat.segment(offset, block.size()) = block;
    offset += block.size();
  });
  return flat;
}

void unflatten(const Vector& flat, ModelParams& params) {
  Eigen::Index offset = 0;
  for_each_block(params, [&](auto block, int) {
    block = flat.segment(offset, block.size());
    offset += block.size();
  });
  if (offset != flat.size())
    throw Error(ErrorKind::kShapeMismatch, "flat parameter vector has wrong size");
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  json layers = json::array();
  for (const auto& layer : params.encoder.layers)
    layers.push_back({{"weight", matrix_json(layer.weight)},
                      {"bias", vector_json(layer.bias)}});
  const json j = {
      {"format", "supcon-asr-checkpoint"},
      {"version", 1},
      {"encoder",
       {{"feature_dim", params.encoder.feature_dim},
        {"hidden_dim", params.encoder.hidden_dim},
        {"width", params.encoder.width},
        {"stride", params.encoder.stride},
        {"num_layers", params.encoder.num_layers()},
        {"conv_kernel", matrix_json(params.encoder.conv_kernel)},
        {"layers", layers}}},
      {"ctc_head",
       {{"vocab_size", params.ctc.vocab_size()},
        {"weight", matrix_json(params.ctc.weight)},
        {"bias", vector_json(params.ctc.bias)}}},
      {"projection",
       {{"output_dim", params.projection.output_dim()},
        {"w1", matrix_json(params.projection.w1)},
        {"b1", vector_json(params.projection.b1)},
        {"w2", matrix_json(params.projection.w2)},
        {"b2", vector_json(params.projection.b2)}}}};
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw Error(ErrorKind::kIo, "write failed: " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read checkpoint " + path.string());
  ModelParams p;
  try {
    const json j = json::parse(in);
    const auto& enc = j.at("encoder");
    p.encoder.feature_dim = enc.at("feature_dim").get<int>();
    p.encoder.hidden_dim = enc.at("hidden_dim").get<int>();
    p.encoder.width = enc.at("width").get<int>();
    p.encoder.stride = enc.at("stride").get<int>();
    p.encoder.conv_kernel = matrix_from(enc.at("conv_kernel"));
    for (const auto& layer : enc.at("layers"))
      p.encoder.layers.push_back(
          {matrix_from(layer.at("weight")), vector_from(layer.at("bias"))});
    const auto& head = j.at("ctc_head");
    p.ctc.weight = matrix_from(head.at("weight"));
    p.ctc.bias = vector_from(head.at("bias"));
    const auto& proj = j.at("projection");
    p.projection.w1 = matrix_from(proj.at("w1"));
    p.projection.b1 = vector_from(proj.at("b1"));
    p.projection.w2 = matrix_from(proj.at("w2"));
    p.projection.b2 = vector_from(proj.at("b2"));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::kMalformedRecord, path.string() + ": " + e.what());
  }
  p.encoder.validate_shapes();
  if (p.ctc.weight.cols() != p.encoder.hidden_dim ||
      p.projection.w1.cols() != p.encoder.hidden_dim)
    throw Error(ErrorKind::kShapeMismatch, "checkpoint heads do not match encoder");
  return p;
}

}  // namespace supcon_asr
