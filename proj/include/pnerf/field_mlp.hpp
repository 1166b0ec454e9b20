#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pnerf/types.hpp"

namespace pnerf {

enum class Activation { identity, relu, softplus, sigmoid };

std::string_view to_string(Activation act);
Activation parse_activation(std::string_view name);

/// Topology of the radiance field network.
///
/// Trunk: `hidden_layers` dense layers of `hidden_width` units on the encoded
/// position, with the encoded position concatenated again into the input of
/// trunk layer `skip_layer` (-1 disables the skip). Heads: a softplus density
/// unit on the last trunk features, and a color branch that concatenates the
/// encoded direction, applies one hidden layer of `color_width` units, and
/// ends in a sigmoid RGB layer.
struct FieldArchitecture {
  int pos_frequencies = 10;
  int dir_frequencies = 4;
  int hidden_layers = 4;
  int hidden_width = 128;
  int skip_layer = 3;
  int color_width = 64;
  Activation hidden_activation = Activation::relu;
  /// World positions are mapped to (x - scene_center) * scene_scale before encoding.
  Vec3 scene_center = Vec3::Zero();
  double scene_scale = 1.0;

  int pos_input_dim() const { return 6 * pos_frequencies; }
  int dir_input_dim() const { return 6 * dir_frequencies; }
  void validate() const;
};

struct LayerShape {
  int rows = 0;
  int cols = 0;
  Activation activation = Activation::identity;
  Index offset = 0;  // first weight entry in the flat value vector; bias follows the weights
};

/// Per-layer shapes for an architecture, in evaluation order: trunk layers,
/// density head, color hidden layer, color output layer.
std::vector<LayerShape> layer_layout(const FieldArchitecture& arch);

/// Network parameters in one flat vector; per-layer weights (column-major)
/// and biases are views into it.
template <typename Scalar>
struct MlpParams {
  FieldArchitecture arch;
  std::vector<LayerShape> layers;
  Vector<Scalar> values;
  /// Bumped by every parameter update; forward caches record it.
  std::uint64_t generation = 0;

  Index size() const { return values.size(); }
  Index num_layers() const { return static_cast<Index>(layers.size()); }
  Index density_layer() const { return arch.hidden_layers; }
  Index color_hidden_layer() const { return arch.hidden_layers + 1; }
  Index color_output_layer() const { return arch.hidden_layers + 2; }

  Eigen::Map<Matrix<Scalar>> weight(Index i) {
    const LayerShape& l = layers[i];
    return {values.data() + l.offset, l.rows, l.cols};
  }
  Eigen::Map<const Matrix<Scalar>> weight(Index i) const {
    const LayerShape& l = layers[i];
    return {values.data() + l.offset, l.rows, l.cols};
  }
  Eigen::Map<Vector<Scalar>> bias(Index i) {
    const LayerShape& l = layers[i];
    return {values.data() + l.offset + Index(l.rows) * l.cols, l.rows};
  }
  Eigen::Map<const Vector<Scalar>> bias(Index i) const {
    const LayerShape& l = layers[i];
    return {values.data() + l.offset + Index(l.rows) * l.cols, l.rows};
  }

  template <typename Other>
  MlpParams<Other> cast() const {
    return {arch, layers, values.template cast<Other>(), generation};
  }
};

/// Gradient of a scalar loss with respect to every entry of MlpParams::values.
template <typename Scalar>
struct ParamGrad {
  Vector<Scalar> values;

  static ParamGrad zeros_like(const MlpParams<Scalar>& params) { return {Vector<Scalar>::Zero(params.size())}; }
};

struct FieldOutput {
  Vec3 color = Vec3::Zero();
  double tau = 0.0;
};

template <typename Scalar>
struct FieldBatch {
  Matrix<Scalar> color;  // 3 x M
  RowVector<Scalar> tau;  // 1 x M
};

/// Everything field_backward needs from a forward call.
template <typename Scalar>
struct FieldCache {
  const void* params_id = nullptr;
  std::uint64_t generation = 0;
  Matrix<Scalar> enc_pos;
  Matrix<Scalar> enc_dir;
  std::vector<Matrix<Scalar>> pre;   // pre-activations per layer
  std::vector<Matrix<Scalar>> post;  // activations per layer
};

/// Zero-mean uniform weights with variance 1/(3 fan_in), zero biases.
/// `density_bias` initializes the density head bias (very negative: vacuum).
template <typename Scalar>
MlpParams<Scalar> init_params(const FieldArchitecture& arch, std::uint64_t seed, double density_bias = 0.0);

/// Batched evaluation: column j of the encodings is one sample. Throws
/// NumericError (ray = column) on non-finite input.
template <typename Scalar>
FieldBatch<Scalar> field_forward(const MlpParams<Scalar>& params, const Matrix<Scalar>& enc_pos,
                                 const Matrix<Scalar>& enc_dir, FieldCache<Scalar>* cache = nullptr);

/// Single-sample convenience wrapper.
FieldOutput field_forward(const MlpParams<double>& params, const VecX& enc_pos, const VecX& enc_dir);

/// Vector-Jacobian product of field_forward. Adds into `grad`; input
/// cotangents are written when the pointers are non-null. Throws UsageError
/// if the cache does not belong to `params` at its current generation.
template <typename Scalar>
void field_backward(const MlpParams<Scalar>& params, const FieldCache<Scalar>& cache, const Matrix<Scalar>& d_color,
                    const RowVector<Scalar>& d_tau, ParamGrad<Scalar>& grad, Matrix<Scalar>* d_enc_pos = nullptr,
                    Matrix<Scalar>* d_enc_dir = nullptr);

template <typename Scalar>
struct FieldGradients {
  ParamGrad<Scalar> params;
  Matrix<Scalar> d_enc_pos;
  Matrix<Scalar> d_enc_dir;
};

template <typename Scalar>
FieldGradients<Scalar> field_backward(const MlpParams<Scalar>& params, const FieldCache<Scalar>& cache,
                                      const Matrix<Scalar>& d_color, const RowVector<Scalar>& d_tau);

/// Checkpoint: text header (architecture, layer shapes, activation tags)
/// terminated by a "data" line, then little-endian float64 values.
void save_checkpoint(const std::filesystem::path& path, const MlpParams<double>& params);
MlpParams<double> load_checkpoint(const std::filesystem::path& path);

}  // namespace pnerf
