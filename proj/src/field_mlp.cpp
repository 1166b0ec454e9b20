#include "pnerf/field_mlp.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "binary_io.hpp"
#include "pnerf/error.hpp"
#include "pnerf/random.hpp"

namespace pnerf {

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  if (name == "sigmoid") return Activation::sigmoid;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

void FieldArchitecture::validate() const {
  if (pos_frequencies < 1 || dir_frequencies < 1) throw ConfigError("field: encoding frequencies must be >= 1");
  if (hidden_layers < 1 || hidden_width < 1 || color_width < 1) throw ConfigError("field: layer counts and widths must be >= 1");
  if (skip_layer != -1 && (skip_layer < 1 || skip_layer >= hidden_layers)) {
    throw ConfigError("field: skip_layer must be -1 or in [1, hidden_layers)");
  }
  if (hidden_activation != Activation::relu && hidden_activation != Activation::softplus) {
    throw ConfigError("field: hidden activation must be relu or softplus");
  }
  if (!(scene_scale > 0.0) || !scene_center.allFinite()) throw ConfigError("field: scene normalization must be finite and positive");
}

std::vector<LayerShape> layer_layout(const FieldArchitecture& arch) {
  arch.validate();
  std::vector<LayerShape> layers;
  Index offset = 0;
  auto add = [&](int rows, int cols, Activation act) {
    layers.push_back({rows, cols, act, offset});
    offset += Index(rows) * cols + rows;
  };
  for (int i = 0; i < arch.hidden_layers; ++i) {
    const int cols = i == 0 ? arch.pos_input_dim() : arch.hidden_width + (i == arch.skip_layer ? arch.pos_input_dim() : 0);
    add(arch.hidden_width, cols, arch.hidden_activation);
  }
  add(1, arch.hidden_width, Activation::softplus);
  add(arch.color_width, arch.hidden_width + arch.dir_input_dim(), arch.hidden_activation);
  add(3, arch.color_width, Activation::sigmoid);
  return layers;
}

namespace {

template <typename Scalar>
Index layout_size(const std::vector<LayerShape>& layers) {
  const LayerShape& last = layers.back();
  return last.offset + Index(last.rows) * last.cols + last.rows;
}

template <typename Derived>
auto sigmoid_of(const Eigen::ArrayBase<Derived>& z) {
  using S = typename Derived::Scalar;
  return S(1) / (S(1) + (-z).exp());
}

template <typename Scalar>
Matrix<Scalar> apply(Activation act, const Matrix<Scalar>& z) {
  switch (act) {
    case Activation::identity: return z;
    case Activation::relu: return z.cwiseMax(Scalar(0));
    case Activation::softplus: return (z.array().max(Scalar(0)) + (-z.array().abs()).exp().log1p()).matrix();
    case Activation::sigmoid: return sigmoid_of(z.array()).matrix();
  }
  return z;
}

/// Elementwise derivative of the activation, given pre- and post-activation values.
template <typename Scalar>
Matrix<Scalar> derivative(Activation act, const Matrix<Scalar>& z, const Matrix<Scalar>& h) {
  switch (act) {
    case Activation::identity: return Matrix<Scalar>::Ones(z.rows(), z.cols());
    case Activation::relu: return (z.array() > Scalar(0)).template cast<Scalar>().matrix();
    case Activation::softplus: return sigmoid_of(z.array()).matrix();
    case Activation::sigmoid: return (h.array() * (Scalar(1) - h.array())).matrix();
  }
  return Matrix<Scalar>::Ones(z.rows(), z.cols());
}

template <typename Scalar>
Eigen::Map<Matrix<Scalar>> grad_weight(ParamGrad<Scalar>& g, const LayerShape& l) {
  return {g.values.data() + l.offset, l.rows, l.cols};
}

template <typename Scalar>
Eigen::Map<Vector<Scalar>> grad_bias(ParamGrad<Scalar>& g, const LayerShape& l) {
  return {g.values.data() + l.offset + Index(l.rows) * l.cols, l.rows};
}

template <typename Scalar>
Index first_bad_column(const Matrix<Scalar>& m) {
  for (Index j = 0; j < m.cols(); ++j) {
    if (!m.col(j).allFinite()) return j;
  }
  return -1;
}

}  // namespace

template <typename Scalar>
MlpParams<Scalar> init_params(const FieldArchitecture& arch, std::uint64_t seed, double density_bias) {
  MlpParams<Scalar> params;
  params.arch = arch;
  params.layers = layer_layout(arch);
  params.values = Vector<Scalar>::Zero(layout_size<Scalar>(params.layers));
  Rng rng(mix_seed(seed, 0x6d6c70));
  for (Index i = 0; i < params.num_layers(); ++i) {
    auto w = params.weight(i);
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (Index c = 0; c < w.cols(); ++c) {
      for (Index r = 0; r < w.rows(); ++r) w(r, c) = static_cast<Scalar>(uniform(rng, -bound, bound));
    }
  }
  params.bias(params.density_layer()).setConstant(static_cast<Scalar>(density_bias));
  return params;
}

template <typename Scalar>
FieldBatch<Scalar> field_forward(const MlpParams<Scalar>& params, const Matrix<Scalar>& enc_pos,
                                 const Matrix<Scalar>& enc_dir, FieldCache<Scalar>* cache) {
  const FieldArchitecture& arch = params.arch;
  if (enc_pos.rows() != arch.pos_input_dim() || enc_dir.rows() != arch.dir_input_dim() ||
      enc_pos.cols() != enc_dir.cols()) {
    throw UsageError("field_forward: encoding shapes do not match the architecture");
  }
  if (const Index bad = first_bad_column(enc_pos); bad >= 0) throw NumericError("field_forward: non-finite position encoding", bad);
  if (const Index bad = first_bad_column(enc_dir); bad >= 0) throw NumericError("field_forward: non-finite direction encoding", bad);

  const Index n_layers = params.num_layers();
  std::vector<Matrix<Scalar>> pre(n_layers), post(n_layers);
  const int width = arch.hidden_width;
  for (int i = 0; i < arch.hidden_layers; ++i) {
    const auto w = params.weight(i);
    if (i == 0) {
      pre[i].noalias() = w * enc_pos;
    } else {
      pre[i].noalias() = w.leftCols(width) * post[i - 1];
      if (i == arch.skip_layer) pre[i].noalias() += w.rightCols(arch.pos_input_dim()) * enc_pos;
    }
    pre[i].colwise() += params.bias(i);
    post[i] = apply(params.layers[i].activation, pre[i]);
  }
  const Matrix<Scalar>& features = post[arch.hidden_layers - 1];

  const Index d = params.density_layer();
  pre[d].noalias() = params.weight(d) * features;
  pre[d].colwise() += params.bias(d);
  post[d] = apply(Activation::softplus, pre[d]);

  const Index ch = params.color_hidden_layer();
  const auto wch = params.weight(ch);
  pre[ch].noalias() = wch.leftCols(width) * features;
  pre[ch].noalias() += wch.rightCols(arch.dir_input_dim()) * enc_dir;
  pre[ch].colwise() += params.bias(ch);
  post[ch] = apply(params.layers[ch].activation, pre[ch]);

  const Index co = params.color_output_layer();
  pre[co].noalias() = params.weight(co) * post[ch];
  pre[co].colwise() += params.bias(co);
  post[co] = apply(Activation::sigmoid, pre[co]);

  FieldBatch<Scalar> out{post[co], post[d]};
  if (cache) {
    cache->params_id = &params;
    cache->generation = params.generation;
    cache->enc_pos = enc_pos;
    cache->enc_dir = enc_dir;
    cache->pre = std::move(pre);
    cache->post = std::move(post);
  }
  return out;
}

FieldOutput field_forward(const MlpParams<double>& params, const VecX& enc_pos, const VecX& enc_dir) {
  const FieldBatch<double> batch = field_forward<double>(params, enc_pos, enc_dir);
  return {batch.color.col(0), batch.tau(0)};
}

template <typename Scalar>
void field_backward(const MlpParams<Scalar>& params, const FieldCache<Scalar>& cache, const Matrix<Scalar>& d_color,
                    const RowVector<Scalar>& d_tau, ParamGrad<Scalar>& grad, Matrix<Scalar>* d_enc_pos,
                    Matrix<Scalar>* d_enc_dir) {
  if (cache.params_id != &params || cache.generation != params.generation) {
    throw UsageError("field_backward: cache is stale or belongs to other parameters");
  }
  const Index m = cache.enc_pos.cols();
  if (d_color.rows() != 3 || d_color.cols() != m || d_tau.cols() != m) {
    throw UsageError("field_backward: cotangent shapes do not match the cached batch");
  }
  if (grad.values.size() != params.size()) throw UsageError("field_backward: gradient shape mismatch");

  const FieldArchitecture& arch = params.arch;
  const int width = arch.hidden_width;
  const auto& pre = cache.pre;
  const auto& post = cache.post;
  const auto& layers = params.layers;
  const Matrix<Scalar>& features = post[arch.hidden_layers - 1];

  const Index co = params.color_output_layer();
  const Matrix<Scalar> dz_out = d_color.cwiseProduct(derivative(Activation::sigmoid, pre[co], post[co]));
  grad_weight(grad, layers[co]).noalias() += dz_out * post[params.color_hidden_layer()].transpose();
  grad_bias(grad, layers[co]) += dz_out.rowwise().sum();

  const Index ch = params.color_hidden_layer();
  Matrix<Scalar> dz_ch = params.weight(co).transpose() * dz_out;
  dz_ch.array() *= derivative(layers[ch].activation, pre[ch], post[ch]).array();
  auto gw_ch = grad_weight(grad, layers[ch]);
  gw_ch.leftCols(width).noalias() += dz_ch * features.transpose();
  gw_ch.rightCols(arch.dir_input_dim()).noalias() += dz_ch * cache.enc_dir.transpose();
  grad_bias(grad, layers[ch]) += dz_ch.rowwise().sum();
  if (d_enc_dir) d_enc_dir->noalias() = params.weight(ch).rightCols(arch.dir_input_dim()).transpose() * dz_ch;

  Matrix<Scalar> d_hidden = params.weight(ch).leftCols(width).transpose() * dz_ch;

  const Index d = params.density_layer();
  const RowVector<Scalar> dz_den = d_tau.cwiseProduct(derivative(Activation::softplus, pre[d], post[d]));
  grad_weight(grad, layers[d]).noalias() += dz_den * features.transpose();
  grad_bias(grad, layers[d])(0) += dz_den.sum();
  d_hidden.noalias() += params.weight(d).transpose() * dz_den;

  if (d_enc_pos) d_enc_pos->setZero(arch.pos_input_dim(), m);
  for (int i = arch.hidden_layers - 1; i >= 0; --i) {
    Matrix<Scalar> dz = std::move(d_hidden);
    dz.array() *= derivative(layers[i].activation, pre[i], post[i]).array();
    auto gw = grad_weight(grad, layers[i]);
    grad_bias(grad, layers[i]) += dz.rowwise().sum();
    const auto w = params.weight(i);
    if (i == 0) {
      gw.noalias() += dz * cache.enc_pos.transpose();
      if (d_enc_pos) d_enc_pos->noalias() += w.transpose() * dz;
      break;
    }
    gw.leftCols(width).noalias() += dz * post[i - 1].transpose();
    if (i == arch.skip_layer) {
      gw.rightCols(arch.pos_input_dim()).noalias() += dz * cache.enc_pos.transpose();
      if (d_enc_pos) d_enc_pos->noalias() += w.rightCols(arch.pos_input_dim()).transpose() * dz;
    }
    d_hidden.noalias() = w.leftCols(width).transpose() * dz;
  }
}

template <typename Scalar>
FieldGradients<Scalar> field_backward(const MlpParams<Scalar>& params, const FieldCache<Scalar>& cache,
                                      const Matrix<Scalar>& d_color, const RowVector<Scalar>& d_tau) {
  FieldGradients<Scalar> out{ParamGrad<Scalar>::zeros_like(params), {}, {}};
  field_backward(params, cache, d_color, d_tau, out.params, &out.d_enc_pos, &out.d_enc_dir);
  return out;
}

#define PNERF_INSTANTIATE_MLP(S)                                                                               \
  template MlpParams<S> init_params<S>(const FieldArchitecture&, std::uint64_t, double);                       \
  template FieldBatch<S> field_forward<S>(const MlpParams<S>&, const Matrix<S>&, const Matrix<S>&,             \
                                          FieldCache<S>*);                                                     \
  template void field_backward<S>(const MlpParams<S>&, const FieldCache<S>&, const Matrix<S>&,                 \
                                  const RowVector<S>&, ParamGrad<S>&, Matrix<S>*, Matrix<S>*);                 \
  template FieldGradients<S> field_backward<S>(const MlpParams<S>&, const FieldCache<S>&, const Matrix<S>&,     \
                                               const RowVector<S>&);

PNERF_INSTANTIATE_MLP(double)
PNERF_INSTANTIATE_MLP(float)
#undef PNERF_INSTANTIATE_MLP

// Checkpoint format ---------------------------------------------------------

namespace {

constexpr const char* kCheckpointMagic = "PNERF-MLP 1";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MlpParams<double>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  const FieldArchitecture& a = params.arch;
  out << std::setprecision(17);
  out << kCheckpointMagic << '\n';
  out << "pos_frequencies " << a.pos_frequencies << '\n';
  out << "dir_frequencies " << a.dir_frequencies << '\n';
  out << "hidden_layers " << a.hidden_layers << '\n';
  out << "hidden_width " << a.hidden_width << '\n';
  out << "skip_layer " << a.skip_layer << '\n';
  out << "color_width " << a.color_width << '\n';
  out << "hidden_activation " << to_string(a.hidden_activation) << '\n';
  out << "scene_center " << a.scene_center.x() << ' ' << a.scene_center.y() << ' ' << a.scene_center.z() << '\n';
  out << "scene_scale " << a.scene_scale << '\n';
  out << "layers " << params.layers.size() << '\n';
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const LayerShape& l = params.layers[i];
    out << "layer " << i << ' ' << l.rows << ' ' << l.cols << ' ' << to_string(l.activation) << '\n';
  }
  out << "values " << params.values.size() << '\n';
  out << "data\n";
  detail::write_f64_le(out, {params.values.data(), static_cast<std::size_t>(params.values.size())});
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

MlpParams<double> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  detail::HeaderReader header(in, "checkpoint " + path.string());
  std::string magic;
  if (!std::getline(in, magic) || magic != kCheckpointMagic) header.fail("magic");

  FieldArchitecture a;
  a.pos_frequencies = header.value<int>("pos_frequencies");
  a.dir_frequencies = header.value<int>("dir_frequencies");
  a.hidden_layers = header.value<int>("hidden_layers");
  a.hidden_width = header.value<int>("hidden_width");
  a.skip_layer = header.value<int>("skip_layer");
  a.color_width = header.value<int>("color_width");
  try {
    a.hidden_activation = parse_activation(header.value<std::string>("hidden_activation"));
  } catch (const ConfigError&) {
    header.fail("hidden_activation");
  }
  {
    auto fields = header.expect("scene_center");
    if (!(fields >> a.scene_center.x() >> a.scene_center.y() >> a.scene_center.z())) header.fail("scene_center");
  }
  a.scene_scale = header.value<double>("scene_scale");

  std::vector<LayerShape> layers;
  try {
    layers = layer_layout(a);
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint " + path.string() + ": inconsistent architecture: " + e.what());
  }
  if (header.value<std::size_t>("layers") != layers.size()) header.fail("layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto fields = header.expect("layer");
    std::size_t index = 0;
    int rows = 0, cols = 0;
    std::string act;
    if (!(fields >> index >> rows >> cols >> act) || index != i || rows != layers[i].rows || cols != layers[i].cols ||
        act != to_string(layers[i].activation)) {
      header.fail("layer");
    }
  }
  const auto count = header.value<Index>("values");
  if (count != layout_size<double>(layers)) header.fail("values");
  header.expect("data");

  MlpParams<double> params;
  params.arch = a;
  params.layers = std::move(layers);
  params.values.resize(count);
  if (!detail::read_f64_le(in, {params.values.data(), static_cast<std::size_t>(count)})) header.fail("data");
  if (in.peek() != std::char_traits<char>::eof()) header.fail("data");
  if (!params.values.allFinite()) header.fail("data");
  return params;
}

}  // namespace pnerf
