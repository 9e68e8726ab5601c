#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fedrep/errors.hpp"
#include "fedrep/matrix.hpp"
#include "fedrep/rng.hpp"

namespace fedrep {

enum class Activation { tanh, relu };

inline std::string to_string(Activation a) {
  return a == Activation::tanh ? "tanh" : "relu";
}

// Architecture of one encoder: a stack of affine layers with a nonlinearity
// between them and an L2-normalization as the final layer. An empty
// hidden_dims list is a single affine map followed by normalization.
struct EncoderSpec {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int output_dim = 0;
  Activation activation = Activation::tanh;

  void validate() const {
    if (input_dim <= 0)
      throw ConfigError("EncoderSpec: input_dim must be positive");
    if (output_dim <= 0)
      throw ConfigError("EncoderSpec: output_dim must be positive");
    for (int h : hidden_dims)
      if (h <= 0) throw ConfigError("EncoderSpec: hidden dims must be positive");
  }

  // Per-layer (fan_in, fan_out) pairs, in application order.
  std::vector<std::pair<int, int>> layer_dims() const {
    std::vector<std::pair<int, int>> dims;
    int in = input_dim;
    for (int h : hidden_dims) {
      dims.emplace_back(in, h);
      in = h;
    }
    dims.emplace_back(in, output_dim);
    return dims;
  }
};

// Flat parameter layout: for each layer, the (out x in) weight block
// row-major, then the bias. Length is a pure function of the spec.
inline std::size_t param_count(const EncoderSpec& spec) {
  std::size_t n = 0;
  for (auto [in, out] : spec.layer_dims())
    n += static_cast<std::size_t>(in) * static_cast<std::size_t>(out) +
         static_cast<std::size_t>(out);
  return n;
}

// Glorot-uniform weights, zero biases, drawn from a seeded per-layer stream.
inline std::vector<double> init_params(const EncoderSpec& spec,
                                       std::uint64_t seed) {
  spec.validate();
  std::vector<double> params(param_count(spec), 0.0);
  std::size_t off = 0;
  std::size_t layer = 0;
  for (auto [in, out] : spec.layer_dims()) {
    Rng rng(seed_combine(seed, layer));
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    const auto wn = static_cast<std::size_t>(in) * static_cast<std::size_t>(out);
    for (std::size_t i = 0; i < wn; ++i) params[off + i] = rng.uniform(-a, a);
    off += wn + static_cast<std::size_t>(out);  // biases stay zero
    ++layer;
  }
  return params;
}

namespace detail {

constexpr double kNormGuard = 1e-12;

inline void check_params(const EncoderSpec& spec,
                         const std::vector<double>& params) {
  if (params.size() != param_count(spec))
    throw ConfigError("encoder: parameter vector length " +
                      std::to_string(params.size()) + " does not match spec (" +
                      std::to_string(param_count(spec)) + ")");
}

// z = x * W^T + b for a weight block stored row-major at params[off].
inline Matrix affine(const Matrix& x, const std::vector<double>& params,
                     std::size_t off, int in, int out) {
  Matrix z(x.rows(), static_cast<std::size_t>(out));
  const double* w = params.data() + off;
  const double* b = w + static_cast<std::size_t>(in) * static_cast<std::size_t>(out);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    for (int o = 0; o < out; ++o) {
      const double* wrow = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
      double s = b[o];
      for (int i = 0; i < in; ++i) s += xr[static_cast<std::size_t>(i)] * wrow[i];
      z(r, static_cast<std::size_t>(o)) = s;
    }
  }
  return z;
}

inline void apply_activation(Matrix& z, Activation act) {
  if (act == Activation::tanh) {
    for (auto& v : z.data()) v = std::tanh(v);
  } else {
    for (auto& v : z.data()) v = v > 0.0 ? v : 0.0;
  }
}

}  // namespace detail

// Everything backward needs from a forward pass: the input to each affine
// layer, the activated hidden outputs, the pre-normalization output and the
// guarded row norms.
struct EncoderTrace {
  std::vector<Matrix> layer_inputs;  // input to affine layer l
  Matrix prenorm;                    // last affine output, before L2 norm
  std::vector<double> row_norms;     // max(||row||, guard)
  Matrix output;                     // normalized representations
};

inline EncoderTrace encoder_forward_traced(const EncoderSpec& spec,
                                           const std::vector<double>& params,
                                           const Matrix& inputs) {
  detail::check_params(spec, params);
  if (inputs.cols() != static_cast<std::size_t>(spec.input_dim))
    throw ConfigError("encoder_forward: input has " +
                      std::to_string(inputs.cols()) + " columns, spec expects " +
                      std::to_string(spec.input_dim));
  if (!inputs.all_finite())
    throw NumericError("encoder_forward: non-finite input");

  EncoderTrace t;
  const auto dims = spec.layer_dims();
  Matrix cur = inputs;
  std::size_t off = 0;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    t.layer_inputs.push_back(cur);
    auto [in, out] = dims[l];
    Matrix z = detail::affine(cur, params, off, in, out);
    off += static_cast<std::size_t>(in) * static_cast<std::size_t>(out) +
           static_cast<std::size_t>(out);
    if (!z.all_finite())
      throw NumericError("encoder_forward: non-finite value in layer " +
                         std::to_string(l));
    if (l + 1 < dims.size()) detail::apply_activation(z, spec.activation);
    cur = std::move(z);
  }

  t.prenorm = cur;
  t.row_norms.resize(cur.rows());
  t.output = Matrix(cur.rows(), cur.cols());
  for (std::size_t r = 0; r < cur.rows(); ++r) {
    const double n = std::max(l2_norm(cur.row(r)), detail::kNormGuard);
    t.row_norms[r] = n;
    for (std::size_t j = 0; j < cur.cols(); ++j) t.output(r, j) = cur(r, j) / n;
  }
  return t;
}

inline Matrix encoder_forward(const EncoderSpec& spec,
                              const std::vector<double>& params,
                              const Matrix& inputs) {
  return encoder_forward_traced(spec, params, inputs).output;
}

// Gradient of a scalar loss w.r.t. params, given its gradient w.r.t. the
// normalized outputs. Reuses a trace so training loops pay for one forward.
inline std::vector<double> encoder_backward_from_trace(
    const EncoderSpec& spec, const std::vector<double>& params,
    const EncoderTrace& trace, const Matrix& output_grad) {
  detail::check_params(spec, params);
  if (output_grad.rows() != trace.output.rows() ||
      output_grad.cols() != trace.output.cols())
    throw ConfigError("encoder_backward: output_grad shape mismatch");

  const auto dims = spec.layer_dims();
  std::vector<double> grad(params.size(), 0.0);

  // Through normalization: for y with ||y|| >= guard,
  // d(y/n)/dy = (I - o o^T)/n with o = y/n; below the guard the map is y/guard.
  Matrix g(trace.prenorm.rows(), trace.prenorm.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double n = trace.row_norms[r];
    const double raw = l2_norm(trace.prenorm.row(r));
    if (raw >= detail::kNormGuard) {
      const double proj = dot(output_grad.row(r), trace.output.row(r));
      for (std::size_t j = 0; j < g.cols(); ++j)
        g(r, j) = (output_grad(r, j) - proj * trace.output(r, j)) / n;
    } else {
      for (std::size_t j = 0; j < g.cols(); ++j)
        g(r, j) = output_grad(r, j) / detail::kNormGuard;
    }
  }

  // Layer offsets for indexing the flat parameter vector.
  std::vector<std::size_t> offsets(dims.size());
  std::size_t off = 0;
  for (std::size_t l = 0; l < dims.size(); ++l) {
    offsets[l] = off;
    off += static_cast<std::size_t>(dims[l].first) *
               static_cast<std::size_t>(dims[l].second) +
           static_cast<std::size_t>(dims[l].second);
  }

  for (std::size_t li = dims.size(); li-- > 0;) {
    auto [in, out] = dims[li];
    const Matrix& x = trace.layer_inputs[li];

    // If this is a hidden layer, g currently holds the gradient w.r.t. the
    // activated output; pull it back through the nonlinearity first.
    if (li + 1 < dims.size()) {
      // The activated output of layer li is the input of layer li+1.
      const Matrix& a = trace.layer_inputs[li + 1];
      if (spec.activation == Activation::tanh) {
        for (std::size_t i = 0; i < g.data().size(); ++i)
          g.data()[i] *= 1.0 - a.data()[i] * a.data()[i];
      } else {
        for (std::size_t i = 0; i < g.data().size(); ++i)
          if (a.data()[i] <= 0.0) g.data()[i] = 0.0;
      }
    }

    double* gw = grad.data() + offsets[li];
    double* gb = gw + static_cast<std::size_t>(in) * static_cast<std::size_t>(out);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      auto xr = x.row(r);
      for (int o = 0; o < out; ++o) {
        const double gz = g(r, static_cast<std::size_t>(o));
        if (gz == 0.0) continue;
        double* gwrow = gw + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
        for (int i = 0; i < in; ++i) gwrow[i] += gz * xr[static_cast<std::size_t>(i)];
        gb[o] += gz;
      }
    }

    if (li > 0) {
      // g_x = g_z * W
      const double* w = params.data() + offsets[li];
      Matrix gx(g.rows(), static_cast<std::size_t>(in));
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (int o = 0; o < out; ++o) {
          const double gz = g(r, static_cast<std::size_t>(o));
          if (gz == 0.0) continue;
          const double* wrow = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
          for (int i = 0; i < in; ++i)
            gx(r, static_cast<std::size_t>(i)) += gz * wrow[i];
        }
      }
      g = std::move(gx);
    }
  }
  return grad;
}

inline std::vector<double> encoder_backward(const EncoderSpec& spec,
                                            const std::vector<double>& params,
                                            const Matrix& inputs,
                                            const Matrix& output_grad) {
  const EncoderTrace t = encoder_forward_traced(spec, params, inputs);
  return encoder_backward_from_trace(spec, params, t, output_grad);
}

}  // namespace fedrep
