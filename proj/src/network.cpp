#include "pacbayes/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pacbayes/errors.hpp"
#include "pacbayes/loss.hpp"
#include "pacbayes/rng.hpp"

namespace pacbayes {

namespace {

void check_input(const MlpParams& params, std::span<const double> x) {
  if (params.layers.empty()) throw ArgumentError("network has no layers");
  if (x.size() != params.input_dim()) {
    throw ArgumentError("input dimension " + std::to_string(x.size()) + " does not match " +
                        std::to_string(params.input_dim()));
  }
}

// Post-activation inputs to every layer: acts[0] = x, acts[h] = relu(z_h).
std::vector<std::vector<double>> layer_inputs(const MlpParams& params, std::span<const double> x,
                                              std::vector<double>* out_logits) {
  const std::size_t k = params.depth();
  std::vector<std::vector<double>> acts(k);
  acts[0].assign(x.begin(), x.end());
  for (std::size_t h = 0; h < k; ++h) {
    std::vector<double> z(params.layers[h].rows());
    matvec(params.layers[h], acts[h], z);
    if (h + 1 < k) {
      for (double& v : z) v = v > 0.0 ? v : 0.0;
      acts[h + 1] = std::move(z);
    } else if (out_logits != nullptr) {
      *out_logits = std::move(z);
    }
  }
  return acts;
}

// Accumulates `scale * delta_k` back through the network into `grad`
// (flattened layout). `acts` are the per-layer inputs from layer_inputs.
void backprop(const MlpParams& params, const std::vector<std::vector<double>>& acts,
              std::vector<double> delta, std::span<double> grad) {
  const std::size_t k = params.depth();
  for (std::size_t h = k; h-- > 0;) {
    const Matrix& w = params.layers[h];
    const std::size_t off = params.layer_offset(h);
    const auto& a = acts[h];
    for (std::size_t u = 0; u < w.rows(); ++u) {
      const double d = delta[u];
      if (d == 0.0) continue;
      double* g = grad.data() + off + u * w.cols();
      for (std::size_t j = 0; j < w.cols(); ++j) g[j] += d * a[j];
    }
    if (h == 0) break;
    std::vector<double> prev(w.cols());
    matvec_transposed(w, delta, prev);
    // acts[h] > 0 exactly where the unit is active.
    for (std::size_t j = 0; j < prev.size(); ++j) {
      if (!(acts[h][j] > 0.0)) prev[j] = 0.0;
    }
    delta = std::move(prev);
  }
}

void put_le32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_le32(std::span<const std::uint8_t> b, std::size_t off) {
  if (off + 4 > b.size()) throw IoError("truncated checkpoint header", b.size());
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{b[off + i]} << (8 * i);
  return v;
}

}  // namespace

MlpParams MlpParams::zeros(std::span<const std::size_t> widths) {
  if (widths.size() < 3) throw ArgumentError("depth must be at least 2");
  MlpParams p;
  for (std::size_t h = 0; h + 1 < widths.size(); ++h) {
    if (widths[h] == 0 || widths[h + 1] == 0) throw ArgumentError("layer widths must be positive");
    p.layers.emplace_back(widths[h + 1], widths[h]);
  }
  return p;
}

MlpParams MlpParams::unflatten(std::span<const std::size_t> widths, std::span<const double> theta) {
  MlpParams p = zeros(widths);
  p.assign(theta);
  return p;
}

std::size_t MlpParams::num_params() const {
  std::size_t n = 0;
  for (const auto& w : layers) n += w.size();
  return n;
}

std::vector<std::size_t> MlpParams::widths() const {
  std::vector<std::size_t> w;
  if (layers.empty()) return w;
  w.push_back(layers.front().cols());
  for (const auto& l : layers) w.push_back(l.rows());
  return w;
}

std::size_t MlpParams::layer_offset(std::size_t h) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < h; ++i) off += layers[i].size();
  return off;
}

std::vector<double> MlpParams::flatten() const {
  std::vector<double> theta;
  theta.reserve(num_params());
  for (const auto& w : layers) theta.insert(theta.end(), w.values().begin(), w.values().end());
  return theta;
}

void MlpParams::assign(std::span<const double> theta) {
  if (theta.size() != num_params()) {
    throw ArgumentError("parameter vector has " + std::to_string(theta.size()) +
                        " entries, expected " + std::to_string(num_params()));
  }
  std::size_t off = 0;
  for (auto& w : layers) {
    std::copy_n(theta.begin() + static_cast<long>(off), w.size(), w.values().begin());
    off += w.size();
  }
}

void MlpParams::validate() const {
  if (layers.size() < 2) throw ArgumentError("depth must be at least 2");
  for (std::size_t h = 0; h < layers.size(); ++h) {
    if (layers[h].empty()) throw ArgumentError("empty layer " + std::to_string(h + 1));
    if (h + 1 < layers.size() && layers[h + 1].cols() != layers[h].rows()) {
      throw ArgumentError("layer " + std::to_string(h + 2) + " input width does not chain");
    }
  }
}

MlpParams init_gaussian(std::span<const std::size_t> widths, double init_scale, std::uint64_t seed) {
  if (!(init_scale >= 0.0)) throw ArgumentError("init_scale must be nonnegative");
  MlpParams p = MlpParams::zeros(widths);
  Rng rng(seed);
  NormalSampler normal;
  for (auto& w : p.layers) {
    const double sd = init_scale / std::sqrt(static_cast<double>(w.cols()));
    for (double& v : w.values()) v = sd * normal(rng);
  }
  return p;
}

ForwardResult forward(const MlpParams& params, std::span<const double> x) {
  check_input(params, x);
  const std::size_t k = params.depth();
  ForwardResult out;
  out.pre_activations.resize(k);
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t h = 0; h < k; ++h) {
    std::vector<double> z(params.layers[h].rows());
    matvec(params.layers[h], a, z);
    out.pre_activations[h] = z;
    if (h + 1 < k) {
      for (double& v : z) v = v > 0.0 ? v : 0.0;
      a = std::move(z);
    } else {
      out.logits = std::move(z);
    }
  }
  return out;
}

std::vector<double> logits(const MlpParams& params, std::span<const double> x) {
  check_input(params, x);
  std::vector<double> z;
  layer_inputs(params, x, &z);
  return z;
}

ActivationMask activation_mask(const MlpParams& params, std::span<const double> x) {
  const auto fr = forward(params, x);
  ActivationMask mask;
  for (std::size_t h = 0; h + 1 < params.depth(); ++h) {
    std::vector<std::uint8_t> bits(fr.pre_activations[h].size());
    for (std::size_t u = 0; u < bits.size(); ++u) bits[u] = fr.pre_activations[h][u] > 0.0 ? 1 : 0;
    mask.layers.push_back(std::move(bits));
  }
  return mask;
}

std::vector<double> realized_linear_forward(const MlpParams& params, const ActivationMask& mask,
                                            std::span<const double> x) {
  check_input(params, x);
  const std::size_t k = params.depth();
  if (mask.layers.size() + 1 != k) throw ArgumentError("mask depth does not match network");
  std::vector<double> a(x.begin(), x.end());
  for (std::size_t h = 0; h < k; ++h) {
    std::vector<double> z(params.layers[h].rows());
    matvec(params.layers[h], a, z);
    if (h + 1 < k) {
      const auto& bits = mask.layers[h];
      if (bits.size() != z.size()) throw ArgumentError("mask width does not match layer");
      for (std::size_t u = 0; u < z.size(); ++u) z[u] = bits[u] ? z[u] : 0.0;
    }
    a = std::move(z);
  }
  return a;
}

MlpParams scale_params(const MlpParams& params, double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("scale factor must be positive");
  MlpParams out = params;
  for (auto& w : out.layers) {
    for (double& v : w.values()) v *= lambda;
  }
  return out;
}

Matrix output_jacobian(const MlpParams& params, std::span<const double> x) {
  check_input(params, x);
  const auto acts = layer_inputs(params, x, nullptr);
  const std::size_t outputs = params.output_dim();
  Matrix jac(outputs, params.num_params());
  for (std::size_t c = 0; c < outputs; ++c) {
    std::vector<double> delta(outputs, 0.0);
    delta[c] = 1.0;
    backprop(params, acts, std::move(delta), jac.row(c));
  }
  return jac;
}

std::vector<double> loss_gradient_rows(const MlpParams& params, const Matrix& inputs,
                                       std::span<const int> labels,
                                       std::span<const std::size_t> rows, double* loss_sum) {
  if (rows.empty()) throw ArgumentError("gradient batch is empty");
  std::vector<double> grad(params.num_params(), 0.0);
  double total = 0.0;
  for (std::size_t i : rows) {
    const auto x = inputs.row(i);
    check_input(params, x);
    std::vector<double> z;
    const auto acts = layer_inputs(params, x, &z);
    auto ce = cross_entropy(z, labels[i]);
    total += ce.loss;
    ce.probs[static_cast<std::size_t>(labels[i])] -= 1.0;
    backprop(params, acts, std::move(ce.probs), grad);
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (double& g : grad) g *= inv;
  if (loss_sum != nullptr) *loss_sum = total;
  return grad;
}

std::vector<double> loss_gradient(const MlpParams& params, const Matrix& batch,
                                  std::span<const int> labels) {
  if (batch.rows() != labels.size()) throw ArgumentError("batch rows do not match labels");
  std::vector<std::size_t> rows(batch.rows());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return loss_gradient_rows(params, batch, labels, rows, nullptr);
}

std::vector<std::uint8_t> edge_mask(const MlpParams& params, const ActivationMask& mask,
                                    EdgeMaskLayout layout) {
  const std::size_t k = params.depth();
  if (mask.layers.size() + 1 != k) throw ArgumentError("mask depth does not match network");
  std::vector<std::uint8_t> bits(params.num_params(), 1);
  for (std::size_t h = 0; h < k; ++h) {
    const Matrix& w = params.layers[h];
    std::uint8_t* b = bits.data() + params.layer_offset(h);
    if (layout == EdgeMaskLayout::kIncomingRows && h + 1 < k) {
      for (std::size_t u = 0; u < w.rows(); ++u) {
        if (!mask.layers[h][u]) std::fill_n(b + u * w.cols(), w.cols(), std::uint8_t{0});
      }
    } else if (layout == EdgeMaskLayout::kOutgoingColumns && h > 0) {
      for (std::size_t u = 0; u < w.rows(); ++u) {
        for (std::size_t j = 0; j < w.cols(); ++j) {
          if (!mask.layers[h - 1][j]) b[u * w.cols() + j] = 0;
        }
      }
    }
  }
  return bits;
}

std::vector<std::uint8_t> encode_checkpoint(const MlpParams& params) {
  params.validate();
  std::vector<std::uint8_t> out = {'P', 'B', 'N', 'N'};
  put_le32(out, kCheckpointVersion);
  put_le32(out, static_cast<std::uint32_t>(params.depth()));
  for (std::size_t w : params.widths()) put_le32(out, static_cast<std::uint32_t>(w));
  for (double v : params.flatten()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

MlpParams decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PBNN", 4) != 0) {
    throw FormatError("not a parameter checkpoint (bad format tag)");
  }
  const std::uint32_t version = get_le32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t depth = get_le32(bytes, 8);
  if (depth < 2 || depth > 1024) throw FormatError("implausible checkpoint depth");
  std::vector<std::size_t> widths;
  std::size_t off = 12;
  for (std::uint32_t i = 0; i <= depth; ++i, off += 4) widths.push_back(get_le32(bytes, off));
  MlpParams params = MlpParams::zeros(widths);
  const std::size_t p = params.num_params();
  if (bytes.size() != off + 8 * p) {
    throw IoError("checkpoint payload size mismatch: expected " + std::to_string(off + 8 * p) +
                      " bytes",
                  bytes.size());
  }
  std::vector<double> theta(p);
  for (std::size_t j = 0; j < p; ++j, off += 8) {
    std::uint64_t b = 0;
    for (int i = 0; i < 8; ++i) b |= std::uint64_t{bytes[off + i]} << (8 * i);
    theta[j] = std::bit_cast<double>(b);
  }
  params.assign(theta);
  return params;
}

void write_checkpoint(const std::filesystem::path& path, const MlpParams& params) {
  const auto bytes = encode_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string(), 0);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

MlpParams read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string(), 0);
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

}  // namespace pacbayes
