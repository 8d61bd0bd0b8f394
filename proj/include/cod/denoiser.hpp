#pragma once

#include "cod/graph.hpp"
#include "cod/params.hpp"
#include "cod/sampler.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace cod {

enum class CondMode { TaskVector, ReturnScalar };

// Temporal U-Net geometry. conv_mult lists the channel multiplier per
// resolution level; the sequence is halved between levels, so seq_len must
// be divisible by 2^(levels-1).
struct DenoiserConfig {
  int seq_len = 16;
  int channel_dim = 6;
  int hidden = 32;
  std::vector<int> conv_mult = {1, 2, 4};
  int n_down = 3;
  int n_mid = 2;
  int n_up = 2;
  int cond_dim = 2;
  CondMode cond_mode = CondMode::TaskVector;
  double dropout_p = 0.25;
  int groups = 8;

  int levels() const { return static_cast<int>(conv_mult.size()); }

  void validate() const {
    if (seq_len < 1 || channel_dim < 1 || hidden < 1)
      throw std::invalid_argument("denoiser config: dimensions must be positive");
    if (conv_mult.empty()) throw std::invalid_argument("denoiser config: conv_mult empty");
    const int down_factor = 1 << (levels() - 1);
    if (seq_len % down_factor != 0)
      throw std::invalid_argument("denoiser config: seq_len " + std::to_string(seq_len) +
                                  " not divisible by 2^(levels-1) = " +
                                  std::to_string(down_factor));
    if (n_down != levels())
      throw std::invalid_argument("denoiser config: n_down must equal len(conv_mult)");
    if (n_up != levels() - 1)
      throw std::invalid_argument("denoiser config: n_up must equal len(conv_mult)-1");
    if (n_mid < 1) throw std::invalid_argument("denoiser config: n_mid must be >= 1");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0))
      throw std::invalid_argument("denoiser config: dropout_p must be in [0,1)");
    if (hidden % 2 != 0)
      throw std::invalid_argument("denoiser config: hidden must be even for the sinusoidal encode");
    for (int m : conv_mult)
      if ((hidden * m) % groups != 0)
        throw std::invalid_argument("denoiser config: level width " + std::to_string(hidden * m) +
                                    " not divisible by groups " + std::to_string(groups));
    if (cond_dim < 1) throw std::invalid_argument("denoiser config: cond_dim must be >= 1");
    if (cond_mode == CondMode::ReturnScalar && cond_dim != 1)
      throw std::invalid_argument("denoiser config: return_scalar mode requires cond_dim == 1");
  }
};

template <typename T>
struct DenoiserParams {
  DenoiserConfig cfg;
  ParamSet<T> tensors;
  bool lora_attached = false;
  int lora_rank = 0;

  static bool in_adapted_blocks(const std::string& name) {
    return name.rfind("down", 0) == 0 || name.rfind("mid", 0) == 0 || name.rfind("up", 0) == 0;
  }

  static bool is_adapter(const std::string& name) {
    return name.size() > 7 && (name.compare(name.size() - 7, 7, ".lora_A") == 0 ||
                               name.compare(name.size() - 7, 7, ".lora_B") == 0);
  }

  // Conv/dense weights inside the down/middle/up blocks wear adapters.
  static bool is_lora_target(const std::string& name) {
    if (!in_adapted_blocks(name)) return false;
    const char tail = name.back();
    return !is_adapter(name) && name.size() > 2 && name[name.size() - 2] == '.' &&
           (tail == 'k' || tail == 'w');
  }

  // With adapters attached, the adapted blocks are frozen and only the
  // adapters plus the embedders and output head keep training.
  bool is_trainable(const std::string& name) const {
    if (!lora_attached) return true;
    if (is_adapter(name)) return true;
    return !in_adapted_blocks(name);
  }
};

namespace unet_detail {

constexpr double kGnEps = 1e-5;

template <typename T>
struct Builder {
  Graph<T>& g;
  const DenoiserParams<T>& p;
  bool train_mode;
  std::vector<std::pair<std::string, NodeId>> trainable_nodes;

  NodeId tensor(const std::string& name) {
    const Tensor<T>& v = p.tensors[name];
    if (train_mode && p.is_trainable(name)) {
      NodeId id = g.param(v);
      trainable_nodes.emplace_back(name, id);
      return id;
    }
    return g.input(v);
  }

  NodeId weight(const std::string& name) {
    NodeId base = tensor(name);
    if (p.lora_attached && DenoiserParams<T>::is_lora_target(name)) {
      NodeId a = tensor(name + ".lora_A");
      NodeId b = tensor(name + ".lora_B");
      NodeId ba = g.matmul(b, a);
      base = g.add(base, g.reshape(ba, p.tensors[name].shape));
    }
    return base;
  }

  // registration order must follow init order, so arguments are sequenced
  NodeId conv(NodeId x, const std::string& prefix, int stride, int padding) {
    NodeId k = weight(prefix + ".k");
    NodeId b = tensor(prefix + ".b");
    return g.conv1d(x, k, b, stride, padding);
  }

  NodeId norm(NodeId x, const std::string& prefix) {
    NodeId gn_g = tensor(prefix + ".g");
    NodeId gn_b = tensor(prefix + ".b");
    return g.group_norm(x, gn_g, gn_b, p.cfg.groups, T(kGnEps));
  }

  NodeId mlp_dense(NodeId x, const std::string& w_name, const std::string& b_name) {
    NodeId w = tensor(w_name);
    NodeId b = tensor(b_name);
    return g.dense(x, w, b);
  }

  NodeId resblock(NodeId x, int c_in, int c_out, const std::string& prefix, NodeId emb_act) {
    NodeId h = conv(x, prefix + ".conv1", 1, 2);
    h = g.silu(norm(h, prefix + ".gn1"));
    NodeId ew = weight(prefix + ".emb.w");
    NodeId eb = tensor(prefix + ".emb.b");
    h = g.add_channel_bias(h, g.dense(emb_act, ew, eb));
    h = conv(h, prefix + ".conv2", 1, 2);
    h = g.silu(norm(h, prefix + ".gn2"));
    NodeId skip = c_in == c_out ? x : conv(x, prefix + ".skip", 1, 0);
    return g.add(h, skip);
  }
};

}  // namespace unet_detail

template <typename T>
struct ForwardBuild {
  NodeId out = -1;
  std::vector<std::pair<std::string, NodeId>> trainable_nodes;
};

// Wires the noise-prediction graph eps_theta(tau^k, C, k). Dropped samples
// see the null condition: their raw condition rows are zeroed before the
// condition embedder runs.
template <typename T>
ForwardBuild<T> build_forward(Graph<T>& g, const DenoiserParams<T>& p, const Tensor<T>& tau,
                              const std::vector<int>& k, const Tensor<T>& cond,
                              const std::vector<char>& cond_dropped, bool train_mode) {
  const DenoiserConfig& cfg = p.cfg;
  if (tau.ndim() != 3 || tau.dim(1) != cfg.seq_len || tau.dim(2) != cfg.channel_dim)
    throw std::invalid_argument("predict_noise: input shape " + shape_str(tau.shape) +
                                " does not match [B," + std::to_string(cfg.seq_len) + "," +
                                std::to_string(cfg.channel_dim) + "]");
  const int B = tau.dim(0);
  if (static_cast<int>(k.size()) != B || static_cast<int>(cond_dropped.size()) != B)
    throw std::invalid_argument("predict_noise: per-sample step/mask size != batch");
  if (cond.ndim() != 2 || cond.dim(0) != B || cond.dim(1) != cfg.cond_dim)
    throw std::invalid_argument("predict_noise: condition shape " + shape_str(cond.shape) +
                                " does not match [B," + std::to_string(cfg.cond_dim) + "]");

  unet_detail::Builder<T> w{g, p, train_mode, {}};
  const int h = cfg.hidden;

  NodeId t_emb = g.input(sinusoidal_embedding<T>(k, h));
  t_emb = w.mlp_dense(t_emb, "time_mlp.w1", "time_mlp.b1");
  t_emb = g.silu(t_emb);
  t_emb = w.mlp_dense(t_emb, "time_mlp.w2", "time_mlp.b2");

  Tensor<T> masked = cond;
  for (int b = 0; b < B; ++b)
    if (cond_dropped[static_cast<std::size_t>(b)])
      for (int c = 0; c < cfg.cond_dim; ++c) masked.at2(b, c) = T(0);
  NodeId c_emb = g.input(std::move(masked));
  c_emb = w.mlp_dense(c_emb, "cond_mlp.w1", "cond_mlp.b1");
  c_emb = g.silu(c_emb);
  c_emb = w.mlp_dense(c_emb, "cond_mlp.w2", "cond_mlp.b2");

  NodeId emb_act = g.silu(g.add(t_emb, c_emb));

  NodeId x = g.swap_time_channel(g.input(tau));  // [B, C, T_e]
  const int levels = cfg.levels();
  std::vector<NodeId> skips;
  std::vector<int> skip_channels;
  int c_prev = cfg.channel_dim;
  for (int l = 0; l < levels; ++l) {
    const int c_out = h * cfg.conv_mult[static_cast<std::size_t>(l)];
    const std::string prefix = "down" + std::to_string(l);
    x = w.resblock(x, c_prev, c_out, prefix + ".res0", emb_act);
    x = w.resblock(x, c_out, c_out, prefix + ".res1", emb_act);
    skips.push_back(x);
    skip_channels.push_back(c_out);
    if (l < levels - 1) x = w.conv(x, prefix + ".down", 2, 1);
    c_prev = c_out;
  }
  for (int j = 0; j < cfg.n_mid; ++j)
    x = w.resblock(x, c_prev, c_prev, "mid.res" + std::to_string(j), emb_act);
  for (int u = 0; u < cfg.n_up; ++u) {
    const int l = levels - 1 - u;
    const std::string prefix = "up" + std::to_string(u);
    x = g.concat_channels(x, skips[static_cast<std::size_t>(l)]);
    const int c_in = c_prev + skip_channels[static_cast<std::size_t>(l)];
    const int c_out = h * cfg.conv_mult[static_cast<std::size_t>(l - 1)];
    x = w.resblock(x, c_in, c_out, prefix + ".res0", emb_act);
    x = w.resblock(x, c_out, c_out, prefix + ".res1", emb_act);
    NodeId uk = w.weight(prefix + ".up.k");
    NodeId ub = w.tensor(prefix + ".up.b");
    x = g.conv1d_transposed(x, uk, ub, 2, 1);
    c_prev = c_out;
  }
  x = w.conv(x, "final.block", 1, 2);
  x = g.silu(w.norm(x, "final.gn"));
  NodeId ok = w.tensor("final.out.k");
  NodeId ob = w.tensor("final.out.b");
  x = g.conv1d(x, ok, ob, 1, 0);
  x = g.swap_time_channel(x);  // back to [B, T_e, C]

  return ForwardBuild<T>{x, std::move(w.trainable_nodes)};
}

template <typename T>
Tensor<T> predict_noise(const DenoiserParams<T>& p, const Tensor<T>& tau, const std::vector<int>& k,
                        const Tensor<T>& cond, const std::vector<char>& cond_dropped) {
  Graph<T> g;
  ForwardBuild<T> fb = build_forward(g, p, tau, k, cond, cond_dropped, false);
  return g.value(fb.out);
}

namespace unet_detail {

template <typename T>
void add_kaiming(ParamSet<T>& ps, const std::string& name, Shape shape, std::int64_t fan_in,
                 Rng& rng) {
  const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  ps.add(name, rand_uniform<T>(std::move(shape), -bound, bound, rng));
}

template <typename T>
void add_conv(ParamSet<T>& ps, const std::string& prefix, int c_out, int c_in, int width,
              Rng& rng) {
  const std::int64_t fan_in = static_cast<std::int64_t>(c_in) * width;
  add_kaiming(ps, prefix + ".k", {c_out, c_in, width}, fan_in, rng);
  add_kaiming(ps, prefix + ".b", {c_out}, fan_in, rng);
}

template <typename T>
void add_dense(ParamSet<T>& ps, const std::string& prefix, int out, int in, Rng& rng) {
  add_kaiming(ps, prefix + ".w", {out, in}, in, rng);
  add_kaiming(ps, prefix + ".b", {out}, in, rng);
}

template <typename T>
void add_gn(ParamSet<T>& ps, const std::string& prefix, int c) {
  ps.add(prefix + ".g", Tensor<T>::constant({c}, T(1)));
  ps.add(prefix + ".b", Tensor<T>::zeros({c}));
}

template <typename T>
void add_resblock(ParamSet<T>& ps, const std::string& prefix, int c_in, int c_out, int emb_dim,
                  Rng& rng) {
  add_conv(ps, prefix + ".conv1", c_out, c_in, 5, rng);
  add_gn(ps, prefix + ".gn1", c_out);
  add_dense(ps, prefix + ".emb", c_out, emb_dim, rng);
  add_conv(ps, prefix + ".conv2", c_out, c_out, 5, rng);
  add_gn(ps, prefix + ".gn2", c_out);
  if (c_in != c_out) add_conv(ps, prefix + ".skip", c_out, c_in, 1, rng);
}

}  // namespace unet_detail

template <typename T>
DenoiserParams<T> init_denoiser(const DenoiserConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  using namespace unet_detail;
  DenoiserParams<T> p;
  p.cfg = cfg;
  Rng rng(seed);
  ParamSet<T>& ps = p.tensors;
  const int h = cfg.hidden;

  add_kaiming(ps, "time_mlp.w1", {4 * h, h}, h, rng);
  add_kaiming(ps, "time_mlp.b1", {4 * h}, h, rng);
  add_kaiming(ps, "time_mlp.w2", {h, 4 * h}, 4 * h, rng);
  add_kaiming(ps, "time_mlp.b2", {h}, 4 * h, rng);
  add_kaiming(ps, "cond_mlp.w1", {4 * h, cfg.cond_dim}, cfg.cond_dim, rng);
  add_kaiming(ps, "cond_mlp.b1", {4 * h}, cfg.cond_dim, rng);
  add_kaiming(ps, "cond_mlp.w2", {h, 4 * h}, 4 * h, rng);
  add_kaiming(ps, "cond_mlp.b2", {h}, 4 * h, rng);

  const int levels = cfg.levels();
  int c_prev = cfg.channel_dim;
  for (int l = 0; l < levels; ++l) {
    const int c_out = h * cfg.conv_mult[static_cast<std::size_t>(l)];
    const std::string prefix = "down" + std::to_string(l);
    add_resblock(ps, prefix + ".res0", c_prev, c_out, h, rng);
    add_resblock(ps, prefix + ".res1", c_out, c_out, h, rng);
    if (l < levels - 1) add_conv(ps, prefix + ".down", c_out, c_out, 3, rng);
    c_prev = c_out;
  }
  for (int j = 0; j < cfg.n_mid; ++j)
    add_resblock(ps, "mid.res" + std::to_string(j), c_prev, c_prev, h, rng);
  for (int u = 0; u < cfg.n_up; ++u) {
    const int l = levels - 1 - u;
    const std::string prefix = "up" + std::to_string(u);
    const int c_skip = h * cfg.conv_mult[static_cast<std::size_t>(l)];
    const int c_out = h * cfg.conv_mult[static_cast<std::size_t>(l - 1)];
    add_resblock(ps, prefix + ".res0", c_prev + c_skip, c_out, h, rng);
    add_resblock(ps, prefix + ".res1", c_out, c_out, h, rng);
    // transposed conv kernel is [C_in, C_out, W]
    const std::int64_t fan_in = static_cast<std::int64_t>(c_out) * 4;
    add_kaiming(ps, prefix + ".up.k", {c_out, c_out, 4}, fan_in, rng);
    add_kaiming(ps, prefix + ".up.b", {c_out}, fan_in, rng);
    c_prev = c_out;
  }
  add_conv(ps, "final.block", h, h, 5, rng);
  add_gn(ps, "final.gn", h);
  add_conv(ps, "final.out", cfg.channel_dim, h, 1, rng);

  // sanity: one forward pass must produce finite values
  Tensor<T> probe = randn<T>({1, cfg.seq_len, cfg.channel_dim}, rng);
  Tensor<T> cond = Tensor<T>::zeros({1, cfg.cond_dim});
  Tensor<T> out = predict_noise(p, probe, {1}, cond, {0});
  if (!out.all_finite()) throw std::runtime_error("init_denoiser: non-finite forward output");
  return p;
}

// Adds zero-initialized low-rank pairs to every conv/dense weight in the
// down/middle/up blocks; the base model's outputs are unchanged until the
// adapters train away from zero.
template <typename T>
DenoiserParams<T> attach_lora(const DenoiserParams<T>& base, int rank, std::uint64_t seed) {
  if (base.lora_attached) throw std::invalid_argument("attach_lora: adapters already attached");
  if (rank < 1) throw std::invalid_argument("attach_lora: rank must be >= 1");
  DenoiserParams<T> p = base;
  p.lora_attached = true;
  p.lora_rank = rank;
  Rng rng(seed);
  for (const std::string& name : base.tensors.names) {
    if (!DenoiserParams<T>::is_lora_target(name)) continue;
    const Tensor<T>& w = base.tensors[name];
    const int out = w.dim(0);
    const int in = static_cast<int>(w.numel() / out);
    const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    p.tensors.add(name + ".lora_A", rand_uniform<T>({rank, in}, -bound, bound, rng));
    p.tensors.add(name + ".lora_B", Tensor<T>::zeros({out, rank}));
  }
  return p;
}

// Folds B*A into the base weights and drops the adapter tensors.
template <typename T>
DenoiserParams<T> merge_lora(const DenoiserParams<T>& adapted) {
  if (!adapted.lora_attached) throw std::invalid_argument("merge_lora: no adapters attached");
  DenoiserParams<T> p;
  p.cfg = adapted.cfg;
  for (const std::string& name : adapted.tensors.names) {
    if (DenoiserParams<T>::is_adapter(name)) continue;
    Tensor<T> w = adapted.tensors[name];
    if (DenoiserParams<T>::is_lora_target(name)) {
      const Tensor<T>& a = adapted.tensors[name + ".lora_A"];
      const Tensor<T>& b = adapted.tensors[name + ".lora_B"];
      const int out = w.dim(0);
      const int in = static_cast<int>(w.numel() / out);
      ConstRowMajorMap<T> am(a.data.data(), adapted.lora_rank, in);
      ConstRowMajorMap<T> bm(b.data.data(), out, adapted.lora_rank);
      Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> ba = bm * am;
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> flat(ba.data(), w.numel());
      w.data += flat;
    }
    p.tensors.add(name, std::move(w));
  }
  return p;
}

// Runs the condition embedder on one raw condition vector. The zero vector
// yields the null-condition embedding used by classifier-free guidance.
template <typename T>
std::vector<T> embed_condition(const DenoiserParams<T>& p, const std::vector<T>& raw) {
  const int want = p.cfg.cond_dim;
  if (static_cast<int>(raw.size()) != want)
    throw std::invalid_argument(
        "embed_condition: raw condition size " + std::to_string(raw.size()) +
        " does not match mode (want " + std::to_string(want) +
        (p.cfg.cond_mode == CondMode::ReturnScalar ? ", return_scalar)" : ", task_vector)"));
  Tensor<T> x({1, want});
  for (int i = 0; i < want; ++i) x.at2(0, i) = raw[static_cast<std::size_t>(i)];
  Tensor<T> h1 = dense_forward(x, p.tensors["cond_mlp.w1"], &p.tensors["cond_mlp.b1"]);
  h1.data = h1.data.unaryExpr([](T v) { return v * sigmoid(v); });
  Tensor<T> h2 = dense_forward(h1, p.tensors["cond_mlp.w2"], &p.tensors["cond_mlp.b2"]);
  return std::vector<T>(h2.data.data(), h2.data.data() + h2.numel());
}

// Immutable snapshot handle for the sampler.
template <typename T>
NoiseModel<T> make_noise_model(const DenoiserParams<T>& p, int state_dim) {
  NoiseModel<T> m;
  m.seq_len = p.cfg.seq_len;
  m.channels = p.cfg.channel_dim;
  m.state_dim = state_dim;
  m.predict = [params = p](const Tensor<T>& tau, const std::vector<int>& k, const Tensor<T>& cond,
                           const std::vector<char>& dropped) {
    return predict_noise(params, tau, k, cond, dropped);
  };
  return m;
}

}  // namespace cod
