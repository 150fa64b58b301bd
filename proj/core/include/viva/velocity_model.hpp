#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "viva/model_config.hpp"
#include "viva/nn.hpp"

namespace viva {

// Bidirectional diffusion-transformer velocity network over the 7-frame latent
// sequence.
//
// Each frame is cut into square token patches. A token's input embedding is
//   W_in * patch + b_in + frame_embed[f] + pos_embed[p] + time_mlp(sin_embed(tau_f))
// where tau_f is 0 for conditioning frames and the flow time for target
// frames. L pre-norm blocks with full attention across all tokens follow, then
// a final LayerNorm and a linear head back to patch space. The network
// predicts a velocity for every frame; callers read only the targets.
//
// Blocks are DiT-style adaLN-Zero: each token's frame time vector c yields a
// shift, scale and residual gate for both sub-layers,
//   h = LN(x) * (1 + scale(c)) + shift(c),   x += gate(c) * sublayer(h),
// and the final LayerNorm gets its own shift/scale. All modulation weights
// start at zero, so every block is the identity at initialisation.
//
// Forward/backward operate on a batch: `tokens` stacks B sequences of
// sequence_tokens() rows each, `frame_times` is B x 7.
template <typename Scalar>
class VelocityModel {
 public:
  using Matrix = nn::Matrix<Scalar>;
  using Vector = nn::Vector<Scalar>;

  struct BlockActivations {
    Matrix mod;  // (B*7) x 6w: shift1, scale1, gate1, shift2, scale2, gate2
    nn::LayerNormCache<Scalar> ln1_cache;
    Matrix ln1;
    Matrix h1;
    Matrix qkv;
    std::vector<Matrix> probs;  // [batch * heads] N x N
    Matrix attended;
    Matrix projected;
    Matrix mid;
    nn::LayerNormCache<Scalar> ln2_cache;
    Matrix ln2;
    Matrix h2;
    Matrix hidden_pre;
    Matrix hidden;
    Matrix mlp_out;
  };

  struct Activations {
    int batch = 0;
    Matrix tokens;
    Matrix time_sin;     // (B*7) x width
    Matrix time_pre;     // (B*7) x width
    Matrix time_hidden;  // (B*7) x width
    Matrix time_out;     // c, (B*7) x width
    Matrix time_act;     // SiLU(c), input of every modulation layer
    std::vector<BlockActivations> blocks;
    Matrix final_input;
    nn::LayerNormCache<Scalar> final_cache;
    Matrix final_norm;
    Matrix final_mod;  // (B*7) x 2w: shift, scale
    Matrix final_h;
    Matrix output;
  };

  explicit VelocityModel(const ModelConfig& config, std::uint64_t init_seed = 0) : config_(config) {
    config_.validate();
    build_layout();
    params_.assign(layout_.total(), Scalar(0));
    initialize(init_seed);
  }

  const ModelConfig& config() const { return config_; }
  const nn::ParamLayout& layout() const { return layout_; }
  std::span<Scalar> parameters() { return params_; }
  std::span<const Scalar> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  const Matrix& forward(const Matrix& tokens, const Matrix& frame_times, Activations& acts) const {
    const int n = config_.sequence_tokens();
    const int tpf = config_.tokens_per_frame();
    const int w = config_.width;
    if (tokens.cols() != config_.token_dim() || tokens.rows() % n != 0 || tokens.rows() == 0) {
      throw GeometryError("token matrix shape does not match the model");
    }
    const int batch = static_cast<int>(tokens.rows() / n);
    if (frame_times.rows() != batch || frame_times.cols() != kSequenceFrames) {
      throw GeometryError("frame_times must be batch x 7");
    }
    acts.batch = batch;
    acts.tokens = tokens;

    // Flow-time conditioning, one vector per (sample, frame).
    acts.time_sin.resize(batch * kSequenceFrames, w);
    for (int r = 0; r < batch * kSequenceFrames; ++r) {
      nn::timestep_embedding<Scalar>(frame_times(r / kSequenceFrames, r % kSequenceFrames), acts.time_sin.row(r));
    }
    nn::linear_forward<Scalar>(acts.time_sin, p(time_w1_), p(time_b1_), acts.time_pre);
    acts.time_hidden = acts.time_pre.unaryExpr([](Scalar x) { return nn::silu(x); });
    nn::linear_forward<Scalar>(acts.time_hidden, p(time_w2_), p(time_b2_), acts.time_out);
    const Matrix& time_out = acts.time_out;
    acts.time_act = time_out.unaryExpr([](Scalar x) { return nn::silu(x); });

    Matrix x;
    nn::linear_forward<Scalar>(tokens, p(embed_w_), p(embed_b_), x);
    const auto frame_emb = p(frame_embed_);
    const auto pos_emb = p(pos_embed_);
    for (int b = 0; b < batch; ++b) {
      for (int f = 0; f < kSequenceFrames; ++f) {
        const auto extra = frame_emb.row(f) + time_out.row(b * kSequenceFrames + f);
        for (int t = 0; t < tpf; ++t) x.row(b * n + f * tpf + t) += extra + pos_emb.row(t);
      }
    }

    acts.blocks.resize(config_.layers);
    for (int l = 0; l < config_.layers; ++l) x = block_forward(l, x, acts.time_act, acts.blocks[l], batch);

    acts.final_input = std::move(x);
    nn::layernorm_forward<Scalar>(acts.final_input, p(final_gamma_), p(final_beta_), acts.final_norm,
                                  acts.final_cache);
    nn::linear_forward<Scalar>(acts.time_act, p(final_mod_w_), p(final_mod_b_), acts.final_mod);
    modulate(acts.final_norm, acts.final_mod, 0, acts.final_h);
    nn::linear_forward<Scalar>(acts.final_h, p(head_w_), p(head_b_), acts.output);
    return acts.output;
  }

  // Accumulates dLoss/dparams into `grad` (same layout as parameters()).
  void backward(const Activations& acts, const Matrix& d_output, std::span<Scalar> grad) const {
    if (grad.size() != params_.size()) throw ValidationError("gradient buffer has the wrong size");
    const int n = config_.sequence_tokens();
    const int tpf = config_.tokens_per_frame();
    const int batch = acts.batch;

    Matrix d_time_act = Matrix::Zero(batch * kSequenceFrames, config_.width);
    Matrix dh;
    nn::linear_backward<Scalar>(acts.final_h, p(head_w_), d_output, g(grad, head_w_), g(grad, head_b_), &dh);
    Matrix d_final_mod = Matrix::Zero(acts.final_mod.rows(), acts.final_mod.cols());
    Matrix dx;
    modulate_backward(acts.final_norm, acts.final_mod, 0, dh, dx, d_final_mod);
    nn::linear_backward<Scalar>(acts.time_act, p(final_mod_w_), d_final_mod, g(grad, final_mod_w_),
                                g(grad, final_mod_b_), &dh);
    d_time_act += dh;
    Matrix d_in;
    nn::layernorm_backward<Scalar>(acts.final_cache, p(final_gamma_), dx, g(grad, final_gamma_),
                                   g(grad, final_beta_), d_in);
    for (int l = config_.layers - 1; l >= 0; --l) {
      d_in = block_backward(l, acts.blocks[l], acts.time_act, d_in, grad, batch, d_time_act);
    }

    // Embedding sums.
    auto d_frame = g(grad, frame_embed_);
    auto d_pos = g(grad, pos_embed_);
    Matrix d_time = d_time_act.binaryExpr(acts.time_out, [](Scalar d, Scalar x) { return d * nn::silu_grad(x); });
    for (int b = 0; b < batch; ++b) {
      for (int f = 0; f < kSequenceFrames; ++f) {
        for (int t = 0; t < tpf; ++t) {
          const auto row = d_in.row(b * n + f * tpf + t);
          d_frame.row(f) += row;
          d_pos.row(t) += row;
          d_time.row(b * kSequenceFrames + f) += row;
        }
      }
    }
    nn::linear_backward<Scalar>(acts.tokens, p(embed_w_), d_in, g(grad, embed_w_), g(grad, embed_b_), nullptr);

    Matrix d_hidden;
    nn::linear_backward<Scalar>(acts.time_hidden, p(time_w2_), d_time, g(grad, time_w2_), g(grad, time_b2_),
                                &d_hidden);
    const Matrix d_pre = d_hidden.binaryExpr(acts.time_pre, [](Scalar d, Scalar x) { return d * nn::silu_grad(x); });
    nn::linear_backward<Scalar>(acts.time_sin, p(time_w1_), d_pre, g(grad, time_w1_), g(grad, time_b1_), nullptr);
  }

 private:
  struct BlockIds {
    std::size_t ln1_gamma, ln1_beta, qkv_w, qkv_b, out_w, out_b, ln2_gamma, ln2_beta, fc1_w, fc1_b, fc2_w, fc2_b;
    std::size_t mod_w, mod_b;
  };

  // Row of the (B*7)-row conditioning matrices that token row i belongs to.
  int frame_row(Eigen::Index i) const {
    const int n = config_.sequence_tokens();
    const int b = static_cast<int>(i) / n;
    return b * kSequenceFrames + (static_cast<int>(i) % n) / config_.tokens_per_frame();
  }

  // out = x * (1 + scale) + shift with shift/scale read from columns
  // [offset, offset+w) and [offset+w, offset+2w) of mod.
  void modulate(const Matrix& x, const Matrix& mod, int offset, Matrix& out) const {
    const int w = config_.width;
    out.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int r = frame_row(i);
      out.row(i) = (x.row(i).array() * (Scalar(1) + mod.row(r).segment(offset + w, w).array()) +
                    mod.row(r).segment(offset, w).array())
                       .matrix();
    }
  }

  void modulate_backward(const Matrix& x, const Matrix& mod, int offset, const Matrix& d_out, Matrix& d_x,
                         Matrix& d_mod) const {
    const int w = config_.width;
    d_x.resize(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int r = frame_row(i);
      d_x.row(i) = (d_out.row(i).array() * (Scalar(1) + mod.row(r).segment(offset + w, w).array())).matrix();
      d_mod.row(r).segment(offset, w) += d_out.row(i);
      d_mod.row(r).segment(offset + w, w) += (d_out.row(i).array() * x.row(i).array()).matrix();
    }
  }

  // x + gate * y with the gate in columns [offset, offset+w) of mod.
  void gated_add(Matrix& x, const Matrix& y, const Matrix& mod, int offset) const {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      x.row(i) += (y.row(i).array() * mod.row(frame_row(i)).segment(offset, config_.width).array()).matrix();
    }
  }

  void gated_add_backward(const Matrix& y, const Matrix& mod, int offset, const Matrix& d_out, Matrix& d_y,
                          Matrix& d_mod) const {
    const int w = config_.width;
    d_y.resize(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const int r = frame_row(i);
      d_y.row(i) = (d_out.row(i).array() * mod.row(r).segment(offset, w).array()).matrix();
      d_mod.row(r).segment(offset, w) += (d_out.row(i).array() * y.row(i).array()).matrix();
    }
  }

  void build_layout() {
    const int w = config_.width;
    const int d = config_.token_dim();
    const int m = config_.mlp_width();
    embed_w_ = layout_.add("embed.weight", d, w);
    embed_b_ = layout_.add("embed.bias", 1, w);
    frame_embed_ = layout_.add("embed.frame", kSequenceFrames, w);
    pos_embed_ = layout_.add("embed.position", config_.tokens_per_frame(), w);
    time_w1_ = layout_.add("time.fc1.weight", w, w);
    time_b1_ = layout_.add("time.fc1.bias", 1, w);
    time_w2_ = layout_.add("time.fc2.weight", w, w);
    time_b2_ = layout_.add("time.fc2.bias", 1, w);
    for (int l = 0; l < config_.layers; ++l) {
      const std::string pre = "blocks." + std::to_string(l) + ".";
      BlockIds ids{};
      ids.ln1_gamma = layout_.add(pre + "ln1.gamma", 1, w);
      ids.ln1_beta = layout_.add(pre + "ln1.beta", 1, w);
      ids.qkv_w = layout_.add(pre + "attn.qkv.weight", w, 3 * w);
      ids.qkv_b = layout_.add(pre + "attn.qkv.bias", 1, 3 * w);
      ids.out_w = layout_.add(pre + "attn.out.weight", w, w);
      ids.out_b = layout_.add(pre + "attn.out.bias", 1, w);
      ids.ln2_gamma = layout_.add(pre + "ln2.gamma", 1, w);
      ids.ln2_beta = layout_.add(pre + "ln2.beta", 1, w);
      ids.fc1_w = layout_.add(pre + "mlp.fc1.weight", w, m);
      ids.fc1_b = layout_.add(pre + "mlp.fc1.bias", 1, m);
      ids.fc2_w = layout_.add(pre + "mlp.fc2.weight", m, w);
      ids.fc2_b = layout_.add(pre + "mlp.fc2.bias", 1, w);
      ids.mod_w = layout_.add(pre + "adaln.weight", w, 6 * w);
      ids.mod_b = layout_.add(pre + "adaln.bias", 1, 6 * w);
      blocks_.push_back(ids);
    }
    final_gamma_ = layout_.add("final.gamma", 1, w);
    final_beta_ = layout_.add("final.beta", 1, w);
    final_mod_w_ = layout_.add("final.adaln.weight", w, 2 * w);
    final_mod_b_ = layout_.add("final.adaln.bias", 1, 2 * w);
    head_w_ = layout_.add("head.weight", w, d);
    head_b_ = layout_.add("head.bias", 1, d);
  }

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    std::span<Scalar> flat(params_);
    const double w = config_.width;
    const double depth_scale = 1.0 / std::sqrt(2.0 * std::max(1, config_.layers));
    nn::init_normal(flat, layout_[embed_w_], 1.0 / std::sqrt(static_cast<double>(config_.token_dim())), rng);
    nn::init_normal(flat, layout_[frame_embed_], 0.1, rng);
    nn::init_normal(flat, layout_[pos_embed_], 0.1, rng);
    nn::init_normal(flat, layout_[time_w1_], 1.0 / std::sqrt(w), rng);
    nn::init_normal(flat, layout_[time_w2_], 1.0 / std::sqrt(w), rng);
    for (const auto& ids : blocks_) {
      nn::init_constant(flat, layout_[ids.ln1_gamma], 1.0);
      nn::init_constant(flat, layout_[ids.ln2_gamma], 1.0);
      nn::init_normal(flat, layout_[ids.qkv_w], 1.0 / std::sqrt(w), rng);
      nn::init_normal(flat, layout_[ids.out_w], depth_scale / std::sqrt(w), rng);
      nn::init_normal(flat, layout_[ids.fc1_w], 1.0 / std::sqrt(w), rng);
      nn::init_normal(flat, layout_[ids.fc2_w], depth_scale / std::sqrt(static_cast<double>(config_.mlp_width())),
                      rng);
    }
    nn::init_constant(flat, layout_[final_gamma_], 1.0);
    nn::init_normal(flat, layout_[head_w_], 0.02, rng);
  }

  nn::ConstMatrixMap<Scalar> p(std::size_t id) const {
    return nn::view(std::span<const Scalar>(params_), layout_[id]);
  }
  nn::MatrixMap<Scalar> g(std::span<Scalar> grad, std::size_t id) const { return nn::view(grad, layout_[id]); }

  Matrix block_forward(int l, const Matrix& x, const Matrix& time_act, BlockActivations& a, int batch) const {
    const BlockIds& ids = blocks_[l];
    const int n = config_.sequence_tokens();
    const int w = config_.width;
    const int heads = config_.heads;
    const int dh = w / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

    nn::linear_forward<Scalar>(time_act, p(ids.mod_w), p(ids.mod_b), a.mod);
    nn::layernorm_forward<Scalar>(x, p(ids.ln1_gamma), p(ids.ln1_beta), a.ln1, a.ln1_cache);
    modulate(a.ln1, a.mod, 0, a.h1);
    nn::linear_forward<Scalar>(a.h1, p(ids.qkv_w), p(ids.qkv_b), a.qkv);
    a.attended.resize(x.rows(), w);
    a.probs.resize(static_cast<std::size_t>(batch) * heads);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto q = a.qkv.block(b * n, h * dh, n, dh);
        const auto k = a.qkv.block(b * n, w + h * dh, n, dh);
        const auto v = a.qkv.block(b * n, 2 * w + h * dh, n, dh);
        Matrix& probs = a.probs[static_cast<std::size_t>(b) * heads + h];
        probs.resize(n, n);
        probs.noalias() = q * k.transpose();
        probs *= scale;
        nn::softmax_rows(probs);
        a.attended.block(b * n, h * dh, n, dh).noalias() = probs * v;
      }
    }
    nn::linear_forward<Scalar>(a.attended, p(ids.out_w), p(ids.out_b), a.projected);
    a.mid = x;
    gated_add(a.mid, a.projected, a.mod, 2 * w);

    nn::layernorm_forward<Scalar>(a.mid, p(ids.ln2_gamma), p(ids.ln2_beta), a.ln2, a.ln2_cache);
    modulate(a.ln2, a.mod, 3 * w, a.h2);
    nn::linear_forward<Scalar>(a.h2, p(ids.fc1_w), p(ids.fc1_b), a.hidden_pre);
    a.hidden = a.hidden_pre.unaryExpr([](Scalar v) { return nn::gelu(v); });
    nn::linear_forward<Scalar>(a.hidden, p(ids.fc2_w), p(ids.fc2_b), a.mlp_out);
    Matrix out = a.mid;
    gated_add(out, a.mlp_out, a.mod, 5 * w);
    return out;
  }

  Matrix block_backward(int l, const BlockActivations& a, const Matrix& time_act, const Matrix& d_out,
                        std::span<Scalar> grad, int batch, Matrix& d_time_act) const {
    const BlockIds& ids = blocks_[l];
    const int n = config_.sequence_tokens();
    const int w = config_.width;
    const int heads = config_.heads;
    const int dh = w / heads;
    const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    Matrix d_mod = Matrix::Zero(a.mod.rows(), a.mod.cols());

    // MLP branch.
    Matrix d_mlp_out;
    gated_add_backward(a.mlp_out, a.mod, 5 * w, d_out, d_mlp_out, d_mod);
    Matrix d_hidden;
    nn::linear_backward<Scalar>(a.hidden, p(ids.fc2_w), d_mlp_out, g(grad, ids.fc2_w), g(grad, ids.fc2_b),
                                &d_hidden);
    const Matrix d_pre = d_hidden.binaryExpr(a.hidden_pre, [](Scalar d, Scalar x) { return d * nn::gelu_grad(x); });
    Matrix d_h2;
    nn::linear_backward<Scalar>(a.h2, p(ids.fc1_w), d_pre, g(grad, ids.fc1_w), g(grad, ids.fc1_b), &d_h2);
    Matrix d_ln2;
    modulate_backward(a.ln2, a.mod, 3 * w, d_h2, d_ln2, d_mod);
    Matrix d_mid;
    nn::layernorm_backward<Scalar>(a.ln2_cache, p(ids.ln2_gamma), d_ln2, g(grad, ids.ln2_gamma),
                                   g(grad, ids.ln2_beta), d_mid);
    d_mid += d_out;

    // Attention branch.
    Matrix d_projected;
    gated_add_backward(a.projected, a.mod, 2 * w, d_mid, d_projected, d_mod);
    Matrix d_attended;
    nn::linear_backward<Scalar>(a.attended, p(ids.out_w), d_projected, g(grad, ids.out_w), g(grad, ids.out_b),
                                &d_attended);
    Matrix d_qkv(a.qkv.rows(), a.qkv.cols());
    Matrix d_probs(n, n);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads; ++h) {
        const Matrix& probs = a.probs[static_cast<std::size_t>(b) * heads + h];
        const auto q = a.qkv.block(b * n, h * dh, n, dh);
        const auto k = a.qkv.block(b * n, w + h * dh, n, dh);
        const auto v = a.qkv.block(b * n, 2 * w + h * dh, n, dh);
        const auto d_o = d_attended.block(b * n, h * dh, n, dh);
        d_qkv.block(b * n, 2 * w + h * dh, n, dh).noalias() = probs.transpose() * d_o;
        d_probs.noalias() = d_o * v.transpose();
        const Vector row_dot = (d_probs.array() * probs.array()).rowwise().sum();
        Matrix d_scores = (probs.array() * (d_probs.array().colwise() - row_dot.array())).matrix();
        d_scores *= scale;
        d_qkv.block(b * n, h * dh, n, dh).noalias() = d_scores * k;
        d_qkv.block(b * n, w + h * dh, n, dh).noalias() = d_scores.transpose() * q;
      }
    }
    Matrix d_h1;
    nn::linear_backward<Scalar>(a.h1, p(ids.qkv_w), d_qkv, g(grad, ids.qkv_w), g(grad, ids.qkv_b), &d_h1);
    Matrix d_ln1;
    modulate_backward(a.ln1, a.mod, 0, d_h1, d_ln1, d_mod);
    Matrix d_in;
    nn::layernorm_backward<Scalar>(a.ln1_cache, p(ids.ln1_gamma), d_ln1, g(grad, ids.ln1_gamma),
                                   g(grad, ids.ln1_beta), d_in);
    d_in += d_mid;

    Matrix d_act;
    nn::linear_backward<Scalar>(time_act, p(ids.mod_w), d_mod, g(grad, ids.mod_w), g(grad, ids.mod_b), &d_act);
    d_time_act += d_act;
    return d_in;
  }

  ModelConfig config_;
  nn::ParamLayout layout_;
  nn::AlignedVector<Scalar> params_;
  std::size_t embed_w_ = 0, embed_b_ = 0, frame_embed_ = 0, pos_embed_ = 0;
  std::size_t time_w1_ = 0, time_b1_ = 0, time_w2_ = 0, time_b2_ = 0;
  std::vector<BlockIds> blocks_;
  std::size_t final_gamma_ = 0, final_beta_ = 0, final_mod_w_ = 0, final_mod_b_ = 0, head_w_ = 0, head_b_ = 0;
};

}  // namespace viva
