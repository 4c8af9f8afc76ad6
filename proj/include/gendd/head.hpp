// SPDX-License-Identifier: Apache-2.0
//
// Conditional noise-prediction head eps(y_m, m, id, c): an input projection
// into residual blocks whose layer norms are modulated (shift/scale/gate) by
// a conditioning vector, then a zero-initialized output projection so the
// prediction is exactly zero at step 0. The conditioning vector is the sum
// of a timestep embedding, a token-position embedding, and the projected
// student feature; classifier-free guidance replaces the latter with a
// learned null embedding.
//
// A flat variant (three plain linear layers, conditioning added to the first
// hidden state) is kept behind a config switch.
#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "gendd/nn/layers.hpp"
#include "gendd/nn/optimizer.hpp"

namespace gendd {

/// Interleaved sin/cos features over geometrically spaced frequencies.
/// dim must be even; injective over step ranges of practical size.
inline Vector timestep_embedding(int step, int dim, double max_period = 10000.0) {
  require(step >= 0, "timestep_embedding: step must be >= 0");
  require(dim >= 2 && dim % 2 == 0, "timestep_embedding: dim must be even and >= 2");
  const int half = dim / 2;
  Vector out(dim);
  for (int k = 0; k < half; ++k) {
    const double freq = std::exp(-std::log(max_period) * double(k) / double(half));
    const double angle = double(step) * freq;
    out[2 * k] = std::sin(angle);
    out[2 * k + 1] = std::cos(angle);
  }
  return out;
}

inline Matrix timestep_embedding(const IntVector& steps, int dim) {
  Matrix out(steps.size(), dim);
  for (Eigen::Index r = 0; r < steps.size(); ++r)
    out.row(r) = timestep_embedding(steps[r], dim).transpose();
  return out;
}

enum class HeadVariant { residual_blocks, flat_mlp };

struct HeadConfig {
  int token_dim = 64;
  int cond_dim = 0;        // d_s, student feature dimension
  int num_positions = 1;   // n
  int hidden_width = 256;
  int num_blocks = 3;
  HeadVariant variant = HeadVariant::residual_blocks;
};

/// Per-call forward cache consumed by backward().
struct HeadCache {
  Matrix sin_emb;                 // R x h
  Matrix y;                       // conditioning vector before SiLU
  Matrix sy;                      // silu(y)
  std::vector<unsigned char> use_null;
  IntVector ids;
  Matrix cond;                    // as passed (may be empty when all-null)

  struct BlockCache {
    Matrix x_in;
    nn::LayerNormCache ln;
    Matrix shift, scale, gate;
    Matrix hmod, h1, a1, h2;
  };
  std::vector<BlockCache> blocks;

  // residual variant final layer
  nn::LayerNormCache ln_final;
  Matrix scale_f, shift_f, xf;
  Matrix x_tokens;                // in_proj input

  // flat variant
  Matrix h0, a0, h1f, a1f;
};

class DiffusionHead {
 public:
  DiffusionHead() = default;

  explicit DiffusionHead(const HeadConfig& cfg) : cfg_(cfg) {
    require(cfg.token_dim >= 1 && cfg.cond_dim >= 1 && cfg.num_positions >= 1 &&
                cfg.hidden_width >= 2 && cfg.num_blocks >= 1,
            "head: all dimensions must be positive");
    require(cfg.hidden_width % 2 == 0, "head: hidden width must be even");
    const int h = cfg.hidden_width;
    in_proj_ = nn::Dense("head.in", cfg.token_dim, h);
    t_proj_ = nn::Dense("head.t", h, h);
    cond_proj_ = nn::Dense("head.cond", cfg.cond_dim, h);
    pos_emb_ = nn::Param("head.pos", cfg.num_positions, h);
    null_cond_ = nn::Param("head.null", 1, h);
    if (cfg.variant == HeadVariant::residual_blocks) {
      blocks_.resize(static_cast<size_t>(cfg.num_blocks));
      for (int b = 0; b < cfg.num_blocks; ++b) {
        auto tag = "head.b" + std::to_string(b);
        blocks_[static_cast<size_t>(b)] = {nn::Dense(tag + ".ada", h, 3 * h),
                                           nn::Dense(tag + ".fc1", h, h),
                                           nn::Dense(tag + ".fc2", h, h)};
      }
      ada_out_ = nn::Dense("head.ada_out", h, 2 * h);
    } else {
      flat_mid_ = nn::Dense("head.mid", h, h);
    }
    out_proj_ = nn::Dense("head.out", h, cfg.token_dim);
  }

  const HeadConfig& config() const { return cfg_; }

  void init(std::uint64_t seed) {
    Rng rng = Rng::substream(seed, {0x48454144ULL});
    in_proj_.init(rng);
    t_proj_.init(rng);
    cond_proj_.init(rng);
    nn::init_normal(pos_emb_, rng, 0.02);
    nn::init_normal(null_cond_, rng, 0.02);
    for (auto& b : blocks_) {
      b.ada.init(rng);
      b.fc1.init(rng);
      b.fc2.init(rng);
    }
    if (cfg_.variant == HeadVariant::residual_blocks) ada_out_.init(rng);
    if (cfg_.variant == HeadVariant::flat_mlp) flat_mid_.init(rng);
    // Zero output projection: eps predictions start at exactly zero.
    out_proj_.weight.value.setZero();
    out_proj_.bias.value.setZero();
  }

  nn::ParamRefs params() {
    nn::ParamRefs refs;
    auto push = [&refs](nn::Dense& d) {
      refs.push_back(&d.weight);
      refs.push_back(&d.bias);
    };
    push(in_proj_);
    push(t_proj_);
    push(cond_proj_);
    refs.push_back(&pos_emb_);
    refs.push_back(&null_cond_);
    for (auto& b : blocks_) {
      push(b.ada);
      push(b.fc1);
      push(b.fc2);
    }
    if (cfg_.variant == HeadVariant::residual_blocks) push(ada_out_);
    if (cfg_.variant == HeadVariant::flat_mlp) push(flat_mid_);
    push(out_proj_);
    return refs;
  }

  /// Batched noise prediction. One row per token instance; rows are fully
  /// independent. use_null[r] routes row r to the learned null embedding
  /// (cond may be empty if every row is null).
  Matrix forward(const Matrix& tokens, const IntVector& steps, const IntVector& ids,
                 const Matrix& cond, const std::vector<unsigned char>& use_null,
                 HeadCache* cache) const {
    const Eigen::Index rows = tokens.rows();
    const int h = cfg_.hidden_width;
    require(tokens.cols() == cfg_.token_dim, "head: token dimension mismatch");
    require(steps.size() == rows && ids.size() == rows, "head: per-row steps/ids required");
    require(static_cast<Eigen::Index>(use_null.size()) == rows, "head: null mask size mismatch");
    for (Eigen::Index r = 0; r < rows; ++r)
      require(ids[r] >= 0 && ids[r] < cfg_.num_positions, "head: position id out of range");

    Matrix sin_emb = timestep_embedding(steps, h);
    Matrix y = t_proj_.forward(sin_emb);
    for (Eigen::Index r = 0; r < rows; ++r) y.row(r) += pos_emb_.value.row(ids[r]);

    bool any_cond = false;
    for (auto u : use_null) any_cond |= (u == 0);
    Matrix cond_pre;
    if (any_cond) {
      require(cond.rows() == rows && cond.cols() == cfg_.cond_dim,
              "head: condition shape mismatch");
      cond_pre = cond_proj_.forward(cond);
    }
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (use_null[static_cast<size_t>(r)])
        y.row(r) += null_cond_.value.row(0);
      else
        y.row(r) += cond_pre.row(r);
    }

    Matrix sy = nn::silu(y);
    if (cache) {
      cache->sin_emb = sin_emb;
      cache->y = y;
      cache->sy = sy;
      cache->use_null = use_null;
      cache->ids = ids;
      cache->cond = cond;
      cache->blocks.clear();
    }

    if (cfg_.variant == HeadVariant::flat_mlp) {
      Matrix h0 = in_proj_.forward(tokens) + y;
      Matrix a0 = nn::silu(h0);
      Matrix h1 = flat_mid_.forward(a0);
      Matrix a1 = nn::silu(h1);
      if (cache) {
        cache->x_tokens = tokens;
        cache->h0 = h0;
        cache->a0 = a0;
        cache->h1f = h1;
        cache->a1f = a1;
      }
      return out_proj_.forward(a1);
    }

    Matrix x = in_proj_.forward(tokens);
    if (cache) cache->x_tokens = tokens;
    for (const auto& blk : blocks_) {
      HeadCache::BlockCache bc;
      bc.x_in = x;
      Matrix ln = nn::layer_norm(x, cache ? &bc.ln : nullptr);
      Matrix mod = blk.ada.forward(sy);
      bc.shift = mod.leftCols(h);
      bc.scale = mod.middleCols(h, h);
      bc.gate = mod.rightCols(h);
      Matrix hmod = ln.array() * (1.0 + bc.scale.array()) + bc.shift.array();
      Matrix h1 = blk.fc1.forward(hmod);
      Matrix a1 = nn::silu(h1);
      Matrix h2 = blk.fc2.forward(a1);
      x = x + (bc.gate.array() * h2.array()).matrix();
      if (cache) {
        bc.hmod = std::move(hmod);
        bc.h1 = std::move(h1);
        bc.a1 = std::move(a1);
        bc.h2 = std::move(h2);
        cache->blocks.push_back(std::move(bc));
      }
    }
    Matrix lnf = nn::layer_norm(x, cache ? &cache->ln_final : nullptr);
    Matrix modf = ada_out_.forward(sy);
    Matrix shift_f = modf.leftCols(h);
    Matrix scale_f = modf.rightCols(h);
    Matrix xf = lnf.array() * (1.0 + scale_f.array()) + shift_f.array();
    if (cache) {
      cache->shift_f = std::move(shift_f);
      cache->scale_f = std::move(scale_f);
      cache->xf = xf;
    }
    return out_proj_.forward(xf);
  }

  /// Accumulates parameter gradients and returns the gradient with respect
  /// to the condition rows (zero rows where the null embedding was used).
  Matrix backward(const HeadCache& cache, const Matrix& grad_eps) {
    const Eigen::Index rows = grad_eps.rows();
    const int h = cfg_.hidden_width;
    Matrix grad_sy = Matrix::Zero(rows, h);

    if (cfg_.variant == HeadVariant::flat_mlp) {
      Matrix ga1 = out_proj_.backward(cache.a1f, grad_eps);
      Matrix gh1 = (ga1.array() * nn::silu_grad(cache.h1f).array()).matrix();
      Matrix ga0 = flat_mid_.backward(cache.a0, gh1);
      Matrix gh0 = (ga0.array() * nn::silu_grad(cache.h0).array()).matrix();
      in_proj_.backward(cache.x_tokens, gh0);
      return backward_conditioning(cache, gh0);  // y enters h0 additively
    }

    Matrix gxf = out_proj_.backward(cache.xf, grad_eps);
    Matrix glnf = (gxf.array() * (1.0 + cache.scale_f.array())).matrix();
    Matrix gmodf(rows, 2 * h);
    gmodf.leftCols(h) = gxf;  // shift grad
    gmodf.rightCols(h) = (gxf.array() * cache.ln_final.normalized.array()).matrix();
    grad_sy += ada_out_.backward(cache.sy, gmodf);
    Matrix gx = nn::layer_norm_backward(cache.ln_final, glnf);

    for (size_t bi = blocks_.size(); bi-- > 0;) {
      auto& blk = blocks_[bi];
      const auto& bc = cache.blocks[bi];
      Matrix gh2 = (gx.array() * bc.gate.array()).matrix();
      Matrix ggate = (gx.array() * bc.h2.array()).matrix();
      Matrix ga1 = blk.fc2.backward(bc.a1, gh2);
      Matrix gh1 = (ga1.array() * nn::silu_grad(bc.h1).array()).matrix();
      Matrix ghmod = blk.fc1.backward(bc.hmod, gh1);
      Matrix gln = (ghmod.array() * (1.0 + bc.scale.array())).matrix();
      Matrix gmod(rows, 3 * h);
      gmod.leftCols(h) = ghmod;  // shift
      gmod.middleCols(h, h) = (ghmod.array() * bc.ln.normalized.array()).matrix();
      gmod.rightCols(h) = ggate;
      grad_sy += blk.ada.backward(cache.sy, gmod);
      gx += nn::layer_norm_backward(bc.ln, gln);
    }
    in_proj_.backward(cache.x_tokens, gx);
    return backward_conditioning(cache, grad_sy_to_y(cache, grad_sy));
  }

  nn::Dense& out_proj() { return out_proj_; }
  nn::Param& null_condition() { return null_cond_; }
  const nn::Param& null_condition() const { return null_cond_; }

 private:
  Matrix grad_sy_to_y(const HeadCache& cache, const Matrix& grad_sy) const {
    return (grad_sy.array() * nn::silu_grad(cache.y).array()).matrix();
  }

  /// Distributes grad_y over the three conditioning terms; returns the
  /// gradient with respect to the condition input.
  Matrix backward_conditioning(const HeadCache& cache, const Matrix& grad_y) {
    const Eigen::Index rows = grad_y.rows();
    t_proj_.backward(cache.sin_emb, grad_y);
    for (Eigen::Index r = 0; r < rows; ++r)
      pos_emb_.grad.row(cache.ids[r]) += grad_y.row(r);

    Matrix grad_cond_rows = grad_y;
    bool any_cond = false;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (cache.use_null[static_cast<size_t>(r)]) {
        null_cond_.grad.row(0) += grad_y.row(r);
        grad_cond_rows.row(r).setZero();
      } else {
        any_cond = true;
      }
    }
    if (!any_cond) return Matrix::Zero(rows, cfg_.cond_dim);
    return cond_proj_.backward(cache.cond, grad_cond_rows);
  }

  HeadConfig cfg_;
  nn::Dense in_proj_, t_proj_, cond_proj_;
  nn::Param pos_emb_, null_cond_;
  struct Block {
    nn::Dense ada, fc1, fc2;
  };
  std::vector<Block> blocks_;
  nn::Dense ada_out_;
  nn::Dense flat_mid_;
  nn::Dense out_proj_;
};

/// Convenience wrapper matching the "fresh head from dimensions" call shape.
inline DiffusionHead init_head(int token_dim, int cond_dim, int num_positions,
                               int hidden_width, std::uint64_t seed,
                               int num_blocks = 3,
                               HeadVariant variant = HeadVariant::residual_blocks) {
  HeadConfig cfg;
  cfg.token_dim = token_dim;
  cfg.cond_dim = cond_dim;
  cfg.num_positions = num_positions;
  cfg.hidden_width = hidden_width;
  cfg.num_blocks = num_blocks;
  cfg.variant = variant;
  DiffusionHead head(cfg);
  head.init(seed);
  return head;
}

/// Single-token prediction; NULL condition selected via std::nullopt.
inline Vector predict_eps(const DiffusionHead& head, const Vector& token, int step, int id,
                          const std::optional<Vector>& cond) {
  Matrix t(1, token.size());
  t.row(0) = token.transpose();
  IntVector m(1), ids(1);
  m[0] = step;
  ids[0] = id;
  Matrix c;
  std::vector<unsigned char> use_null{1};
  if (cond) {
    c = Matrix(1, cond->size());
    c.row(0) = cond->transpose();
    use_null[0] = 0;
  }
  return head.forward(t, m, ids, c, use_null, nullptr).row(0).transpose();
}

}  // namespace gendd
