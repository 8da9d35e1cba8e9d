#include <Eigen/Dense>
#include <cmath>

#include "cslab/microlm.hpp"

namespace cslab::lm {

namespace {

using Mat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const Mat>;
using RowVec = Eigen::Map<const Eigen::RowVectorXf>;

CMap as_mat(const Tensor<float>& t) {
  return CMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
RowVec as_row(const Tensor<float>& t) { return RowVec(t.data(), static_cast<Eigen::Index>(t.size())); }

Mat layer_norm_rows(const Mat& x, const Tensor<float>& gain, const Tensor<float>& bias) {
  constexpr float kEps = 1e-5f;
  Mat out(x.rows(), x.cols());
  const auto cols = x.cols();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    float mu = 0;
    for (Eigen::Index c = 0; c < cols; ++c) mu += x(r, c);
    mu /= static_cast<float>(cols);
    float var = 0;
    for (Eigen::Index c = 0; c < cols; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<float>(cols);
    const float rstd = 1.0f / std::sqrt(var + kEps);
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = (x(r, c) - mu) * rstd * gain[c] + bias[c];
  }
  return out;
}

}  // namespace

Decoder::Decoder(const LmParams<float>& params, std::size_t batch) : params_(params), batch_(batch) {
  params.cfg.validate();
  if (batch == 0) throw ValidationError("decoder: batch must be >= 1");
  const auto& cfg = params.cfg;
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    keys_.emplace_back(std::vector<std::size_t>{batch, cfg.ctx_len, cfg.d_model});
    values_.emplace_back(std::vector<std::size_t>{batch, cfg.ctx_len, cfg.d_model});
  }
  logits_ = Tensor<float>({batch, cfg.vocab});
}

const Tensor<float>& Decoder::step(std::span<const TokenId> tokens, const Intervention* intervention) {
  const auto& cfg = params_.cfg;
  if (tokens.size() != batch_) throw ValidationError("decoder: expected one token per sequence");
  if (pos_ >= cfg.ctx_len) throw ValidationError("decoder: context length exhausted");
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const std::size_t heads = cfg.n_heads, hd = cfg.d_model / heads;
  const float c = static_cast<float>(cfg.residual_scale);
  const bool scaled = cfg.residual_scale != 1.0;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(hd));

  Mat x(static_cast<Eigen::Index>(batch_), d);
  for (std::size_t b = 0; b < batch_; ++b) {
    const TokenId t = tokens[b];
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab) {
      throw std::out_of_range("decoder: token id " + std::to_string(t) + " outside vocab");
    }
    for (Eigen::Index k = 0; k < d; ++k) {
      const float v = params_.tok_emb.at(static_cast<std::size_t>(t), k) + params_.pos_emb.at(pos_, k);
      x(static_cast<Eigen::Index>(b), k) = scaled ? v * c : v;
    }
  }
  std::vector<float> scores(pos_ + 1);
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const BlockParams<float>& blk = params_.blocks[i];
    const Mat h = layer_norm_rows(x, blk.ln1_gain, blk.ln1_bias);
    Mat q = h * as_mat(blk.w_q);
    q.rowwise() += as_row(blk.b_q);
    const Mat k = h * as_mat(blk.w_k);
    Mat v = h * as_mat(blk.w_v);
    v.rowwise() += as_row(blk.b_v);
    Tensor<float>& kc = keys_[i];
    Tensor<float>& vc = values_[i];
    Mat attn(static_cast<Eigen::Index>(batch_), d);
    for (std::size_t b = 0; b < batch_; ++b) {
      const auto rb = static_cast<Eigen::Index>(b);
      float* krow = kc.data() + (b * cfg.ctx_len + pos_) * cfg.d_model;
      float* vrow = vc.data() + (b * cfg.ctx_len + pos_) * cfg.d_model;
      for (Eigen::Index e = 0; e < d; ++e) {
        krow[e] = k(rb, e);
        vrow[e] = v(rb, e);
      }
      for (std::size_t hh = 0; hh < heads; ++hh) {
        const std::size_t off = hh * hd;
        float mx = -INFINITY;
        for (std::size_t j = 0; j <= pos_; ++j) {
          const float* kj = kc.data() + (b * cfg.ctx_len + j) * cfg.d_model + off;
          float dot = 0;
          for (std::size_t e = 0; e < hd; ++e) dot += q(rb, static_cast<Eigen::Index>(off + e)) * kj[e];
          scores[j] = dot * inv_sqrt;
          mx = std::max(mx, scores[j]);
        }
        float total = 0;
        for (std::size_t j = 0; j <= pos_; ++j) total += (scores[j] = std::exp(scores[j] - mx));
        for (std::size_t e = 0; e < hd; ++e) attn(rb, static_cast<Eigen::Index>(off + e)) = 0;
        for (std::size_t j = 0; j <= pos_; ++j) {
          const float p = scores[j] / total;
          const float* vj = vc.data() + (b * cfg.ctx_len + j) * cfg.d_model + off;
          for (std::size_t e = 0; e < hd; ++e) attn(rb, static_cast<Eigen::Index>(off + e)) += p * vj[e];
        }
      }
    }
    Mat o = attn * as_mat(blk.w_out);
    o.rowwise() += as_row(blk.b_out);
    if (scaled) o *= c;
    x += o;
    const Mat h2 = layer_norm_rows(x, blk.ln2_gain, blk.ln2_bias);
    Mat ff = h2 * as_mat(blk.w_ff1);
    ff.rowwise() += as_row(blk.b_ff1);
    ff = ff.cwiseMax(0.0f);
    Mat f2 = ff * as_mat(blk.w_ff2);
    f2.rowwise() += as_row(blk.b_ff2);
    if (scaled) f2 *= c;
    x += f2;
    const std::size_t layer_index = cfg.n_layers - 1 - i;
    if (intervention != nullptr && intervention->edit && intervention->layer_index == layer_index &&
        pos_ >= intervention->first_position) {
      for (std::size_t b = 0; b < batch_; ++b) {
        intervention->edit(pos_, std::span<float>(x.row(static_cast<Eigen::Index>(b)).data(), cfg.d_model));
      }
    }
  }
  const Mat hf = layer_norm_rows(x, params_.lnf_gain, params_.lnf_bias);
  Eigen::Map<Mat> out(logits_.data(), static_cast<Eigen::Index>(batch_), static_cast<Eigen::Index>(cfg.vocab));
  out.noalias() = hf * as_mat(params_.w_unembed);
  out.rowwise() += as_row(params_.b_unembed);
  ++pos_;
  return logits_;
}

}  // namespace cslab::lm
