#pragma once

// Template members of LmParams.

namespace cslab::lm {

template <typename T>
template <typename F>
void LmParams<T>::for_each(F&& f) {
  f(std::string("tok_emb"), tok_emb);
  f(std::string("pos_emb"), pos_emb);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    auto& b = blocks[i];
    f(p + "ln1.gain", b.ln1_gain);
    f(p + "ln1.bias", b.ln1_bias);
    f(p + "attn.w_q", b.w_q);
    f(p + "attn.b_q", b.b_q);
    f(p + "attn.w_k", b.w_k);
    f(p + "attn.w_v", b.w_v);
    f(p + "attn.b_v", b.b_v);
    f(p + "attn.w_out", b.w_out);
    f(p + "attn.b_out", b.b_out);
    f(p + "ln2.gain", b.ln2_gain);
    f(p + "ln2.bias", b.ln2_bias);
    f(p + "mlp.w_ff1", b.w_ff1);
    f(p + "mlp.b_ff1", b.b_ff1);
    f(p + "mlp.w_ff2", b.w_ff2);
    f(p + "mlp.b_ff2", b.b_ff2);
  }
  f(std::string("lnf.gain"), lnf_gain);
  f(std::string("lnf.bias"), lnf_bias);
  f(std::string("unembed.w"), w_unembed);
  f(std::string("unembed.b"), b_unembed);
}

template <typename T>
template <typename F>
void LmParams<T>::for_each(F&& f) const {
  const_cast<LmParams<T>*>(this)->for_each(
      [&f](const std::string& name, Tensor<T>& t) { f(name, static_cast<const Tensor<T>&>(t)); });
}

template <typename T>
template <typename U>
LmParams<U> LmParams<T>::cast() const {
  LmParams<U> out;
  out.cfg = cfg;
  out.blocks.resize(blocks.size());
  std::vector<const Tensor<T>*> src;
  for_each([&](const std::string&, const Tensor<T>& t) { src.push_back(&t); });
  std::size_t k = 0;
  out.for_each([&](const std::string&, Tensor<U>& t) { t = src[k++]->template cast<U>(); });
  return out;
}

}  // namespace cslab::lm
