#include "geoprompt/backbone.hpp"

#include <cmath>

namespace geoprompt {

template <typename Scalar>
Tokenizer<Scalar> Tokenizer<Scalar>::create(ParameterStore<Scalar>& store, const std::string& prefix,
                                            const BackboneConfig& cfg, std::uint64_t seed) {
  Tokenizer tok;
  tok.embed = Mlp<Scalar>::create(store, prefix + ".embed", 3, cfg.embed_hidden, cfg.dim, seed);
  tok.position = Mlp<Scalar>::create(store, prefix + ".pos", 3, cfg.pos_hidden, cfg.dim, seed);
  const std::string cls_name = prefix + ".cls";
  tok.cls = &store.add(cls_name, normal_tensor<Scalar>(Shape{1, cfg.dim}, 0.02, name_seed(seed, cls_name)));
  return tok;
}

template <typename Scalar>
TokenSet<Scalar> Tokenizer<Scalar>::operator()(Tape<Scalar>& t, const Var<Scalar>& cloud, Index n_patches,
                                               Index patch_size, std::uint64_t seed, bool with_position) const {
  const auto pos = cloud.value().matrix();
  if (pos.rows() < n_patches) {
    throw std::invalid_argument("tokenize: " + std::to_string(pos.rows()) + " points for " + std::to_string(n_patches) +
                                " patches");
  }
  const RowMatrix<Scalar> positions = pos;
  const auto centers = farthest_point_sample<Scalar>(positions, n_patches, seed);
  t.note_selection(centers);
  const auto idx = k_nearest_centers<Scalar>(positions, centers, patch_size);
  t.note_selection(idx.flat_neighbors());

  TokenSet<Scalar> ts;
  auto groups = reshape(group_relative(cloud, idx), Shape{n_patches * patch_size, 3});
  Var<Scalar> tokens = max_reduce(embed(t, groups), patch_size);
  Var<Scalar> center_pos = gather(cloud, centers);
  if (with_position) tokens = add(tokens, position(t, center_pos));
  ts.tokens = concat({t.parameter(*cls), tokens}, 0);
  ts.centers = center_pos.value().matrix();
  ts.has_cls = true;
  return ts;
}

template <typename Scalar>
BlockParams<Scalar> BlockParams<Scalar>::create(ParameterStore<Scalar>& store, const std::string& prefix,
                                                const BackboneConfig& cfg, std::uint64_t seed) {
  BlockParams b;
  const Index d = cfg.dim;
  b.norm1 = LayerNorm<Scalar>::create(store, prefix + ".norm1", d);
  b.q = Linear<Scalar>::create(store, prefix + ".attn.q", d, d, seed, Init::xavier, false);
  b.k = Linear<Scalar>::create(store, prefix + ".attn.k", d, d, seed, Init::xavier, false);
  b.v = Linear<Scalar>::create(store, prefix + ".attn.v", d, d, seed, Init::xavier, false);
  b.o = Linear<Scalar>::create(store, prefix + ".attn.o", d, d, seed);
  b.norm2 = LayerNorm<Scalar>::create(store, prefix + ".norm2", d);
  b.ffn = Mlp<Scalar>::create(store, prefix + ".ffn", d, d * cfg.mlp_ratio, d, seed);
  b.heads = cfg.heads;
  return b;
}

template <typename Scalar>
AttentionResult<Scalar> attention_block(Tape<Scalar>& t, const Var<Scalar>& h, const Var<Scalar>& p,
                                        const BlockParams<Scalar>& params) {
  const bool prompted = p.valid() && p.value().rows() > 0;
  const Index lh = h.value().rows();
  Var<Scalar> x = prompted ? concat({h, p}, 0) : h;
  const Index d = x.value().cols();
  if (d % params.heads != 0) throw std::invalid_argument("attention_block: heads must divide width");
  const Index dh = d / params.heads;
  const Index keys = x.value().rows();

  Var<Scalar> a = params.norm1(t, x);
  Var<Scalar> q = params.q(t, a);
  Var<Scalar> k = params.k(t, a);
  Var<Scalar> v = params.v(t, a);
  const Scalar inv = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  AttentionResult<Scalar> out;
  out.row0_attention.assign(static_cast<std::size_t>(keys), Scalar(0));
  std::vector<Var<Scalar>> heads;
  for (Index hd = 0; hd < params.heads; ++hd) {
    auto qh = slice_cols(q, hd * dh, dh);
    auto kh = slice_cols(k, hd * dh, dh);
    auto vh = slice_cols(v, hd * dh, dh);
    auto w = softmax(scale(matmul(qh, transpose(kh)), inv));
    const auto row0 = w.value().matrix().row(0);
    for (Index j = 0; j < keys; ++j) out.row0_attention[static_cast<std::size_t>(j)] += row0(j) / static_cast<Scalar>(params.heads);
    heads.push_back(matmul(w, vh));
  }
  Var<Scalar> attn = heads.size() == 1 ? heads.front() : concat(heads, -1);
  x = add(x, params.o(t, attn));
  x = add(x, params.ffn(t, params.norm2(t, x)));
  if (!prompted) {
    out.h = x;
    return out;
  }
  out.h = slice_rows(x, 0, lh);
  out.p = slice_rows(x, lh, keys - lh);
  return out;
}

template <typename Scalar>
Adapter<Scalar> create_adapter(ParameterStore<Scalar>& store, const std::string& prefix, Index dim, Index bottleneck,
                               std::uint64_t seed, bool zero_up) {
  return Adapter<Scalar>{Linear<Scalar>::create(store, prefix + ".down", dim, bottleneck, seed),
                         Linear<Scalar>::create(store, prefix + ".up", bottleneck, dim, seed,
                                                zero_up ? Init::zeros : Init::xavier)};
}

template <typename Scalar>
Var<Scalar> adapter_apply(Tape<Scalar>& t, const Var<Scalar>& h, const Var<Scalar>& f, Scalar beta,
                          const Adapter<Scalar>& params) {
  Var<Scalar> in = h;
  if (f.valid()) {
    if (f.value().size() != h.value().cols()) {
      throw std::invalid_argument("adapter_apply: token width " + std::to_string(h.value().cols()) +
                                  " vs shape feature " + shape_string(f.shape()));
    }
    in = add(h, scale(f, beta));
  }
  return add(h, params.up(t, gelu(params.down(t, in))));
}

namespace {

RowMatrix<double> row_softmax(const RowMatrix<double>& s) {
  RowMatrix<double> out(s.rows(), s.cols());
  for (Index r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    out.row(r) = (s.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

PromptAttentionSplit decompose_prompt_attention(const RowMatrix<double>& h, const RowMatrix<double>& p,
                                                const RowMatrix<double>& wq, const RowMatrix<double>& wk,
                                                const RowMatrix<double>& wv) {
  const Index d = h.cols();
  if (p.rows() > 0 && p.cols() != d) throw std::invalid_argument("decompose_prompt_attention: prompt width mismatch");
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  const RowMatrix<double> q = h * wq;
  const RowMatrix<double> kh = h * wk;
  const RowMatrix<double> vh = h * wv;

  const RowMatrix<double> o = row_softmax(q * kh.transpose() * inv) * vh;

  PromptAttentionSplit split;
  if (p.rows() == 0) {
    split.lhs = o;
    split.rhs = o;
    return split;
  }
  RowMatrix<double> keys(p.rows() + h.rows(), d), values(p.rows() + h.rows(), d);
  keys << p * wk, kh;
  values << p * wv, vh;
  const RowMatrix<double> a = row_softmax(q * keys.transpose() * inv);
  split.lhs = a * values;

  const RowMatrix<double> a_prompt = a.leftCols(p.rows());
  const Vector<double> mass = a_prompt.rowwise().sum();
  split.rhs = a_prompt * (p * wv);
  split.rhs += (1.0 - mass.array()).matrix().asDiagonal() * o;
  split.max_abs_diff = (split.lhs - split.rhs).cwiseAbs().maxCoeff();
  return split;
}

#define GEOPROMPT_INSTANTIATE_BACKBONE(S)                                                                      \
  template struct Tokenizer<S>;                                                                                \
  template struct BlockParams<S>;                                                                              \
  template AttentionResult<S> attention_block<S>(Tape<S>&, const Var<S>&, const Var<S>&, const BlockParams<S>&); \
  template Adapter<S> create_adapter<S>(ParameterStore<S>&, const std::string&, Index, Index, std::uint64_t, bool); \
  template Var<S> adapter_apply<S>(Tape<S>&, const Var<S>&, const Var<S>&, S, const Adapter<S>&);

GEOPROMPT_INSTANTIATE_BACKBONE(float)
GEOPROMPT_INSTANTIATE_BACKBONE(double)

}  // namespace geoprompt
