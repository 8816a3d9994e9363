#include "cadm/model.hpp"

#include <cmath>
#include <mutex>
#include <unordered_map>

#include "cadm/errors.hpp"
#include "cadm/random.hpp"

namespace cadm {

namespace {
constexpr double kLnEps = 1e-5;

int ffn_dim(const EncoderConfig& cfg) { return 2 * cfg.repr_dim; }

std::unordered_map<std::string, std::shared_ptr<ExternalEncoder>>& adapter_registry() {
  static std::unordered_map<std::string, std::shared_ptr<ExternalEncoder>> registry;
  return registry;
}
std::mutex& adapter_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

const char* encoder_arch_name(EncoderArch arch) {
  switch (arch) {
    case EncoderArch::BagOfEmbeddings: return "bag_of_embeddings";
    case EncoderArch::TinyTransformer: return "tiny_transformer";
    case EncoderArch::ExternalAdapter: return "external_adapter";
  }
  return "?";
}

EncoderArch encoder_arch_from_name(const std::string& name) {
  if (name == "bag_of_embeddings") return EncoderArch::BagOfEmbeddings;
  if (name == "tiny_transformer") return EncoderArch::TinyTransformer;
  if (name == "external_adapter") return EncoderArch::ExternalAdapter;
  throw ConfigError("unknown encoder architecture '" + name + "'");
}

void EncoderConfig::validate() const {
  if (repr_dim < 2) {
    throw ConfigError("repr_dim must be >= 2, got " + std::to_string(repr_dim));
  }
  if (vocab_size < 3) {
    throw ConfigError("vocab_size must be >= 3 (pad + unk + at least one word)");
  }
  if (max_sequence_length < 1) {
    throw ConfigError("max_sequence_length must be >= 1");
  }
  if (disc_hidden < 1) {
    throw ConfigError("disc_hidden must be >= 1");
  }
  if (architecture == EncoderArch::TinyTransformer) {
    if (depth < 1 || heads < 1) {
      throw ConfigError("transformer depth and heads must be >= 1");
    }
    if (repr_dim % heads != 0) {
      throw ConfigError("repr_dim must be divisible by heads");
    }
  }
  if (architecture == EncoderArch::ExternalAdapter && adapter.empty()) {
    throw ConfigError("external_adapter requires an adapter name");
  }
}

void register_external_encoder(const std::string& name,
                               std::shared_ptr<ExternalEncoder> encoder) {
  std::lock_guard<std::mutex> lock(adapter_mutex());
  adapter_registry()[name] = std::move(encoder);
}

std::shared_ptr<ExternalEncoder> find_external_encoder(const std::string& name) {
  std::lock_guard<std::mutex> lock(adapter_mutex());
  const auto it = adapter_registry().find(name);
  return it == adapter_registry().end() ? nullptr : it->second;
}

// ---------------------------------------------------------------------------
// Batches.

void TokenBatch::validate(const EncoderConfig& cfg) const {
  const Index n = ids.rows();
  if (ids.cols() != cfg.max_sequence_length) {
    throw ContractError("token batch has sequence length " +
                        std::to_string(ids.cols()) + ", model expects " +
                        std::to_string(cfg.max_sequence_length));
  }
  if (lengths.size() != n || domain.size() != n || task_label.size() != n ||
      pseudo_label.size() != n || confidence.size() != n) {
    throw ContractError("token batch fields have inconsistent row counts");
  }
  for (Index r = 0; r < n; ++r) {
    if (lengths(r) < 1 || lengths(r) > ids.cols()) {
      throw ContractError("row " + std::to_string(r) + " has invalid length");
    }
    for (Index t = 0; t < ids.cols(); ++t) {
      const int id = ids(r, t);
      if (t < lengths(r)) {
        if (id < 1 || id >= cfg.vocab_size) {
          throw ContractError(
              "row " + std::to_string(r) + " token " + std::to_string(t) +
              " has out-of-vocabulary id " + std::to_string(id) +
              "; the tokenizer must map unknowns to the reserved <unk> id");
        }
      } else if (id != Tokenizer::kPad) {
        throw ContractError("row " + std::to_string(r) +
                            " has non-pad tokens beyond its length");
      }
    }
    if (domain(r) != 0 && domain(r) != 1) {
      throw ContractError("row " + std::to_string(r) + " has invalid domain label");
    }
    const auto ok_label = [](int v) { return v == -1 || v == 0 || v == 1; };
    if (!ok_label(task_label(r)) || !ok_label(pseudo_label(r))) {
      throw ContractError("row " + std::to_string(r) + " has invalid label value");
    }
    if (task_label(r) >= 0 && pseudo_label(r) >= 0) {
      throw ContractError("row " + std::to_string(r) +
                          " carries both a task label and a pseudo-label");
    }
    if (domain(r) == 0 && pseudo_label(r) >= 0) {
      throw ContractError("source row " + std::to_string(r) + " carries a pseudo-label");
    }
    if (domain(r) == 1 && task_label(r) >= 0) {
      throw ContractError("target row " + std::to_string(r) + " carries a task label");
    }
    if (confidence(r) < 0.0 || confidence(r) > 1.0) {
      throw ContractError("row " + std::to_string(r) + " has confidence outside [0, 1]");
    }
  }
}

IntVector TokenBatch::effective_label() const {
  IntVector out(rows());
  for (Index r = 0; r < rows(); ++r) {
    out(r) = task_label(r) >= 0 ? task_label(r) : pseudo_label(r);
  }
  return out;
}

TokenBatch make_token_batch(const std::vector<BatchRow>& rows,
                            const EncoderConfig& cfg) {
  const Index n = static_cast<Index>(rows.size());
  const Index s = cfg.max_sequence_length;
  TokenBatch batch;
  batch.ids = IntMatrix::Zero(n, s);
  batch.lengths.resize(n);
  batch.domain.resize(n);
  batch.task_label.resize(n);
  batch.pseudo_label.resize(n);
  batch.confidence.resize(n);
  for (Index r = 0; r < n; ++r) {
    const BatchRow& row = rows[static_cast<std::size_t>(r)];
    if (row.ids == nullptr || row.ids->empty()) {
      throw ContractError("batch row " + std::to_string(r) + " has no tokens");
    }
    const Index len = std::min<Index>(s, static_cast<Index>(row.ids->size()));
    for (Index t = 0; t < len; ++t) {
      batch.ids(r, t) = (*row.ids)[static_cast<std::size_t>(t)];
    }
    batch.lengths(r) = static_cast<int>(len);
    batch.domain(r) = row.domain;
    batch.task_label(r) = row.task_label;
    batch.pseudo_label(r) = row.pseudo_label;
    batch.confidence(r) = row.confidence;
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Parameter bookkeeping.

namespace {

template <class State, class View>
void collect_views(State& s, ParamGroup group, std::vector<View>& out) {
  const auto add = [&out](auto& tensor) {
    out.push_back({tensor.data(), tensor.size()});
  };
  switch (group) {
    case ParamGroup::Encoder:
      switch (s.config.architecture) {
        case EncoderArch::BagOfEmbeddings:
          add(s.boe.embed);
          break;
        case EncoderArch::TinyTransformer: {
          add(s.tf.embed);
          add(s.tf.pos);
          for (auto& l : s.tf.layers) {
            add(l.wq); add(l.bq); add(l.wk); add(l.bk);
            add(l.wv); add(l.bv); add(l.wo); add(l.bo);
            add(l.w1); add(l.c1); add(l.w2); add(l.c2);
            add(l.ln1_gain); add(l.ln1_bias); add(l.ln2_gain); add(l.ln2_bias);
          }
          add(s.tf.lnf_gain);
          add(s.tf.lnf_bias);
          break;
        }
        case EncoderArch::ExternalAdapter:
          break;  // frozen, parameterless from our side
      }
      break;
    case ParamGroup::TaskHead:
      add(s.task.weight);
      add(s.task.bias);
      break;
    case ParamGroup::DiscHead:
      add(s.disc.w1);
      add(s.disc.b1);
      add(s.disc.w2);
      add(s.disc.b2);
      break;
  }
}

}  // namespace

std::vector<TensorView> param_views(ModelState& state, ParamGroup group) {
  std::vector<TensorView> views;
  collect_views(state, group, views);
  return views;
}

std::vector<ConstTensorView> param_views(const ModelState& state, ParamGroup group) {
  std::vector<ConstTensorView> views;
  collect_views(state, group, views);
  return views;
}

ModelState zeros_like(const ModelState& state) {
  ModelState z = state;
  for (const ParamGroup g :
       {ParamGroup::Encoder, ParamGroup::TaskHead, ParamGroup::DiscHead}) {
    for (auto view : param_views(z, g)) {
      for (Index i = 0; i < view.size; ++i) view.data[i] = 0.0;
    }
  }
  z.pretrain_steps = z.disc_steps = z.adapt_steps = 0;
  z.encode_calls = 0;
  return z;
}

std::uint64_t param_hash(const ModelState& state, ParamGroup group) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto view : param_views(state, group)) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(view.data);
    for (Index i = 0; i < view.size * static_cast<Index>(sizeof(Scalar)); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::uint64_t param_hash(const ModelState& state) {
  std::uint64_t h = param_hash(state, ParamGroup::Encoder);
  h = splitmix64(h ^ param_hash(state, ParamGroup::TaskHead));
  h = splitmix64(h ^ param_hash(state, ParamGroup::DiscHead));
  return h;
}

bool params_equal(const ModelState& a, const ModelState& b) {
  for (const ParamGroup g :
       {ParamGroup::Encoder, ParamGroup::TaskHead, ParamGroup::DiscHead}) {
    const auto va = param_views(a, g);
    const auto vb = param_views(b, g);
    if (va.size() != vb.size()) return false;
    for (std::size_t i = 0; i < va.size(); ++i) {
      if (va[i].size != vb[i].size) return false;
      for (Index j = 0; j < va[i].size; ++j) {
        if (va[i].data[j] != vb[i].data[j]) return false;
      }
    }
  }
  return true;
}

long param_count(const ModelState& state, ParamGroup group) {
  long n = 0;
  for (const auto view : param_views(state, group)) n += view.size;
  return n;
}

// ---------------------------------------------------------------------------
// Initialization.

ModelState init_model(const EncoderConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, seed_tag::kParamInit));

  ModelState state;
  state.config = cfg;
  const int d = cfg.repr_dim;

  switch (cfg.architecture) {
    case EncoderArch::BagOfEmbeddings:
      state.boe.embed = rng.normal_matrix(cfg.vocab_size, d, 0.1);
      break;
    case EncoderArch::TinyTransformer: {
      const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
      const int ff = ffn_dim(cfg);
      state.tf.embed = rng.normal_matrix(cfg.vocab_size, d, 0.02);
      state.tf.pos = rng.normal_matrix(cfg.max_sequence_length, d, 0.02);
      state.tf.layers.resize(static_cast<std::size_t>(cfg.depth));
      for (auto& l : state.tf.layers) {
        l.wq = rng.normal_matrix(d, d, w_std);
        l.wk = rng.normal_matrix(d, d, w_std);
        l.wv = rng.normal_matrix(d, d, w_std);
        l.wo = rng.normal_matrix(d, d, w_std);
        l.bq = Vector::Zero(d); l.bk = Vector::Zero(d);
        l.bv = Vector::Zero(d); l.bo = Vector::Zero(d);
        l.w1 = rng.normal_matrix(ff, d, w_std);
        l.c1 = Vector::Zero(ff);
        l.w2 = rng.normal_matrix(d, ff, 1.0 / std::sqrt(static_cast<double>(ff)));
        l.c2 = Vector::Zero(d);
        l.ln1_gain = Vector::Ones(d); l.ln1_bias = Vector::Zero(d);
        l.ln2_gain = Vector::Ones(d); l.ln2_bias = Vector::Zero(d);
      }
      state.tf.lnf_gain = Vector::Ones(d);
      state.tf.lnf_bias = Vector::Zero(d);
      break;
    }
    case EncoderArch::ExternalAdapter:
      if (find_external_encoder(cfg.adapter) == nullptr) {
        throw ConfigError("external adapter '" + cfg.adapter + "' is not registered");
      }
      break;
  }

  state.task.weight = rng.normal_matrix(2, d, 0.1);
  state.task.bias = Vector::Zero(2);
  state.disc.w1 = rng.normal_matrix(cfg.disc_hidden, d,
                                    1.0 / std::sqrt(static_cast<double>(d)));
  state.disc.b1 = Vector::Zero(cfg.disc_hidden);
  state.disc.w2 = rng.normal_vector(cfg.disc_hidden,
                                    1.0 / std::sqrt(static_cast<double>(cfg.disc_hidden)));
  state.disc.b2 = Vector::Zero(1);
  return state;
}

// ---------------------------------------------------------------------------
// Encoder forward / backward.

namespace {

struct LayerNormCache {
  Matrix xhat;
  Vector inv_sigma;
  Matrix out;
};

LayerNormCache layer_norm(const Matrix& x, const Vector& gain, const Vector& bias) {
  const Index rows = x.rows();
  LayerNormCache c;
  c.xhat.resize(rows, x.cols());
  c.inv_sigma.resize(rows);
  c.out.resize(rows, x.cols());
  for (Index r = 0; r < rows; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kLnEps);
    c.inv_sigma(r) = inv;
    c.xhat.row(r) = ((x.row(r).array() - mu) * inv).matrix();
    c.out.row(r) =
        (c.xhat.row(r).array() * gain.transpose().array() + bias.transpose().array())
            .matrix();
  }
  return c;
}

Matrix layer_norm_backward(const LayerNormCache& c, const Vector& gain,
                           const Matrix& dout, Vector& dgain, Vector& dbias) {
  const Index rows = dout.rows();
  Matrix dx(rows, dout.cols());
  for (Index r = 0; r < rows; ++r) {
    const Eigen::ArrayXd dxhat =
        dout.row(r).transpose().array() * gain.array();
    const Eigen::ArrayXd xhat = c.xhat.row(r).transpose().array();
    const double m1 = dxhat.mean();
    const double m2 = (dxhat * xhat).mean();
    dx.row(r) = (c.inv_sigma(r) * (dxhat - m1 - xhat * m2)).matrix().transpose();
    dgain += (dout.row(r).transpose().array() * xhat).matrix();
    dbias += dout.row(r).transpose();
  }
  return dx;
}

struct TfLayerCache {
  LayerNormCache ln1;
  Matrix q, k, v;
  std::vector<Matrix> attn;  // per head, L x L softmax weights
  Matrix attn_concat;
  LayerNormCache ln2;
  Matrix hidden;
};

struct TfItemCache {
  std::vector<TfLayerCache> layers;
  LayerNormCache lnf;
};

}  // namespace

struct EncodeCache {
  EncoderArch arch = EncoderArch::BagOfEmbeddings;
  std::vector<TfItemCache> items;
};

void EncodeCacheDeleter::operator()(EncodeCache* cache) const { delete cache; }

EncodeCachePtr make_encode_cache() { return EncodeCachePtr(new EncodeCache()); }

namespace {

Matrix softmax_rows(const Matrix& scores) {
  Matrix out(scores.rows(), scores.cols());
  for (Index r = 0; r < scores.rows(); ++r) {
    const double mx = scores.row(r).maxCoeff();
    Eigen::ArrayXd e = (scores.row(r).array() - mx).exp();
    out.row(r) = (e / e.sum()).matrix().transpose();
  }
  return out;
}

// One item through the transformer stack; caches everything backward needs.
Eigen::RowVectorXd tf_item_forward(const TfParams& p, const EncoderConfig& cfg,
                                   const IntMatrix& ids, Index row, int length,
                                   TfItemCache* cache) {
  const int d = cfg.repr_dim;
  const int heads = cfg.heads;
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const Index L = length;

  Matrix x(L, d);
  for (Index t = 0; t < L; ++t) {
    x.row(t) = p.embed.row(ids(row, t)) + p.pos.row(t);
  }

  TfItemCache local;
  TfItemCache& c = cache != nullptr ? *cache : local;
  c.layers.resize(p.layers.size());

  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const TfLayerParams& lp = p.layers[li];
    TfLayerCache& lc = c.layers[li];

    lc.ln1 = layer_norm(x, lp.ln1_gain, lp.ln1_bias);
    lc.q = (lc.ln1.out * lp.wq.transpose()).rowwise() + lp.bq.transpose();
    lc.k = (lc.ln1.out * lp.wk.transpose()).rowwise() + lp.bk.transpose();
    lc.v = (lc.ln1.out * lp.wv.transpose()).rowwise() + lp.bv.transpose();

    lc.attn.resize(static_cast<std::size_t>(heads));
    lc.attn_concat.resize(L, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.q.middleCols(h * dk, dk);
      const auto kh = lc.k.middleCols(h * dk, dk);
      const auto vh = lc.v.middleCols(h * dk, dk);
      const Matrix scores = qh * kh.transpose() * scale;
      lc.attn[static_cast<std::size_t>(h)] = softmax_rows(scores);
      lc.attn_concat.middleCols(h * dk, dk) =
          lc.attn[static_cast<std::size_t>(h)] * vh;
    }
    const Matrix attn_out =
        (lc.attn_concat * lp.wo.transpose()).rowwise() + lp.bo.transpose();
    x += attn_out;

    lc.ln2 = layer_norm(x, lp.ln2_gain, lp.ln2_bias);
    const Matrix pre = (lc.ln2.out * lp.w1.transpose()).rowwise() + lp.c1.transpose();
    lc.hidden = pre.array().tanh().matrix();
    const Matrix ffn_out =
        (lc.hidden * lp.w2.transpose()).rowwise() + lp.c2.transpose();
    x += ffn_out;
  }

  c.lnf = layer_norm(x, p.lnf_gain, p.lnf_bias);
  return c.lnf.out.colwise().mean();
}

void tf_item_backward(const TfParams& p, const EncoderConfig& cfg,
                      const IntMatrix& ids, Index row, int length,
                      const TfItemCache& c, const Eigen::RowVectorXd& dz,
                      TfParams& g) {
  const int d = cfg.repr_dim;
  const int heads = cfg.heads;
  const int dk = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const Index L = length;

  // Mean pooling spreads dz uniformly over positions.
  Matrix dy = (Matrix::Ones(L, 1) * dz) / static_cast<double>(L);
  Matrix dx = layer_norm_backward(c.lnf, p.lnf_gain, dy, g.lnf_gain, g.lnf_bias);

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const TfLayerParams& lp = p.layers[li];
    const TfLayerCache& lc = c.layers[li];
    TfLayerParams& lg = g.layers[li];

    // FFN sublayer: x_next = x_mid + W2 tanh(W1 ln2(x_mid) + c1) + c2
    const Matrix& d_ffn_out = dx;
    const Matrix dhidden = d_ffn_out * lp.w2;
    lg.w2 += d_ffn_out.transpose() * lc.hidden;
    lg.c2 += d_ffn_out.colwise().sum().transpose();
    const Matrix dpre =
        (dhidden.array() * (1.0 - lc.hidden.array().square())).matrix();
    lg.w1 += dpre.transpose() * lc.ln2.out;
    lg.c1 += dpre.colwise().sum().transpose();
    const Matrix d_ln2out = dpre * lp.w1;
    const Matrix dx_mid =
        dx + layer_norm_backward(lc.ln2, lp.ln2_gain, d_ln2out, lg.ln2_gain,
                                 lg.ln2_bias);

    // Attention sublayer: x_mid = x + Wo concat_h(softmax(QK^T/sqrt(dk)) V) + bo
    const Matrix& d_attn_out = dx_mid;
    lg.wo += d_attn_out.transpose() * lc.attn_concat;
    lg.bo += d_attn_out.colwise().sum().transpose();
    const Matrix d_attn_concat = d_attn_out * lp.wo;

    Matrix dq = Matrix::Zero(L, d);
    Matrix dk_mat = Matrix::Zero(L, d);
    Matrix dv = Matrix::Zero(L, d);
    for (int h = 0; h < heads; ++h) {
      const auto qh = lc.q.middleCols(h * dk, dk);
      const auto kh = lc.k.middleCols(h * dk, dk);
      const auto vh = lc.v.middleCols(h * dk, dk);
      const Matrix& w = lc.attn[static_cast<std::size_t>(h)];
      const auto d_oh = d_attn_concat.middleCols(h * dk, dk);

      const Matrix dw = d_oh * vh.transpose();
      dv.middleCols(h * dk, dk) = w.transpose() * d_oh;

      Matrix ds(L, L);
      for (Index r = 0; r < L; ++r) {
        const double dot = w.row(r).dot(dw.row(r));
        ds.row(r) = (w.row(r).array() * (dw.row(r).array() - dot)).matrix();
      }
      ds *= scale;
      dq.middleCols(h * dk, dk) = ds * kh;
      dk_mat.middleCols(h * dk, dk) = ds.transpose() * qh;
    }

    lg.wq += dq.transpose() * lc.ln1.out;
    lg.bq += dq.colwise().sum().transpose();
    lg.wk += dk_mat.transpose() * lc.ln1.out;
    lg.bk += dk_mat.colwise().sum().transpose();
    lg.wv += dv.transpose() * lc.ln1.out;
    lg.bv += dv.colwise().sum().transpose();

    const Matrix d_ln1out = dq * lp.wq + dk_mat * lp.wk + dv * lp.wv;
    dx = dx_mid + layer_norm_backward(lc.ln1, lp.ln1_gain, d_ln1out, lg.ln1_gain,
                                      lg.ln1_bias);
  }

  for (Index t = 0; t < L; ++t) {
    g.embed.row(ids(row, t)) += dx.row(t);
    g.pos.row(t) += dx.row(t);
  }
}

}  // namespace

Matrix encode_forward(const ModelState& state, const TokenBatch& batch,
                      EncodeCache* cache) {
  batch.validate(state.config);
  const Index n = batch.rows();
  const int d = state.config.repr_dim;
  Matrix z(n, d);
  ++state.encode_calls;

  switch (state.config.architecture) {
    case EncoderArch::BagOfEmbeddings: {
      if (cache != nullptr) cache->arch = EncoderArch::BagOfEmbeddings;
      for (Index r = 0; r < n; ++r) {
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
        for (Index t = 0; t < batch.lengths(r); ++t) {
          acc += state.boe.embed.row(batch.ids(r, t));
        }
        z.row(r) = acc / static_cast<double>(batch.lengths(r));
      }
      break;
    }
    case EncoderArch::TinyTransformer: {
      if (cache != nullptr) {
        cache->arch = EncoderArch::TinyTransformer;
        cache->items.resize(static_cast<std::size_t>(n));
      }
      for (Index r = 0; r < n; ++r) {
        TfItemCache* item =
            cache != nullptr ? &cache->items[static_cast<std::size_t>(r)] : nullptr;
        z.row(r) = tf_item_forward(state.tf, state.config, batch.ids, r,
                                   batch.lengths(r), item);
      }
      break;
    }
    case EncoderArch::ExternalAdapter: {
      const auto adapter = find_external_encoder(state.config.adapter);
      if (adapter == nullptr) {
        throw ConfigError("external adapter '" + state.config.adapter +
                          "' is not registered");
      }
      z = adapter->encode(batch);
      if (z.rows() != n || z.cols() != d) {
        throw ContractError("external adapter returned representation of wrong shape");
      }
      if (cache != nullptr) cache->arch = EncoderArch::ExternalAdapter;
      break;
    }
  }

  if (!z.allFinite()) {
    throw NumericError("encoder produced non-finite representations");
  }
  return z;
}

void encode_backward(const ModelState& state, const TokenBatch& batch,
                     const EncodeCache& cache, const Matrix& dz,
                     ModelState& grads) {
  if (dz.rows() != batch.rows() || dz.cols() != state.config.repr_dim) {
    throw ContractError("encode_backward: dz shape mismatch");
  }
  switch (state.config.architecture) {
    case EncoderArch::BagOfEmbeddings: {
      for (Index r = 0; r < batch.rows(); ++r) {
        const double inv_len = 1.0 / static_cast<double>(batch.lengths(r));
        for (Index t = 0; t < batch.lengths(r); ++t) {
          grads.boe.embed.row(batch.ids(r, t)) += dz.row(r) * inv_len;
        }
      }
      break;
    }
    case EncoderArch::TinyTransformer: {
      if (cache.arch != EncoderArch::TinyTransformer ||
          cache.items.size() != static_cast<std::size_t>(batch.rows())) {
        throw ContractError("encode_backward: cache does not match batch");
      }
      for (Index r = 0; r < batch.rows(); ++r) {
        tf_item_backward(state.tf, state.config, batch.ids, r, batch.lengths(r),
                         cache.items[static_cast<std::size_t>(r)], dz.row(r),
                         grads.tf);
      }
      break;
    }
    case EncoderArch::ExternalAdapter:
      break;  // frozen encoder: no parameters, no gradient
  }
}

ReprBatch encode(const ModelState& state, const TokenBatch& batch) {
  ReprBatch out;
  out.z = encode_forward(state, batch, nullptr);
  out.domain = batch.domain;
  out.task_label = batch.task_label;
  out.pseudo_label = batch.pseudo_label;
  out.confidence = batch.confidence;
  return out;
}

// ---------------------------------------------------------------------------
// Heads.

namespace {
void check_repr(const ModelState& state, const Matrix& z, const char* who) {
  if (z.cols() != state.config.repr_dim) {
    throw ContractError(std::string(who) + ": representation has " +
                        std::to_string(z.cols()) + " columns, model expects " +
                        std::to_string(state.config.repr_dim));
  }
}
}  // namespace

Matrix classify(const ModelState& state, const Matrix& z) {
  check_repr(state, z, "classify");
  Matrix logits = (z * state.task.weight.transpose()).rowwise() +
                  state.task.bias.transpose();
  if (!logits.allFinite()) {
    throw NumericError("classify produced non-finite logits");
  }
  return logits;
}

void classify_backward(const ModelState& state, const Matrix& z,
                       const Matrix& dlogits, Matrix* dz, ModelState* grads) {
  check_repr(state, z, "classify_backward");
  if (dlogits.rows() != z.rows() || dlogits.cols() != 2) {
    throw ContractError("classify_backward: dlogits shape mismatch");
  }
  if (grads != nullptr) {
    grads->task.weight += dlogits.transpose() * z;
    grads->task.bias += dlogits.colwise().sum().transpose();
  }
  if (dz != nullptr) {
    *dz = dlogits * state.task.weight;
  }
}

namespace {

// Hidden activations of the domain head: h = tanh(W1 z + b1).
Matrix disc_hidden_forward(const ModelState& state, const Matrix& z) {
  return (((z * state.disc.w1.transpose()).rowwise() +
           state.disc.b1.transpose())
              .array()
              .tanh())
      .matrix();
}

}  // namespace

Vector discriminate(const ModelState& state, const Matrix& z) {
  check_repr(state, z, "discriminate");
  const Matrix h = disc_hidden_forward(state, z);
  Vector logits = h * state.disc.w2;
  logits.array() += state.disc.b2(0);
  if (!logits.allFinite()) {
    throw NumericError("discriminate produced non-finite logits");
  }
  return logits;
}

void discriminate_backward(const ModelState& state, const Matrix& z,
                           const Vector& dlogit, Matrix* dz, ModelState* grads) {
  check_repr(state, z, "discriminate_backward");
  if (dlogit.size() != z.rows()) {
    throw ContractError("discriminate_backward: dlogit size mismatch");
  }
  const Matrix h = disc_hidden_forward(state, z);
  // dh = dlogit w2^T ; da = dh * (1 - h^2)
  const Matrix da =
      ((dlogit * state.disc.w2.transpose()).array() * (1.0 - h.array().square()))
          .matrix();
  if (grads != nullptr) {
    grads->disc.w2 += h.transpose() * dlogit;
    grads->disc.b2(0) += dlogit.sum();
    grads->disc.w1 += da.transpose() * z;
    grads->disc.b1 += da.colwise().sum().transpose();
  }
  if (dz != nullptr) {
    *dz = da * state.disc.w1;
  }
}

Vector sigmoid(const Vector& x) {
  Vector out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double v = x(i);
    out(i) = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
  }
  return out;
}

namespace {
void check_domain_vec(const Matrix& z, const IntVector& y) {
  if (y.size() != z.rows()) {
    throw ContractError("domain label vector does not match batch size");
  }
  for (Index i = 0; i < y.size(); ++i) {
    if (y(i) != 0 && y(i) != 1) {
      throw ContractError("domain labels must be 0 or 1");
    }
  }
}
}  // namespace

Vector domain_bce_per_row(const ModelState& state, const Matrix& z,
                          const IntVector& y_domain) {
  check_domain_vec(z, y_domain);
  const Vector logits = discriminate(state, z);
  Vector loss(logits.size());
  for (Index i = 0; i < logits.size(); ++i) {
    const double x = logits(i);
    // softplus(x) - y*x, computed stably
    const double sp = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    loss(i) = sp - static_cast<double>(y_domain(i)) * x;
  }
  if (!loss.allFinite()) {
    throw NumericError("domain BCE is non-finite");
  }
  return loss;
}

double domain_bce_mean(const ModelState& state, const Matrix& z,
                       const IntVector& y_domain) {
  return domain_bce_per_row(state, z, y_domain).mean();
}

Matrix domain_bce_grad_z(const ModelState& state, const Matrix& z,
                         const IntVector& y_domain) {
  check_domain_vec(z, y_domain);
  const Vector logits = discriminate(state, z);
  Vector dlogit = sigmoid(logits);
  for (Index i = 0; i < dlogit.size(); ++i) {
    dlogit(i) -= static_cast<double>(y_domain(i));
  }
  Matrix dz;
  discriminate_backward(state, z, dlogit, &dz, nullptr);
  if (!dz.allFinite()) {
    throw NumericError(
        "domain loss gradient is non-finite (saturated discriminator logits?)");
  }
  return dz;
}

}  // namespace cadm
