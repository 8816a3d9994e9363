#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cadm/tokenizer.hpp"
#include "cadm/types.hpp"

namespace cadm {

enum class EncoderArch { BagOfEmbeddings, TinyTransformer, ExternalAdapter };

const char* encoder_arch_name(EncoderArch arch);
EncoderArch encoder_arch_from_name(const std::string& name);

struct EncoderConfig {
  EncoderArch architecture = EncoderArch::BagOfEmbeddings;
  int vocab_size = 512;
  int repr_dim = 32;
  int depth = 2;   // transformer layers
  int heads = 2;   // attention heads; must divide repr_dim
  int max_sequence_length = 64;
  int disc_hidden = 16;   // width of the domain head's hidden layer
  std::string adapter;    // registry key for ExternalAdapter
  std::uint64_t seed = 0;

  void validate() const;
};

// A padded batch of token ids plus the per-row label bookkeeping that travels
// with it through the pipeline. -1 marks an absent label. A row never carries
// both a task label and a pseudo-label.
struct TokenBatch {
  IntMatrix ids;       // batch x max_sequence_length, pad = 0
  IntVector lengths;   // non-pad prefix length, >= 1
  IntVector domain;    // y_D: 0 source, 1 target
  IntVector task_label;
  IntVector pseudo_label;
  Vector confidence;

  Index rows() const { return ids.rows(); }
  void validate(const EncoderConfig& cfg) const;
  // Per-row training label: task label on source rows, pseudo-label on
  // target rows, -1 where neither is present.
  IntVector effective_label() const;
};

struct BatchRow {
  const std::vector<int>* ids = nullptr;  // pre-tokenized, untruncated
  int domain = 0;
  int task_label = -1;
  int pseudo_label = -1;
  double confidence = 0.0;
};

TokenBatch make_token_batch(const std::vector<BatchRow>& rows,
                            const EncoderConfig& cfg);

// Latent representations z with the labels carried over from the token batch.
struct ReprBatch {
  Matrix z;  // batch x repr_dim
  IntVector domain;
  IntVector task_label;
  IntVector pseudo_label;
  Vector confidence;
};

// ---------------------------------------------------------------------------
// Parameters. The three groups (encoder, task head, domain head) are disjoint
// by construction; both heads consume the same z.

struct BoeParams {
  Matrix embed;  // vocab x repr_dim
};

struct TfLayerParams {
  Matrix wq, wk, wv, wo;      // repr_dim x repr_dim
  Vector bq, bk, bv, bo;      // repr_dim
  Matrix w1;                  // ffn_dim x repr_dim
  Vector c1;                  // ffn_dim
  Matrix w2;                  // repr_dim x ffn_dim
  Vector c2;                  // repr_dim
  Vector ln1_gain, ln1_bias;  // repr_dim
  Vector ln2_gain, ln2_bias;
};

struct TfParams {
  Matrix embed;  // vocab x repr_dim
  Matrix pos;    // max_sequence_length x repr_dim
  std::vector<TfLayerParams> layers;
  Vector lnf_gain, lnf_bias;
};

struct TaskHeadParams {
  Matrix weight;  // 2 x repr_dim
  Vector bias;    // 2
};

struct DiscHeadParams {
  Matrix w1;  // disc_hidden x repr_dim
  Vector b1;  // disc_hidden
  Vector w2;  // disc_hidden
  Vector b2;  // 1
};

struct ModelState {
  EncoderConfig config;
  BoeParams boe;
  TfParams tf;
  TaskHeadParams task;
  DiscHeadParams disc;
  long pretrain_steps = 0;
  long disc_steps = 0;
  long adapt_steps = 0;
  // Forward-pass counter; lets tests assert that training encodes each batch
  // exactly once and reuses z for both heads.
  mutable long encode_calls = 0;
};

enum class ParamGroup { Encoder, TaskHead, DiscHead };

struct TensorView {
  Scalar* data = nullptr;
  Index size = 0;
};
struct ConstTensorView {
  const Scalar* data = nullptr;
  Index size = 0;
};

std::vector<TensorView> param_views(ModelState& state, ParamGroup group);
std::vector<ConstTensorView> param_views(const ModelState& state, ParamGroup group);

// Same structure as `state` with every tensor zeroed; used as a gradient
// accumulator.
ModelState zeros_like(const ModelState& state);
std::uint64_t param_hash(const ModelState& state, ParamGroup group);
std::uint64_t param_hash(const ModelState& state);
bool params_equal(const ModelState& a, const ModelState& b);
long param_count(const ModelState& state, ParamGroup group);

// Hook for plugging a full-scale pretrained encoder in front of the heads.
// Such encoders are frozen: they expose representations but no gradients.
class ExternalEncoder {
 public:
  virtual ~ExternalEncoder() = default;
  virtual Matrix encode(const TokenBatch& batch) const = 0;  // batch x repr_dim
};

void register_external_encoder(const std::string& name,
                               std::shared_ptr<ExternalEncoder> encoder);
std::shared_ptr<ExternalEncoder> find_external_encoder(const std::string& name);

// ---------------------------------------------------------------------------
// Forward / backward.

struct EncodeCache;  // opaque; defined in model.cpp
struct EncodeCacheDeleter {
  void operator()(EncodeCache* cache) const;
};
using EncodeCachePtr = std::unique_ptr<EncodeCache, EncodeCacheDeleter>;

ModelState init_model(const EncoderConfig& cfg);

// Evaluation-mode forward pass (no dropout anywhere, so "evaluation mode" is
// simply "no cache retained").
ReprBatch encode(const ModelState& state, const TokenBatch& batch);

EncodeCachePtr make_encode_cache();
Matrix encode_forward(const ModelState& state, const TokenBatch& batch,
                      EncodeCache* cache);
// Accumulates encoder-parameter gradients of a loss whose d(loss)/dz is `dz`.
void encode_backward(const ModelState& state, const TokenBatch& batch,
                     const EncodeCache& cache, const Matrix& dz,
                     ModelState& grads);

Matrix classify(const ModelState& state, const Matrix& z);      // batch x 2 logits
Vector discriminate(const ModelState& state, const Matrix& z);  // batch x 1 logit

// Backward through the heads. `dz` may be null when only parameter gradients
// are wanted, `grads` may be null when only dz is wanted.
void classify_backward(const ModelState& state, const Matrix& z,
                       const Matrix& dlogits, Matrix* dz, ModelState* grads);
void discriminate_backward(const ModelState& state, const Matrix& z,
                           const Vector& dlogit, Matrix* dz, ModelState* grads);

// Binary cross-entropy of the domain head under a sigmoid, the loss l of the
// discriminator objective. Per-row values (not batch-averaged): the inner
// maximization is stated per training sample.
Vector domain_bce_per_row(const ModelState& state, const Matrix& z,
                          const IntVector& y_domain);
double domain_bce_mean(const ModelState& state, const Matrix& z,
                       const IntVector& y_domain);
// d(per-row BCE)/dz, rows independent. Finite-ness is checked; saturated
// non-finite gradients raise NumericError.
Matrix domain_bce_grad_z(const ModelState& state, const Matrix& z,
                         const IntVector& y_domain);

Vector sigmoid(const Vector& x);

}  // namespace cadm
