#include "m4c/model/m4c.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "m4c/errors.hpp"
#include "m4c/featurize/phoc.hpp"

namespace m4c::model {

using num::Tensor;

void M4CConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
  if (hidden_dim == 0) fail("hidden_dim must be positive");
  if (num_heads == 0 || hidden_dim % num_heads != 0) {
    fail("hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
         std::to_string(num_heads));
  }
  if (num_layers == 0) fail("num_layers must be positive");
  if (ffn_dim == 0) fail("ffn_dim must be positive");
  if (max_decode_steps < 1) fail("max_decode_steps must be >= 1");
  if (vocab_size < 2) fail("vocab_size must be >= 2 (<begin>, <end>)");
  if (!enable_fixed_vocab && !enable_ocr_copy) fail("cannot disable both answer heads");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (question_mode == feat::QuestionMode::kLearned && question_vocab_size == 0) {
    fail("question_vocab_size must be positive");
  }
  if (question_mode == feat::QuestionMode::kIngested && question_dim == 0) {
    fail("question_dim must be positive");
  }
}

namespace {

constexpr double kMaskedScore = -1e9;

struct Init {
  std::mt19937_64 rng;
  double std;

  Tensor normal(num::Shape shape) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(num::shape_numel(shape));
    for (auto& x : v) {
      double z;
      do {
        z = dist(rng);
      } while (std::abs(z) > 2.0);
      x = z * std;
    }
    return Tensor::from_data(std::move(shape), std::move(v)).set_requires_grad(true);
  }
  static Tensor zeros(num::Shape shape) {
    return Tensor::zeros(std::move(shape)).set_requires_grad(true);
  }
  static Tensor ones(num::Shape shape) {
    return Tensor::full(std::move(shape), 1.0).set_requires_grad(true);
  }
};

void add_layer_norm(num::ParameterSet& p, const std::string& prefix, std::size_t d) {
  p.add(prefix + ".gamma", Init::ones({d}));
  p.add(prefix + ".beta", Init::zeros({d}));
}

void add_linear(num::ParameterSet& p, Init& init, const std::string& prefix, std::size_t out,
                std::size_t in, bool bias) {
  p.add(prefix + ".weight", init.normal({out, in}));
  if (bias) p.add(prefix + ".bias", Init::zeros({out}));
}

Tensor ln(const ModelParams& p, const std::string& prefix, const Tensor& x) {
  return num::layer_norm(x, p[prefix + ".gamma"], p[prefix + ".beta"], p.config.layer_norm_eps);
}

Tensor dense(const ModelParams& p, const std::string& prefix, const Tensor& x) {
  const auto bias_name = prefix + ".bias";
  return num::linear(x, p[prefix + ".weight"],
                     p.tensors.contains(bias_name) ? p[bias_name] : Tensor{});
}

std::string layer_prefix(std::size_t i) { return "encoder.layer" + std::to_string(i); }

void check_width(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ValidationError(std::string(what) + " has dimension " + std::to_string(got) +
                          ", model expects " + std::to_string(want));
  }
}

Tensor maybe_dropout(const Tensor& x, const ModelParams& p, const RunMode& mode) {
  if (!mode.train || p.config.dropout <= 0.0) return x;
  if (!mode.rng) throw InternalError("dropout requested without an RNG");
  return num::dropout(x, p.config.dropout, *mode.rng);
}

}  // namespace

ModelParams ModelParams::with_decode_steps(std::size_t steps) const {
  if (steps == 0 || steps > config.max_decode_steps) {
    throw ValidationError("decode steps must be in [1, " + std::to_string(config.max_decode_steps) +
                          "], got " + std::to_string(steps));
  }
  ModelParams out{config, {}};
  out.config.max_decode_steps = steps;
  for (const auto& [name, t] : tensors.entries()) {
    if (name == "decoder.step_position") {
      auto rows = num::slice_rows(t, 0, steps).detach();
      rows.set_requires_grad(t.requires_grad());
      out.tensors.add(name, rows);
    } else {
      out.tensors.add(name, t.clone());
    }
  }
  return out;
}

ModelParams ModelParams::initialize(const M4CConfig& c, std::uint64_t seed) {
  c.validate();
  ModelParams mp;
  mp.config = c;
  auto& p = mp.tensors;
  Init init{std::mt19937_64(seed), c.init_std};
  const auto d = c.hidden_dim;

  if (c.question_mode == feat::QuestionMode::kLearned) {
    p.add("question.embedding", init.normal({c.question_vocab_size, d}));
    p.add("question.position", init.normal({std::max<std::size_t>(c.max_question_words, 1), d}));
  } else {
    add_linear(p, init, "question.proj", d, c.question_dim, true);
  }
  add_layer_norm(p, "question.ln", d);

  add_linear(p, init, "object.feat_proj", d, c.object_feat_dim, false);
  add_layer_norm(p, "object.feat_ln", d);
  add_linear(p, init, "object.box_proj", d, 4, false);
  add_layer_norm(p, "object.box_ln", d);

  add_linear(p, init, "ocr.word_proj", d, c.ocr_ft_dim, false);
  add_linear(p, init, "ocr.appearance_proj", d, c.ocr_frcn_dim, false);
  add_linear(p, init, "ocr.phoc_proj", d, feat::kPhocDim, false);
  add_layer_norm(p, "ocr.feat_ln", d);
  add_linear(p, init, "ocr.box_proj", d, 4, false);
  add_layer_norm(p, "ocr.box_ln", d);

  for (std::size_t i = 0; i < c.num_layers; ++i) {
    const auto pre = layer_prefix(i);
    for (const char* name : {".attn.query", ".attn.key", ".attn.value", ".attn.output"}) {
      add_linear(p, init, pre + name, d, d, true);
    }
    add_layer_norm(p, pre + ".attn_ln", d);
    add_linear(p, init, pre + ".ffn.in", c.ffn_dim, d, true);
    add_linear(p, init, pre + ".ffn.out", d, c.ffn_dim, true);
    add_layer_norm(p, pre + ".ffn_ln", d);
  }

  p.add(std::string(kVocabWeight), init.normal({c.vocab_size, d}));
  p.add(std::string(kVocabBias), Init::zeros({c.vocab_size}));
  add_linear(p, init, "pointer.ocr_proj", d, d, true);
  add_linear(p, init, "pointer.dec_proj", d, d, true);
  p.add("decoder.step_position", init.normal({c.max_decode_steps, d}));
  p.add("decoder.prev_type", init.normal({2, d}));
  return mp;
}

EncodedScene encode_scene(const feat::ScenePack& scene, const M4CConfig& c,
                          const QuestionVocab& question_vocab) {
  EncodedScene e;
  e.id = scene.id;
  if (c.question_mode == feat::QuestionMode::kLearned) {
    const auto n = std::min(scene.question_tokens.size(), c.max_question_words);
    for (std::size_t i = 0; i < n; ++i) e.question_ids.push_back(question_vocab.id(scene.question_tokens[i]));
  } else {
    const auto n = std::min(scene.question_vectors.size(), c.max_question_words);
    for (std::size_t i = 0; i < n; ++i) {
      check_width(scene.question_vectors[i].size(), c.question_dim, "question vector");
      e.question_vectors.push_back(scene.question_vectors[i]);
    }
  }
  const auto n_obj = std::min(scene.objects.size(), c.max_objects);
  for (std::size_t i = 0; i < n_obj; ++i) {
    const auto& o = scene.objects[i];
    check_width(o.feat_appearance.size(), c.object_feat_dim, "object feature");
    e.object_features.push_back(o.feat_appearance);
    e.object_boxes.push_back(feat::bbox_feature(o.bbox, scene.image_size));
  }
  const auto n_ocr = std::min(scene.ocr.size(), c.max_ocr_tokens);
  for (std::size_t i = 0; i < n_ocr; ++i) {
    const auto& t = scene.ocr[i];
    check_width(t.feat_word.size(), c.ocr_ft_dim, "OCR word vector");
    check_width(t.feat_appearance.size(), c.ocr_frcn_dim, "OCR appearance feature");
    e.ocr_word.push_back(t.feat_word);
    e.ocr_appearance.push_back(t.feat_appearance);
    e.ocr_texts.push_back(feat::normalize_token(t.text));
    e.ocr_phoc.push_back(feat::phoc(e.ocr_texts.back()));
    e.ocr_boxes.push_back(feat::bbox_feature(t.bbox, scene.image_size));
  }
  return e;
}

EncodedBatch make_batch(std::span<const EncodedScene* const> scenes, const M4CConfig& c) {
  const auto B = scenes.size();
  const auto K = c.max_question_words, M = c.max_objects, N = c.max_ocr_tokens;
  EncodedBatch b;
  b.batch = B;
  b.question_mask.assign(B * K, 0.0);
  b.object_mask.assign(B * M, 0.0);
  b.ocr_mask.assign(B * N, 0.0);

  std::vector<double> qv, of(B * M * c.object_feat_dim, 0.0), ob(B * M * 4, 0.0);
  std::vector<double> ow(B * N * c.ocr_ft_dim, 0.0), oa(B * N * c.ocr_frcn_dim, 0.0);
  std::vector<double> op(B * N * feat::kPhocDim, 0.0), obx(B * N * 4, 0.0);
  if (c.question_mode == feat::QuestionMode::kLearned) {
    b.question_ids.assign(B * K, 0);
  } else {
    qv.assign(B * K * c.question_dim, 0.0);
  }

  for (std::size_t i = 0; i < B; ++i) {
    const auto& s = *scenes[i];
    if (c.question_mode == feat::QuestionMode::kLearned) {
      for (std::size_t k = 0; k < std::min(K, s.question_ids.size()); ++k) {
        b.question_ids[i * K + k] = s.question_ids[k];
        b.question_mask[i * K + k] = 1.0;
      }
    } else {
      for (std::size_t k = 0; k < std::min(K, s.question_vectors.size()); ++k) {
        std::copy(s.question_vectors[k].begin(), s.question_vectors[k].end(),
                  qv.begin() + static_cast<std::ptrdiff_t>((i * K + k) * c.question_dim));
        b.question_mask[i * K + k] = 1.0;
      }
    }
    for (std::size_t m = 0; m < std::min(M, s.object_features.size()); ++m) {
      const auto row = i * M + m;
      std::copy(s.object_features[m].begin(), s.object_features[m].end(),
                of.begin() + static_cast<std::ptrdiff_t>(row * c.object_feat_dim));
      std::copy(s.object_boxes[m].begin(), s.object_boxes[m].end(),
                ob.begin() + static_cast<std::ptrdiff_t>(row * 4));
      b.object_mask[row] = 1.0;
    }
    const auto n_ocr = std::min(N, s.num_ocr());
    for (std::size_t n = 0; n < n_ocr; ++n) {
      const auto row = i * N + n;
      std::copy(s.ocr_word[n].begin(), s.ocr_word[n].end(),
                ow.begin() + static_cast<std::ptrdiff_t>(row * c.ocr_ft_dim));
      std::copy(s.ocr_appearance[n].begin(), s.ocr_appearance[n].end(),
                oa.begin() + static_cast<std::ptrdiff_t>(row * c.ocr_frcn_dim));
      std::copy(s.ocr_phoc[n].begin(), s.ocr_phoc[n].end(),
                op.begin() + static_cast<std::ptrdiff_t>(row * feat::kPhocDim));
      std::copy(s.ocr_boxes[n].begin(), s.ocr_boxes[n].end(),
                obx.begin() + static_cast<std::ptrdiff_t>(row * 4));
      b.ocr_mask[row] = 1.0;
    }
    b.ocr_counts.push_back(n_ocr);
  }
  if (c.question_mode == feat::QuestionMode::kIngested) {
    b.question_vectors = Tensor::from_data({B * K, c.question_dim}, std::move(qv));
  }
  b.object_features = Tensor::from_data({B * M, c.object_feat_dim}, std::move(of));
  b.object_boxes = Tensor::from_data({B * M, 4}, std::move(ob));
  b.ocr_word = Tensor::from_data({B * N, c.ocr_ft_dim}, std::move(ow));
  b.ocr_appearance = Tensor::from_data({B * N, c.ocr_frcn_dim}, std::move(oa));
  b.ocr_phoc = Tensor::from_data({B * N, feat::kPhocDim}, std::move(op));
  b.ocr_boxes = Tensor::from_data({B * N, 4}, std::move(obx));
  return b;
}

Embedded embed_question(const ModelParams& p, const EncodedBatch& b) {
  const auto& c = p.config;
  const auto K = c.max_question_words;
  Tensor x;
  if (c.question_mode == feat::QuestionMode::kLearned) {
    const auto& table = p["question.embedding"];
    for (auto id : b.question_ids) {
      if (id >= table.dim(0)) {
        throw ValidationError("question token id " + std::to_string(id) +
                              " outside table of " + std::to_string(table.dim(0)));
      }
    }
    std::vector<std::size_t> positions(b.question_ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i % std::max<std::size_t>(K, 1);
    x = num::add(num::gather_rows(table, b.question_ids),
                 num::gather_rows(p["question.position"], positions));
  } else {
    x = dense(p, "question.proj", b.question_vectors);
  }
  return {num::scale_rows(ln(p, "question.ln", x), b.question_mask), b.question_mask};
}

Embedded embed_objects(const ModelParams& p, const EncodedBatch& b) {
  check_width(b.object_features.cols(), p.config.object_feat_dim, "object feature");
  auto feat = ln(p, "object.feat_ln", dense(p, "object.feat_proj", b.object_features));
  auto box = ln(p, "object.box_ln", dense(p, "object.box_proj", b.object_boxes));
  return {num::scale_rows(num::add(feat, box), b.object_mask), b.object_mask};
}

Embedded embed_ocr(const ModelParams& p, const EncodedBatch& b) {
  check_width(b.ocr_word.cols(), p.config.ocr_ft_dim, "OCR word vector");
  check_width(b.ocr_appearance.cols(), p.config.ocr_frcn_dim, "OCR appearance feature");
  auto feats = num::add(num::add(dense(p, "ocr.word_proj", b.ocr_word),
                                 dense(p, "ocr.appearance_proj", b.ocr_appearance)),
                        dense(p, "ocr.phoc_proj", b.ocr_phoc));
  auto feat = ln(p, "ocr.feat_ln", feats);
  auto box = ln(p, "ocr.box_ln", dense(p, "ocr.box_proj", b.ocr_boxes));
  return {num::scale_rows(num::add(feat, box), b.ocr_mask), b.ocr_mask};
}

Tensor step_input_embeddings(const ModelParams& p, std::span<const StepInput> steps,
                             const Tensor& ocr_embeddings, std::size_t batch) {
  const auto& c = p.config;
  const auto T = c.max_decode_steps, V = c.vocab_size, N = c.max_ocr_tokens;
  if (steps.size() != batch * T) {
    throw InternalError("step_input_embeddings: " + std::to_string(steps.size()) +
                        " step inputs for batch " + std::to_string(batch));
  }
  std::vector<std::size_t> base(steps.size()), pos(steps.size()), type(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto b = i / T;
    pos[i] = i % T;
    if (steps[i].kind == StepInput::Kind::kVocab) {
      if (steps[i].index >= V) throw InternalError("vocabulary step input out of range");
      base[i] = steps[i].index;
      type[i] = 0;
    } else {
      if (steps[i].index >= N) throw InternalError("OCR step input out of range");
      base[i] = V + b * N + steps[i].index;
      type[i] = 1;
    }
  }
  std::vector<Tensor> table{p[kVocabWeight], ocr_embeddings};
  auto x = num::gather_rows(num::concat_rows(table), base);
  x = num::add(x, num::gather_rows(p["decoder.step_position"], pos));
  return num::add(x, num::gather_rows(p["decoder.prev_type"], type));
}

std::vector<std::uint8_t> build_joint_mask(std::span<const double> question_mask,
                                           std::span<const double> object_mask,
                                           std::span<const double> ocr_mask,
                                           std::span<const double> decode_mask) {
  std::vector<double> valid;
  valid.insert(valid.end(), question_mask.begin(), question_mask.end());
  valid.insert(valid.end(), object_mask.begin(), object_mask.end());
  valid.insert(valid.end(), ocr_mask.begin(), ocr_mask.end());
  const auto n_entities = valid.size();
  valid.insert(valid.end(), decode_mask.begin(), decode_mask.end());
  const auto S = valid.size();

  std::vector<std::uint8_t> allowed(S * S, 0);
  for (std::size_t i = 0; i < S; ++i) {
    if (valid[i] == 0.0) continue;
    for (std::size_t j = 0; j < S; ++j) {
      if (valid[j] == 0.0) continue;
      const bool to_entity = j < n_entities;
      const bool causal_decode = i >= n_entities && j >= n_entities && j <= i;
      allowed[i * S + j] = (to_entity || causal_decode) ? 1 : 0;
    }
  }
  return allowed;
}

JointSequence assemble_joint(const M4CConfig& c, const Embedded& q, const Embedded& o,
                             const Embedded& r, const Embedded& dec) {
  const auto K = c.max_question_words, M = c.max_objects, N = c.max_ocr_tokens,
             T = c.max_decode_steps;
  const auto S = K + M + N + T;
  const std::size_t batch = dec.mask.size() / T;

  // Rows of concat(q, o, r, dec) are modality-major; regroup example-major.
  std::vector<std::size_t> order;
  order.reserve(batch * S);
  const std::size_t off_o = batch * K, off_r = off_o + batch * M, off_d = off_r + batch * N;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t k = 0; k < K; ++k) order.push_back(b * K + k);
    for (std::size_t m = 0; m < M; ++m) order.push_back(off_o + b * M + m);
    for (std::size_t n = 0; n < N; ++n) order.push_back(off_r + b * N + n);
    for (std::size_t t = 0; t < T; ++t) order.push_back(off_d + b * T + t);
  }
  std::vector<Tensor> parts{q.rows, o.rows, r.rows, dec.rows};
  JointSequence js;
  js.batch = batch;
  js.seq = S;
  js.embeddings = num::gather_rows(num::concat_rows(parts), order);

  auto mask = std::make_shared<num::AttentionMask>();
  mask->batch = batch;
  mask->seq = S;
  mask->additive.resize(batch * S * S);
  for (std::size_t b = 0; b < batch; ++b) {
    auto allowed = build_joint_mask(std::span(q.mask).subspan(b * K, K),
                                    std::span(o.mask).subspan(b * M, M),
                                    std::span(r.mask).subspan(b * N, N),
                                    std::span(dec.mask).subspan(b * T, T));
    for (std::size_t i = 0; i < S * S; ++i) {
      mask->additive[b * S * S + i] = allowed[i] ? 0.0 : kMaskedScore;
    }
  }
  js.mask = std::move(mask);
  return js;
}

Tensor transformer_forward(const ModelParams& p, const JointSequence& joint, const RunMode& mode) {
  Tensor x = maybe_dropout(joint.embeddings, p, mode);
  for (std::size_t i = 0; i < p.config.num_layers; ++i) {
    const auto pre = layer_prefix(i);
    auto q = dense(p, pre + ".attn.query", x);
    auto k = dense(p, pre + ".attn.key", x);
    auto v = dense(p, pre + ".attn.value", x);
    auto att = num::multi_head_attention(q, k, v, joint.mask, p.config.num_heads);
    att = maybe_dropout(dense(p, pre + ".attn.output", att), p, mode);
    x = ln(p, pre + ".attn_ln", num::add(x, att));
    auto h = num::gelu(dense(p, pre + ".ffn.in", x));
    h = maybe_dropout(dense(p, pre + ".ffn.out", h), p, mode);
    x = ln(p, pre + ".ffn_ln", num::add(x, h));
  }
  return x;
}

Tensor vocab_scores(const ModelParams& p, const Tensor& z_dec) {
  return num::linear(z_dec, p[kVocabWeight], p[kVocabBias]);
}

Tensor pointer_scores(const ModelParams& p, const Tensor& z_dec, const Tensor& z_ocr,
                      std::size_t batch) {
  auto ocr = dense(p, "pointer.ocr_proj", z_ocr);
  auto dec = dense(p, "pointer.dec_proj", z_dec);
  return num::batched_matmul_nt(dec, ocr, batch);
}

ForwardResult forward(const ModelParams& p, const EncodedBatch& batch,
                      std::span<const StepInput> steps,
                      std::span<const std::size_t> decode_lengths, const RunMode& mode) {
  const auto& c = p.config;
  const auto B = batch.batch;
  const auto K = c.max_question_words, M = c.max_objects, N = c.max_ocr_tokens,
             T = c.max_decode_steps;
  if (decode_lengths.size() != B) throw InternalError("forward: decode_lengths size mismatch");

  ForwardResult out;
  auto q = embed_question(p, batch);
  auto o = embed_objects(p, batch);
  auto r = embed_ocr(p, batch);
  out.ocr_embeddings = r.rows;

  Embedded dec;
  dec.rows = step_input_embeddings(p, steps, r.rows, B);
  dec.mask.assign(B * T, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < std::min(T, decode_lengths[b]); ++t) dec.mask[b * T + t] = 1.0;
  }

  auto joint = assemble_joint(c, q, o, r, dec);
  auto z = transformer_forward(p, joint, mode);

  const auto S = joint.seq;
  auto pick = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> idx;
    idx.reserve(B * count);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < count; ++i) idx.push_back(b * S + begin + i);
    return num::gather_rows(z, idx);
  };
  out.z_question = pick(0, K);
  out.z_objects = pick(K, M);
  out.z_ocr = pick(K + M, N);
  out.z_dec = pick(K + M + N, T);
  out.vocab_scores = vocab_scores(p, out.z_dec);
  out.ocr_scores = pointer_scores(p, out.z_dec, out.z_ocr, B);
  std::vector<Tensor> cols{out.vocab_scores, out.ocr_scores};
  out.all_scores = num::concat_cols(cols);
  return out;
}

}  // namespace m4c::model
