#include "m4c/decode/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>

#include "json.hpp"
#include "m4c/errors.hpp"

namespace m4c::decode {

using model::AnswerVocab;
using model::StepInput;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

Selection select_argmax(std::span<const double> scores, std::size_t vocab_size) {
  std::size_t best = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (std::isnan(scores[i]) || scores[i] == kNegInf) continue;
    if (best == scores.size() || scores[i] > scores[best]) best = i;
  }
  if (best == scores.size()) throw InternalError("select_argmax: no finite score");
  if (best < vocab_size) return {Kind::kVocab, best};
  return {Kind::kOcr, best - vocab_size};
}

std::vector<double> mask_step_scores(std::span<const double> raw, const model::M4CConfig& c,
                                     std::size_t ocr_count) {
  const auto V = c.vocab_size;
  std::vector<double> out(raw.begin(), raw.end());
  out[AnswerVocab::kBegin] = kNegInf;
  if (!c.enable_fixed_vocab) {
    for (std::size_t i = 0; i < V; ++i)
      if (i != AnswerVocab::kEnd) out[i] = kNegInf;
  }
  for (std::size_t n = 0; V + n < out.size(); ++n) {
    if (!c.enable_ocr_copy || n >= ocr_count) out[V + n] = kNegInf;
  }
  return out;
}

std::vector<DecodeResult> decode_all(const model::ModelParams& params, const AnswerVocab& vocab,
                                     std::span<const model::EncodedScene> scenes,
                                     std::size_t batch_size) {
  const auto& c = params.config;
  const auto T = c.max_decode_steps, V = c.vocab_size, N = c.max_ocr_tokens;
  if (vocab.size() != V) {
    throw ValidationError("answer vocabulary has " + std::to_string(vocab.size()) +
                          " entries, model expects " + std::to_string(V));
  }
  num::NoGradGuard no_grad;
  std::vector<DecodeResult> results(scenes.size());
  batch_size = std::max<std::size_t>(batch_size, 1);

  for (std::size_t start = 0; start < scenes.size(); start += batch_size) {
    const auto B = std::min(batch_size, scenes.size() - start);
    std::vector<const model::EncodedScene*> ptrs;
    for (std::size_t i = 0; i < B; ++i) ptrs.push_back(&scenes[start + i]);
    const auto batch = model::make_batch(ptrs, c);

    std::vector<StepInput> steps(B * T);
    std::vector<bool> done(B, false);
    std::vector<std::size_t> lengths(B, 0);
    for (std::size_t i = 0; i < B; ++i) results[start + i].id = scenes[start + i].id;

    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < B; ++i)
        if (!done[i]) lengths[i] = t + 1;
      auto fwd = model::forward(params, batch, steps, lengths, {});
      const auto width = V + N;
      const auto all = fwd.all_scores.data();
      bool any_active = false;
      for (std::size_t i = 0; i < B; ++i) {
        if (done[i]) continue;
        auto& res = results[start + i];
        const auto& scene = scenes[start + i];
        auto scores = mask_step_scores(all.subspan((i * T + t) * width, width), c,
                                       std::min(scene.num_ocr(), N));
        const auto sel = select_argmax(scores, V);
        res.step_scores.push_back(std::move(scores));
        res.steps_used = t + 1;
        if (sel.kind == Kind::kVocab && sel.index == AnswerVocab::kEnd) {
          done[i] = true;
          continue;
        }
        Component comp{sel.kind, sel.index,
                       sel.kind == Kind::kVocab ? vocab.word(sel.index) : scene.ocr_texts[sel.index]};
        res.components.push_back(std::move(comp));
        if (t + 1 < T) steps[i * T + t + 1] = {sel.kind, sel.index};
        any_active = true;
      }
      if (!any_active) break;
    }
    for (std::size_t i = 0; i < B; ++i) {
      auto& res = results[start + i];
      for (const auto& comp : res.components) {
        if (!res.answer.empty()) res.answer += ' ';
        res.answer += comp.surface;
      }
    }
  }
  return results;
}

DecodeResult decode_answer(const model::ModelParams& params, const AnswerVocab& vocab,
                           const model::EncodedScene& scene) {
  return decode_all(params, vocab, std::span(&scene, 1), 1).front();
}

std::vector<std::vector<double>> teacher_forced_scores(const model::ModelParams& params,
                                                       const model::EncodedScene& scene,
                                                       std::span<const StepInput> inputs,
                                                       std::size_t steps) {
  const auto& c = params.config;
  const auto T = c.max_decode_steps, V = c.vocab_size, N = c.max_ocr_tokens;
  if (inputs.size() != T) throw InternalError("teacher_forced_scores: need T step inputs");
  num::NoGradGuard no_grad;
  const model::EncodedScene* ptr = &scene;
  const auto batch = model::make_batch(std::span(&ptr, 1), c);
  const std::size_t length = T;
  auto fwd = model::forward(params, batch, inputs, std::span(&length, 1), {});
  std::vector<std::vector<double>> out;
  for (std::size_t t = 0; t < std::min(steps, T); ++t) {
    out.push_back(mask_step_scores(fwd.all_scores.data().subspan(t * (V + N), V + N), c,
                                   std::min(scene.num_ocr(), N)));
  }
  return out;
}

std::vector<StepInput> realized_inputs(const DecodeResult& result, std::size_t max_steps) {
  std::vector<StepInput> in(max_steps);
  for (std::size_t t = 0; t < result.components.size() && t + 1 < max_steps; ++t) {
    in[t + 1] = {result.components[t].kind, result.components[t].index};
  }
  return in;
}

std::string trace_entry(const Component& c) {
  return std::string(c.kind == Kind::kVocab ? "vocab" : "ocr") + ":" + std::to_string(c.index) +
         ":" + c.surface;
}

void write_predictions(std::ostream& out, std::span<const DecodeResult> results) {
  for (const auto& r : results) {
    nlohmann::json j;
    j["id"] = r.id;
    j["answer"] = r.answer;
    j["trace"] = nlohmann::json::array();
    for (const auto& c : r.components) j["trace"].push_back(trace_entry(c));
    j["steps_used"] = r.steps_used;
    out << j.dump() << '\n';
  }
}

void save_predictions(const std::filesystem::path& path, std::span<const DecodeResult> results) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write predictions " + path.string());
  write_predictions(out, results);
}

std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open predictions " + path.string());
  std::vector<PredictionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("answer").get<std::string>(),
                     j.value("trace", std::vector<std::string>{}),
                     j.value("steps_used", std::size_t{0})});
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

}  // namespace m4c::decode
