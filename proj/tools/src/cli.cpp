#include "m4c/cli/cli.hpp"

#include <chrono>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>

#include "CLI11.hpp"
#include "json.hpp"
#include "m4c/cli/run_config.hpp"
#include "m4c/decode/decoder.hpp"
#include "m4c/errors.hpp"
#include "m4c/featurize/phoc.hpp"
#include "m4c/featurize/scene.hpp"
#include "m4c/metrics/metrics.hpp"
#include "m4c/model/m4c.hpp"
#include "m4c/synth/synthgen.hpp"
#include "m4c/train/targets.hpp"
#include "m4c/train/trainer.hpp"

namespace m4c::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFile = "model.ckpt";
constexpr const char* kRunConfigFile = "run.cfg";
constexpr const char* kModelMetaFile = "model.json";
constexpr const char* kMetricsLogFile = "metrics.log";

// Flags shared by every subcommand except phoc.
struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string data;
  std::string out;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "key = value config file");
  app->add_option("--seed", f.seed, "random seed");
  app->add_option("--set", f.sets, "override one config key (key=value), repeatable");
  app->add_option("--data", f.data, "dataset directory or scene file");
  app->add_option("--out", f.out, "output path");
}

// Defaults < config file < --set < dedicated flags.
RunConfig resolve(const CommonFlags& f) {
  RunConfig rc;
  if (!f.config.empty()) load_run_config(f.config, rc);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    rc.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) rc.seed = *f.seed;
  if (!f.data.empty()) rc.data = f.data;
  if (!f.out.empty()) rc.out = f.out;
  return rc;
}

struct DataPaths {
  fs::path manifest;
  fs::path scenes;
};

DataPaths data_paths(const fs::path& data, std::string_view split) {
  if (data.empty()) throw ValidationError("no dataset given (--data)");
  if (fs::is_directory(data)) {
    return {data / feat::kManifestFile, data / (std::string(split) + ".jsonl")};
  }
  return {data.parent_path() / feat::kManifestFile, data};
}

// Feature sizes and vocabularies a trained model depends on.
json model_meta(const model::M4CConfig& c, const model::QuestionVocab& qv,
                const model::AnswerVocab& av) {
  json j;
  j["question_mode"] = feat::to_string(c.question_mode);
  j["question_dim"] = c.question_dim;
  j["object_feat_dim"] = c.object_feat_dim;
  j["ocr_frcn_dim"] = c.ocr_frcn_dim;
  j["ocr_ft_dim"] = c.ocr_ft_dim;
  j["question_vocab"] = qv.tokens();
  j["answer_vocab"] = av.plain_words();
  return j;
}

struct LoadedModel {
  RunConfig run;
  model::ModelParams params;
  model::QuestionVocab question_vocab;
  model::AnswerVocab answer_vocab;
};

LoadedModel load_model(const fs::path& dir) {
  LoadedModel m;
  load_run_config(dir / kRunConfigFile, m.run);
  std::ifstream in(dir / kModelMetaFile);
  if (!in) throw RuntimeFailure("cannot open " + (dir / kModelMetaFile).string());
  json j;
  try {
    j = json::parse(in);
    auto& c = m.run.model;
    c.question_mode = feat::question_mode_from_string(j.at("question_mode").get<std::string>());
    c.question_dim = j.at("question_dim").get<std::size_t>();
    c.object_feat_dim = j.at("object_feat_dim").get<std::size_t>();
    c.ocr_frcn_dim = j.at("ocr_frcn_dim").get<std::size_t>();
    c.ocr_ft_dim = j.at("ocr_ft_dim").get<std::size_t>();
    m.question_vocab = model::QuestionVocab(j.at("question_vocab").get<std::vector<std::string>>());
    m.answer_vocab = model::AnswerVocab(j.at("answer_vocab").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw ParseError((dir / kModelMetaFile).string() + ": " + e.what(), 0);
  }
  m.run.model.question_vocab_size = m.question_vocab.size();
  m.run.model.vocab_size = m.answer_vocab.size();
  m.params = model::ModelParams::initialize(m.run.model, 0);
  m.params.tensors.assign_values(num::load_checkpoint(dir / kCheckpointFile));
  return m;
}

void check_manifest(const feat::Manifest& man, const model::M4CConfig& c) {
  const bool ok = man.mode == c.question_mode && man.object_feat_dim == c.object_feat_dim &&
                  man.ocr_frcn_dim == c.ocr_frcn_dim && man.ocr_ft_dim == c.ocr_ft_dim &&
                  (man.mode == feat::QuestionMode::kLearned || man.question_dim == c.question_dim);
  if (!ok) throw ValidationError("dataset feature sizes do not match the trained model");
}

int cmd_gen(const CommonFlags& flags, const std::optional<std::string>& family,
            std::optional<std::size_t> n_train, std::optional<std::size_t> n_val,
            std::ostream& out) {
  RunConfig rc = resolve(flags);
  if (family) rc.family = synth::family_from_string(*family);
  if (n_train) rc.n_train = *n_train;
  if (n_val) rc.n_val = *n_val;
  if (rc.out.empty()) throw ValidationError("gen needs --out");
  auto spec = synth::default_spec(rc.family, rc.seed);
  spec.min_tokens = rc.min_tokens;
  spec.max_tokens = rc.max_tokens;
  spec.grid_rows = rc.grid_rows;
  spec.grid_cols = rc.grid_cols;
  synth::generate_dataset(spec, rc.n_train, rc.n_val, rc.out);
  out << "wrote " << rc.n_train << " train / " << rc.n_val << " val " << synth::to_string(rc.family)
      << " scenes to " << rc.out.string() << '\n';
  return kExitOk;
}

int cmd_train(const CommonFlags& flags, const std::optional<std::string>& ablation,
              const std::optional<std::string>& metric, std::ostream& out, std::ostream& err) {
  RunConfig rc = resolve(flags);
  if (ablation) rc.ablation = ablation_from_string(*ablation);
  if (metric) rc.training.metric = metrics::metric_from_string(*metric);
  rc.apply_ablation();
  if (rc.out.empty()) throw ValidationError("train needs --out");

  const auto paths = data_paths(rc.data, "train");
  const auto manifest = feat::load_manifest(paths.manifest);
  auto& c = rc.model;
  c.question_mode = manifest.mode;
  c.question_dim = manifest.mode == feat::QuestionMode::kIngested ? manifest.question_dim : c.hidden_dim;
  c.object_feat_dim = manifest.object_feat_dim;
  c.ocr_frcn_dim = manifest.ocr_frcn_dim;
  c.ocr_ft_dim = manifest.ocr_ft_dim;

  const auto train_scenes = feat::load_scene_pack(paths.scenes, manifest, c.caps(), &err);
  std::vector<feat::ScenePack> val_scenes;
  const auto val_path = paths.scenes.parent_path() / feat::kValFile;
  if (fs::is_directory(rc.data) && fs::exists(val_path)) {
    val_scenes = feat::load_scene_pack(val_path, manifest, c.caps(), &err);
  }

  std::vector<std::string> qtokens = manifest.question_vocab;
  if (qtokens.empty() && c.question_mode == feat::QuestionMode::kLearned) {
    std::set<std::string> seen;
    for (const auto& s : train_scenes) seen.insert(s.question_tokens.begin(), s.question_tokens.end());
    qtokens.assign(seen.begin(), seen.end());
  }
  const model::QuestionVocab qvocab(qtokens);
  const model::AnswerVocab avocab =
      manifest.answer_vocab.empty()
          ? train::build_answer_vocab(train_scenes, c.vocab_size >= 2 ? c.vocab_size - 2 : 0)
          : model::AnswerVocab(manifest.answer_vocab);
  c.question_vocab_size = qvocab.size();
  c.vocab_size = avocab.size();
  c.validate();

  auto prepared = train::prepare_training(train_scenes, c, qvocab, avocab);
  err << "training examples: " << prepared.examples.size() << ", unreachable (skipped): "
      << prepared.unreachable << '\n';
  const auto val = train::prepare_eval(val_scenes, c, qvocab);

  fs::create_directories(rc.out);
  auto params = model::ModelParams::initialize(c, rc.seed);
  std::optional<train::TrainResult> result;
  if (rc.schedule.max_iters > 0) {
    if (prepared.examples.empty()) throw ValidationError("no trainable examples in " + paths.scenes.string());
    auto options = rc.training;
    options.seed = rc.seed;
    std::ofstream log(rc.out / kMetricsLogFile, std::ios::trunc);
    if (!log) throw RuntimeFailure("cannot write " + (rc.out / kMetricsLogFile).string());
    const auto t0 = std::chrono::steady_clock::now();
    result = train::train_loop(params, avocab, prepared.examples, val, rc.schedule, options, &log);
    params = result->best;
    err << "trained " << rc.schedule.max_iters << " iterations in "
        << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  }

  num::save_checkpoint(params.tensors, rc.out / kCheckpointFile);
  save_run_config(rc.out / kRunConfigFile, rc);
  std::ofstream meta(rc.out / kModelMetaFile, std::ios::trunc);
  meta << model_meta(c, qvocab, avocab).dump(2) << '\n';
  if (!meta) throw RuntimeFailure("cannot write " + (rc.out / kModelMetaFile).string());

  out << "checkpoint " << (rc.out / kCheckpointFile).string();
  if (result && result->best_val) {
    out << " best_iter " << result->best_iter << " val_" << metrics::to_string(rc.training.metric)
        << ' ' << *result->best_val;
  }
  out << '\n';
  return kExitOk;
}

int cmd_predict(const CommonFlags& flags, const std::string& model_dir, const std::string& split,
                std::optional<std::size_t> max_steps, std::ostream& out, std::ostream& err) {
  RunConfig rc = resolve(flags);
  if (model_dir.empty()) throw ValidationError("predict needs --model");
  if (rc.out.empty()) throw ValidationError("predict needs --out");
  auto m = load_model(model_dir);
  if (max_steps) m.params = m.params.with_decode_steps(*max_steps);
  const auto& c = m.params.config;

  const auto paths = data_paths(rc.data, split);
  const auto manifest = feat::load_manifest(paths.manifest);
  check_manifest(manifest, c);
  const auto scenes = feat::load_scene_pack(paths.scenes, manifest, c.caps(), &err);
  std::vector<model::EncodedScene> encoded;
  encoded.reserve(scenes.size());
  for (const auto& s : scenes) encoded.push_back(model::encode_scene(s, c, m.question_vocab));
  const auto results = decode::decode_all(m.params, m.answer_vocab, encoded);
  decode::save_predictions(rc.out, results);
  out << "wrote " << results.size() << " predictions to " << rc.out.string() << '\n';
  return kExitOk;
}

int cmd_eval(const CommonFlags& flags, const std::string& predictions, const std::string& split,
             const std::optional<std::string>& metric, std::ostream& out, std::ostream& err) {
  RunConfig rc = resolve(flags);
  if (metric) rc.training.metric = metrics::metric_from_string(*metric);
  if (predictions.empty()) throw ValidationError("eval needs --predictions");
  const auto paths = data_paths(rc.data, split);
  const auto manifest = feat::load_manifest(paths.manifest);
  feat::Caps caps{std::numeric_limits<std::size_t>::max(), std::numeric_limits<std::size_t>::max(),
                  std::numeric_limits<std::size_t>::max()};
  const auto scenes = feat::load_scene_pack(paths.scenes, manifest, caps, &err);
  std::map<std::string, std::vector<std::string>> gts;
  for (const auto& s : scenes) {
    if (!gts.emplace(s.id, s.answers).second) throw ValidationError("duplicate scene id " + s.id);
  }
  std::map<std::string, std::string> preds;
  for (const auto& p : decode::load_predictions(predictions)) {
    if (!preds.emplace(p.id, p.answer).second) throw ValidationError("duplicate prediction id " + p.id);
  }
  const auto report = metrics::evaluate_set(preds, gts, rc.training.metric, &err);
  if (!rc.out.empty()) metrics::save_report(rc.out, report);
  out << metrics::to_string(report.metric) << ' ' << report.mean << " over " << report.count
      << " records\n";
  return kExitOk;
}

int cmd_phoc(const std::string& word, std::ostream& out) {
  const auto idx = feat::phoc_indices(word);
  for (std::size_t i = 0; i < idx.size(); ++i) out << (i ? " " : "") << idx[i];
  out << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multimodal transformer with pointer-augmented answer decoding"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, predict_flags, eval_flags;
  std::optional<std::string> family, ablation, train_metric, eval_metric;
  std::optional<std::size_t> n_train, n_val, max_steps;
  std::string model_dir, predictions, predict_split = "val", eval_split = "val", word;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, gen_flags);
  gen->add_option("--family", family, "copy-one | copy-multi | vocab-lookup | mixed");
  gen->add_option("--n-train", n_train, "training scenes");
  gen->add_option("--n-val", n_val, "validation scenes");

  auto* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_flags);
  tr->add_option("--ablation", ablation, "none | no-vocab | no-copy");
  tr->add_option("--metric", train_metric, "validation metric: anls | vqa | exact");

  auto* pr = app.add_subcommand("predict", "decode answers for a scene file");
  add_common(pr, predict_flags);
  pr->add_option("--model", model_dir, "directory written by train")->required();
  pr->add_option("--split", predict_split, "split file when --data is a directory");
  pr->add_option("--max-steps", max_steps, "decode at most this many steps");

  auto* ev = app.add_subcommand("eval", "score predictions");
  add_common(ev, eval_flags);
  ev->add_option("--predictions", predictions, "predictions file")->required();
  ev->add_option("--split", eval_split, "split file when --data is a directory");
  ev->add_option("--metric", eval_metric, "anls | vqa | exact");

  auto* ph = app.add_subcommand("phoc", "print the set indices of a word's PHOC vector");
  ph->add_option("word", word, "word")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_flags, family, n_train, n_val, out);
    if (*tr) return cmd_train(train_flags, ablation, train_metric, out, err);
    if (*pr) return cmd_predict(predict_flags, model_dir, predict_split, max_steps, out, err);
    if (*ev) return cmd_eval(eval_flags, predictions, eval_split, eval_metric, out, err);
    if (*ph) return cmd_phoc(word, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace m4c::cli
