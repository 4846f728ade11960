#include "m4c/featurize/scene.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>

#include "json.hpp"
#include "m4c/errors.hpp"

namespace m4c::feat {

using nlohmann::json;

std::string_view to_string(QuestionMode mode) {
  return mode == QuestionMode::kIngested ? "ingested" : "learned";
}

QuestionMode question_mode_from_string(std::string_view s) {
  if (s == "ingested") return QuestionMode::kIngested;
  if (s == "learned") return QuestionMode::kLearned;
  throw ValidationError("unknown question mode '" + std::string(s) + "'");
}

std::array<double, 4> bbox_feature(const BBox& box, const ImageSize& image) {
  if (!(image.width > 0) || !(image.height > 0)) {
    throw ValidationError("degenerate image size " + std::to_string(image.width) + "x" +
                          std::to_string(image.height));
  }
  return {box.x_min / image.width, box.y_min / image.height, box.x_max / image.width,
          box.y_max / image.height};
}

std::string normalize_token(std::string_view text) {
  auto begin = text.begin(), end = text.end();
  while (begin != end && std::isspace(static_cast<unsigned char>(*begin))) ++begin;
  while (end != begin && std::isspace(static_cast<unsigned char>(*(end - 1)))) --end;
  std::string out(begin, end);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
    Manifest m;
    m.mode = question_mode_from_string(j.at("mode").get<std::string>());
    m.question_dim = j.value("question_dim", std::size_t{0});
    m.object_feat_dim = j.at("object_feat_dim").get<std::size_t>();
    m.ocr_frcn_dim = j.at("ocr_frcn_dim").get<std::size_t>();
    m.ocr_ft_dim = j.value("ocr_ft_dim", std::size_t{300});
    m.question_vocab = j.value("question_vocab", std::vector<std::string>{});
    m.answer_vocab = j.value("answer_vocab", std::vector<std::string>{});
    m.family = j.value("family", std::string{});
    m.seed = j.value("seed", std::uint64_t{0});
    if (m.mode == QuestionMode::kIngested && m.question_dim == 0) {
      throw ValidationError("manifest: ingested mode needs question_dim > 0");
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError("manifest " + path.string() + ": " + e.what(), 0);
  }
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  json j;
  j["mode"] = to_string(m.mode);
  j["question_dim"] = m.question_dim;
  j["object_feat_dim"] = m.object_feat_dim;
  j["ocr_frcn_dim"] = m.ocr_frcn_dim;
  j["ocr_ft_dim"] = m.ocr_ft_dim;
  j["question_vocab"] = m.question_vocab;
  j["answer_vocab"] = m.answer_vocab;
  j["family"] = m.family;
  j["seed"] = m.seed;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write manifest " + path.string());
  out << j.dump(2) << '\n';
}

namespace {

BBox parse_box(const json& j) {
  auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw ValidationError("bbox needs 4 numbers, got " + std::to_string(v.size()));
  return {v[0], v[1], v[2], v[3]};
}

json box_json(const BBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

void check_box(const BBox& b, const ImageSize& im, const char* what) {
  const bool ok = 0 <= b.x_min && b.x_min <= b.x_max && b.x_max <= im.width && 0 <= b.y_min &&
                  b.y_min <= b.y_max && b.y_max <= im.height;
  if (!ok) throw ValidationError(std::string(what) + " bbox outside image bounds");
}

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw ValidationError(std::string(what) + " has dimension " + std::to_string(got) +
                          ", manifest declares " + std::to_string(want));
  }
}

ScenePack parse_record(const json& j, const Manifest& m) {
  ScenePack s;
  s.id = j.at("id").get<std::string>();
  auto size = j.at("image_size").get<std::vector<double>>();
  if (size.size() != 2) throw ValidationError("image_size needs [W, H]");
  s.image_size = {size[0], size[1]};
  if (!(s.image_size.width > 0) || !(s.image_size.height > 0)) {
    throw ValidationError("degenerate image size");
  }

  const bool has_tokens = j.contains("question_tokens");
  const bool has_vectors = j.contains("question_vectors");
  if (m.mode == QuestionMode::kLearned) {
    if (!has_tokens) throw ValidationError("learned mode record lacks question_tokens");
    s.question_tokens = j.at("question_tokens").get<std::vector<std::string>>();
  } else {
    if (!has_vectors) throw ValidationError("ingested mode record lacks question_vectors");
    s.question_vectors = j.at("question_vectors").get<std::vector<std::vector<double>>>();
    for (const auto& v : s.question_vectors) check_dim(v.size(), m.question_dim, "question vector");
  }

  for (const auto& o : j.at("objects")) {
    DetectedObjectInput obj;
    obj.bbox = parse_box(o.at("bbox"));
    obj.feat_appearance = o.at("feat").get<std::vector<double>>();
    check_box(obj.bbox, s.image_size, "object");
    check_dim(obj.feat_appearance.size(), m.object_feat_dim, "object feature");
    s.objects.push_back(std::move(obj));
  }
  for (const auto& o : j.at("ocr")) {
    OcrTokenInput tok;
    tok.text = o.at("text").get<std::string>();
    tok.bbox = parse_box(o.at("bbox"));
    tok.feat_appearance = o.at("feat_frcn").get<std::vector<double>>();
    tok.feat_word = o.at("feat_ft").get<std::vector<double>>();
    if (normalize_token(tok.text).empty()) throw ValidationError("OCR token text is empty");
    check_box(tok.bbox, s.image_size, "OCR");
    check_dim(tok.feat_appearance.size(), m.ocr_frcn_dim, "OCR appearance feature");
    check_dim(tok.feat_word.size(), m.ocr_ft_dim, "OCR word vector");
    s.ocr.push_back(std::move(tok));
  }
  s.answers = j.at("answers").get<std::vector<std::string>>();
  return s;
}

template <typename T>
void truncate(std::vector<T>& v, std::size_t cap, const char* what, const std::string& id,
              std::ostream* warn) {
  if (v.size() <= cap) return;
  if (warn) {
    *warn << "warning: scene " << id << ": " << v.size() << " " << what << ", keeping first "
          << cap << '\n';
  }
  v.resize(cap);
}

}  // namespace

std::vector<ScenePack> read_scene_pack(std::istream& in, const Manifest& manifest,
                                       const Caps& caps, std::ostream* warn) {
  std::vector<ScenePack> scenes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    ScenePack s;
    try {
      s = parse_record(json::parse(line), manifest);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
    truncate(s.question_tokens, caps.max_question_words, "question tokens", s.id, warn);
    truncate(s.question_vectors, caps.max_question_words, "question vectors", s.id, warn);
    truncate(s.objects, caps.max_objects, "objects", s.id, warn);
    truncate(s.ocr, caps.max_ocr_tokens, "OCR tokens", s.id, warn);
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<ScenePack> load_scene_pack(const std::filesystem::path& path,
                                       const Manifest& manifest, const Caps& caps,
                                       std::ostream* warn) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open scene pack " + path.string());
  return read_scene_pack(in, manifest, caps, warn);
}

void write_scene_pack(std::ostream& out, std::span<const ScenePack> scenes, QuestionMode mode) {
  for (const auto& s : scenes) {
    json j;
    j["id"] = s.id;
    j["image_size"] = json::array({s.image_size.width, s.image_size.height});
    if (mode == QuestionMode::kIngested) {
      j["question_vectors"] = s.question_vectors;
    } else {
      j["question_tokens"] = s.question_tokens;
    }
    j["objects"] = json::array();
    for (const auto& o : s.objects) {
      j["objects"].push_back({{"bbox", box_json(o.bbox)}, {"feat", o.feat_appearance}});
    }
    j["ocr"] = json::array();
    for (const auto& t : s.ocr) {
      j["ocr"].push_back({{"text", t.text},
                          {"bbox", box_json(t.bbox)},
                          {"feat_frcn", t.feat_appearance},
                          {"feat_ft", t.feat_word}});
    }
    j["answers"] = s.answers;
    out << j.dump() << '\n';
  }
}

void save_scene_pack(const std::filesystem::path& path, std::span<const ScenePack> scenes,
                     QuestionMode mode) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write scene pack " + path.string());
  write_scene_pack(out, scenes, mode);
  if (!out) throw RuntimeFailure("failed writing scene pack " + path.string());
}

}  // namespace m4c::feat
