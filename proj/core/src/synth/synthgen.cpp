#include "m4c/synth/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <set>

#include "m4c/errors.hpp"

namespace m4c::synth {

namespace {

using Rng = std::mt19937_64;

Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

std::size_t uniform_index(Rng& rng, std::size_t lo, std::size_t hi) {  // inclusive
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void normalize(std::vector<double>& v) {
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0)
    for (double& x : v) x /= n;
}

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = g(rng);
  normalize(v);
  return v;
}

// Hashed character-trigram vector standing in for a pretrained word vector.
std::vector<double> word_vector(const std::string& text, std::size_t dim) {
  std::vector<double> v(dim, 0.0);
  const std::string padded = "<" + text + ">";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t k = 0; k < 3; ++k) {
      h ^= static_cast<unsigned char>(padded[i + k]);
      h *= 1099511628211ULL;
    }
    v[h % dim] += (h >> 63) ? 1.0 : -1.0;
  }
  normalize(v);
  return v;
}

struct Cell {
  std::size_t row, col;
};

struct Placed {
  Cell cell;
  feat::OcrTokenInput token;
  std::size_t cls;
};

std::string row_token(std::size_t r) { return "r" + std::to_string(r); }
std::string col_token(std::size_t c) { return "c" + std::to_string(c); }

}  // namespace

std::string_view to_string(Family f) {
  switch (f) {
    case Family::kCopyOne:
      return "copy-one";
    case Family::kCopyMulti:
      return "copy-multi";
    case Family::kVocabLookup:
      return "vocab-lookup";
    case Family::kMixed:
      return "mixed";
  }
  return "copy-one";
}

Family family_from_string(std::string_view s) {
  if (s == "copy-one") return Family::kCopyOne;
  if (s == "copy-multi") return Family::kCopyMulti;
  if (s == "vocab-lookup") return Family::kVocabLookup;
  if (s == "mixed") return Family::kMixed;
  throw ValidationError("unknown task family '" + std::string(s) + "'");
}

std::vector<std::string> default_words() {
  return {"red",    "blue",   "green",  "yellow", "orange", "purple", "pink",  "brown",
          "black",  "white",  "gray",   "gold",   "silver", "navy",   "teal",  "olive",
          "maroon", "coral",  "beige",  "ivory",  "lime",   "indigo", "violet", "amber",
          "cyan",   "magenta", "tan",   "plum",   "azure",  "salmon"};
}

SynthSpec default_spec(Family family, std::uint64_t seed) {
  SynthSpec s;
  s.seed = seed;
  s.family = family;
  s.words = default_words();
  return s;
}

void SynthSpec::validate() const {
  auto fail = [](const std::string& m) { throw ValidationError("synth spec: " + m); };
  if (grid_rows == 0 || grid_cols == 0) fail("grid must be non-empty");
  if (min_tokens == 0 || min_tokens > max_tokens) fail("need 1 <= min_tokens <= max_tokens");
  if (max_tokens > grid_rows * grid_cols) fail("more tokens than grid cells");
  if (family == Family::kCopyMulti && (grid_cols < 2 || max_tokens < 2)) {
    fail("copy-multi needs at least two columns and two tokens");
  }
  if (words.empty()) fail("word list is empty");
  if (alphabet.empty()) fail("alphabet is empty");
  if (min_length == 0 || min_length > max_length) fail("need 1 <= min_length <= max_length");
  if (appearance_dim == 0 || object_feat_dim == 0 || word_dim == 0) fail("zero feature size");
  if (!(image_width > 0) || !(image_height > 0)) fail("degenerate image size");
  const std::set<char> letters(alphabet.begin(), alphabet.end());
  std::set<std::string> seen;
  for (const auto& w : words) {
    if (w.empty() || w.find(' ') != std::string::npos) fail("words must be single tokens");
    if (!seen.insert(w).second) fail("duplicate word '" + w + "'");
    if (std::all_of(w.begin(), w.end(), [&](char c) { return letters.contains(c); })) {
      fail("word '" + w + "' can be spelled from the token alphabet");
    }
  }
}

std::vector<std::string> question_vocabulary(const SynthSpec& spec) {
  std::vector<std::string> v = {"what", "text", "at", "is", "written", "in", "color", "and"};
  for (std::size_t r = 0; r < spec.grid_rows; ++r) v.push_back(row_token(r));
  for (std::size_t c = 0; c < spec.grid_cols; ++c) v.push_back(col_token(c));
  return v;
}

feat::Manifest make_manifest(const SynthSpec& spec) {
  feat::Manifest m;
  m.mode = feat::QuestionMode::kLearned;
  m.object_feat_dim = spec.object_feat_dim;
  m.ocr_frcn_dim = spec.appearance_dim;
  m.ocr_ft_dim = spec.word_dim;
  m.question_vocab = question_vocabulary(spec);
  m.answer_vocab = spec.words;
  m.family = std::string(to_string(spec.family));
  m.seed = spec.seed;
  return m;
}

feat::ScenePack generate_example(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng = make_rng(spec.seed, 1, index);

  // Class prototypes are shared by the whole dataset.
  Rng proto_rng = make_rng(spec.seed, 0, 0);
  std::vector<std::vector<double>> protos;
  for (std::size_t i = 0; i < spec.words.size(); ++i) {
    protos.push_back(random_unit(proto_rng, spec.appearance_dim));
  }

  feat::ScenePack s;
  s.id = std::string(to_string(spec.family)) + "-" + std::to_string(index);
  s.image_size = {spec.image_width, spec.image_height};
  const double cw = spec.image_width / static_cast<double>(spec.grid_cols);
  const double ch = spec.image_height / static_cast<double>(spec.grid_rows);

  // Each grid row is one text line: tokens on it share their vertical extent.
  std::vector<std::pair<double, double>> lines;
  for (std::size_t r = 0; r < spec.grid_rows; ++r) {
    const double top = static_cast<double>(r) * ch + uniform(rng, 0.05, 0.3) * ch;
    const double height = uniform(rng, 0.35, 0.6) * ch;
    lines.emplace_back(top, top + height);
  }

  std::size_t n_tokens = uniform_index(rng, spec.min_tokens, spec.max_tokens);
  std::vector<std::vector<bool>> used(spec.grid_rows, std::vector<bool>(spec.grid_cols, false));
  std::vector<Cell> cells;
  std::size_t query_row = 0;

  const auto take = [&](std::size_t r, std::size_t c) {
    used[r][c] = true;
    cells.push_back({r, c});
  };
  const auto place_random = [&](std::size_t count, std::optional<std::size_t> skip_row) {
    for (std::size_t k = 0; k < count; ++k) {
      std::size_t tries = 0;
      for (;;) {
        if (++tries > spec.max_retries) {
          throw RuntimeFailure("synthgen: could not place token " + std::to_string(k) +
                               " for example " + std::to_string(index));
        }
        const auto r = uniform_index(rng, 0, spec.grid_rows - 1);
        const auto c = uniform_index(rng, 0, spec.grid_cols - 1);
        if (used[r][c] || (skip_row && r == *skip_row)) continue;
        take(r, c);
        break;
      }
    }
  };

  if (spec.family == Family::kCopyMulti) {
    n_tokens = std::max<std::size_t>(n_tokens, 2);
    query_row = uniform_index(rng, 0, spec.grid_rows - 1);
    const std::size_t in_row =
        uniform_index(rng, 2, std::min({std::size_t{4}, spec.grid_cols, n_tokens}));
    std::vector<std::size_t> cols(spec.grid_cols);
    std::iota(cols.begin(), cols.end(), 0);
    std::shuffle(cols.begin(), cols.end(), rng);
    for (std::size_t k = 0; k < in_row; ++k) take(query_row, cols[k]);
    place_random(n_tokens - in_row, query_row);
  } else {
    place_random(n_tokens, std::nullopt);
  }

  std::set<std::string> texts;
  std::vector<Placed> placed;
  for (const auto& cell : cells) {
    std::string text;
    for (std::size_t tries = 0;; ++tries) {
      if (tries > spec.max_retries) throw RuntimeFailure("synthgen: could not draw distinct token strings");
      text.clear();
      const auto len = uniform_index(rng, spec.min_length, spec.max_length);
      for (std::size_t i = 0; i < len; ++i) {
        text.push_back(spec.alphabet[uniform_index(rng, 0, spec.alphabet.size() - 1)]);
      }
      if (texts.insert(text).second) break;
    }
    const auto cls = uniform_index(rng, 0, spec.words.size() - 1);
    const double width = uniform(rng, 0.4, 0.85) * cw;
    const double left = static_cast<double>(cell.col) * cw + uniform(rng, 0.0, cw - width);
    feat::OcrTokenInput tok;
    tok.text = text;
    tok.bbox = {left, lines[cell.row].first, left + width, lines[cell.row].second};
    tok.feat_appearance = protos[cls];
    const auto noise = random_unit(rng, spec.appearance_dim);
    for (std::size_t i = 0; i < noise.size(); ++i) tok.feat_appearance[i] += spec.appearance_noise * noise[i];
    normalize(tok.feat_appearance);
    tok.feat_word = word_vector(text, spec.word_dim);
    placed.push_back({cell, std::move(tok), cls});
  }

  // Store tokens in random order; nothing may depend on list position.
  std::shuffle(placed.begin(), placed.end(), rng);
  for (const auto& p : placed) s.ocr.push_back(p.token);

  const std::size_t n_objects = uniform_index(rng, 0, spec.max_objects);
  for (std::size_t k = 0; k < n_objects; ++k) {
    feat::DetectedObjectInput obj;
    const double x0 = uniform(rng, 0.0, spec.image_width * 0.8);
    const double y0 = uniform(rng, 0.0, spec.image_height * 0.8);
    obj.bbox = {x0, y0, uniform(rng, x0, spec.image_width), uniform(rng, y0, spec.image_height)};
    obj.feat_appearance = random_unit(rng, spec.object_feat_dim);
    s.objects.push_back(std::move(obj));
  }

  const Placed& target = placed[uniform_index(rng, 0, placed.size() - 1)];
  const auto r = row_token(target.cell.row), c = col_token(target.cell.col);
  switch (spec.family) {
    case Family::kCopyOne:
      s.question_tokens = {"what", "text", "at", r, c};
      s.answers = {target.token.text};
      break;
    case Family::kVocabLookup:
      s.question_tokens = {"what", "color", "is", "text", "at", r, c};
      s.answers = {spec.words[target.cls]};
      break;
    case Family::kMixed:
      s.question_tokens = {"what", "color", "and", "text", "at", r, c};
      s.answers = {spec.words[target.cls] + " " + target.token.text};
      break;
    case Family::kCopyMulti: {
      std::vector<const Placed*> row;
      for (const auto& p : placed)
        if (p.cell.row == query_row) row.push_back(&p);
      // Reading order: by vertical center, then horizontal center.
      std::sort(row.begin(), row.end(), [](const Placed* a, const Placed* b) {
        const double ay = a->token.bbox.y_min + a->token.bbox.y_max;
        const double by = b->token.bbox.y_min + b->token.bbox.y_max;
        if (ay != by) return ay < by;
        return a->token.bbox.x_min + a->token.bbox.x_max < b->token.bbox.x_min + b->token.bbox.x_max;
      });
      std::string answer;
      for (const auto* p : row) answer += (answer.empty() ? "" : " ") + p->token.text;
      s.question_tokens = {"what", "is", "written", "in", row_token(query_row)};
      s.answers = {answer};
      break;
    }
  }
  return s;
}

void generate_dataset(const SynthSpec& spec, std::size_t n_train, std::size_t n_val,
                      const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw RuntimeFailure("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<feat::ScenePack> train, val;
  train.reserve(n_train);
  val.reserve(n_val);
  for (std::size_t i = 0; i < n_train; ++i) train.push_back(generate_example(spec, i));
  for (std::size_t i = 0; i < n_val; ++i) val.push_back(generate_example(spec, n_train + i));
  feat::save_manifest(make_manifest(spec), out_dir / feat::kManifestFile);
  feat::save_scene_pack(out_dir / feat::kTrainFile, train, feat::QuestionMode::kLearned);
  feat::save_scene_pack(out_dir / feat::kValFile, val, feat::QuestionMode::kLearned);
}

}  // namespace m4c::synth
