#include "m4c/cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "m4c/errors.hpp"

namespace m4c::cli {

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone:
      return "none";
    case Ablation::kNoVocab:
      return "no-vocab";
    case Ablation::kNoCopy:
      return "no-copy";
  }
  return "none";
}

Ablation ablation_from_string(std::string_view s) {
  if (s == "none") return Ablation::kNone;
  if (s == "no-vocab") return Ablation::kNoVocab;
  if (s == "no-copy") return Ablation::kNoCopy;
  throw ValidationError("unknown ablation '" + std::string(s) + "' (none|no-vocab|no-copy)");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ValidationError("bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ValidationError("bad value '" + std::string(text) + "' for " + std::string(key));
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

struct Field {
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field size_field(T RunConfig::*owner, std::size_t T::*member) {
  return {[=](RunConfig& c, std::string_view v) {
            (c.*owner).*member = parse_number<std::size_t>("value", v);
          },
          [=](const RunConfig& c) { return std::to_string((c.*owner).*member); }};
}

template <typename T>
Field double_field(T RunConfig::*owner, double T::*member) {
  return {[=](RunConfig& c, std::string_view v) {
            (c.*owner).*member = parse_number<double>("value", v);
          },
          [=](const RunConfig& c) { return fmt((c.*owner).*member); }};
}

Field top_size(std::size_t RunConfig::*member) {
  return {[=](RunConfig& c, std::string_view v) { c.*member = parse_number<std::size_t>("value", v); },
          [=](const RunConfig& c) { return std::to_string(c.*member); }};
}

const std::map<std::string, Field, std::less<>>& fields() {
  using M = model::M4CConfig;
  using S = train::LrSchedule;
  using O = train::TrainOptions;
  static const std::map<std::string, Field, std::less<>> table = {
      {"hidden_dim", size_field(&RunConfig::model, &M::hidden_dim)},
      {"num_layers", size_field(&RunConfig::model, &M::num_layers)},
      {"num_heads", size_field(&RunConfig::model, &M::num_heads)},
      {"ffn_dim", size_field(&RunConfig::model, &M::ffn_dim)},
      {"max_question_words", size_field(&RunConfig::model, &M::max_question_words)},
      {"max_objects", size_field(&RunConfig::model, &M::max_objects)},
      {"max_ocr_tokens", size_field(&RunConfig::model, &M::max_ocr_tokens)},
      {"max_decode_steps", size_field(&RunConfig::model, &M::max_decode_steps)},
      {"vocab_size", size_field(&RunConfig::model, &M::vocab_size)},
      {"dropout", double_field(&RunConfig::model, &M::dropout)},
      {"layer_norm_eps", double_field(&RunConfig::model, &M::layer_norm_eps)},
      {"init_std", double_field(&RunConfig::model, &M::init_std)},
      {"base_lr", double_field(&RunConfig::schedule, &S::base_lr)},
      {"warmup_factor", double_field(&RunConfig::schedule, &S::warmup_factor)},
      {"warmup_iters", size_field(&RunConfig::schedule, &S::warmup_iters)},
      {"decay_factor", double_field(&RunConfig::schedule, &S::decay_factor)},
      {"max_iters", size_field(&RunConfig::schedule, &S::max_iters)},
      {"decay_steps",
       {[](RunConfig& c, std::string_view v) {
          c.schedule.decay_steps.clear();
          std::string item;
          std::istringstream in{std::string(v)};
          while (std::getline(in, item, ',')) {
            const auto t = trim(item);
            if (!t.empty()) c.schedule.decay_steps.push_back(parse_number<std::size_t>("decay_steps", t));
          }
        },
        [](const RunConfig& c) {
          std::string s;
          for (auto step : c.schedule.decay_steps) s += (s.empty() ? "" : ",") + std::to_string(step);
          return s;
        }}},
      {"batch_size", size_field(&RunConfig::training, &O::batch_size)},
      {"clip_norm", double_field(&RunConfig::training, &O::clip_norm)},
      {"eval_interval", size_field(&RunConfig::training, &O::eval_interval)},
      {"eval_batch", size_field(&RunConfig::training, &O::eval_batch)},
      {"metric",
       {[](RunConfig& c, std::string_view v) { c.training.metric = metrics::metric_from_string(v); },
        [](const RunConfig& c) { return std::string(metrics::to_string(c.training.metric)); }}},
      {"seed",
       {[](RunConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); },
        [](const RunConfig& c) { return std::to_string(c.seed); }}},
      {"ablation",
       {[](RunConfig& c, std::string_view v) { c.ablation = ablation_from_string(v); },
        [](const RunConfig& c) { return std::string(to_string(c.ablation)); }}},
      {"enable_fixed_vocab",
       {[](RunConfig& c, std::string_view v) { c.model.enable_fixed_vocab = parse_bool("enable_fixed_vocab", v); },
        [](const RunConfig& c) { return std::string(c.model.enable_fixed_vocab ? "true" : "false"); }}},
      {"enable_ocr_copy",
       {[](RunConfig& c, std::string_view v) { c.model.enable_ocr_copy = parse_bool("enable_ocr_copy", v); },
        [](const RunConfig& c) { return std::string(c.model.enable_ocr_copy ? "true" : "false"); }}},
      {"data",
       {[](RunConfig& c, std::string_view v) { c.data = std::string(v); },
        [](const RunConfig& c) { return c.data.string(); }}},
      {"out",
       {[](RunConfig& c, std::string_view v) { c.out = std::string(v); },
        [](const RunConfig& c) { return c.out.string(); }}},
      {"family",
       {[](RunConfig& c, std::string_view v) { c.family = synth::family_from_string(v); },
        [](const RunConfig& c) { return std::string(synth::to_string(c.family)); }}},
      {"n_train", top_size(&RunConfig::n_train)},
      {"n_val", top_size(&RunConfig::n_val)},
      {"min_tokens", top_size(&RunConfig::min_tokens)},
      {"max_tokens", top_size(&RunConfig::max_tokens)},
      {"grid_rows", top_size(&RunConfig::grid_rows)},
      {"grid_cols", top_size(&RunConfig::grid_cols)},
  };
  return table;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto& table = fields();
  auto it = table.find(key);
  if (it == table.end()) throw ValidationError("unknown config key '" + std::string(key) + "'");
  try {
    it->second.set(*this, trim(value));
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(key) + ": " + e.what());
  }
}

void RunConfig::apply_ablation() {
  model.enable_fixed_vocab = ablation != Ablation::kNoVocab;
  model.enable_ocr_copy = ablation != Ablation::kNoCopy;
}

void read_run_config(std::istream& in, RunConfig& config) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", lineno);
    const auto key = trim(std::string_view(text).substr(0, eq));
    try {
      config.set(key, std::string_view(text).substr(eq + 1));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void load_run_config(const std::filesystem::path& path, RunConfig& config) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open config " + path.string());
  read_run_config(in, config);
}

void write_run_config(std::ostream& out, const RunConfig& config) {
  for (const auto& [key, field] : fields()) out << key << " = " << field.get(config) << '\n';
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write config " + path.string());
  write_run_config(out, config);
}

}  // namespace m4c::cli
