#include "m4c/metrics/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "m4c/errors.hpp"

namespace m4c::metrics {

namespace {

std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    char32_t cp = c;
    if (c >= 0xF0 && c < 0xF8) {
      len = 4;
      cp = c & 0x07;
    } else if (c >= 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if (c >= 0xC0) {
      len = 2;
      cp = c & 0x1F;
    }
    bool ok = len > 1 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    if (len > 1 && !ok) {
      // Malformed sequence: count the lead byte as its own symbol.
      out.push_back(c);
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

}  // namespace

std::size_t levenshtein(std::string_view a, std::string_view b) {
  const auto x = decode_utf8(a), y = decode_utf8(b);
  std::vector<std::size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (std::size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= y.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

std::string normalize_answer(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

double anls(std::string_view pred, std::span<const std::string> gts) {
  if (gts.empty()) throw ValidationError("anls: no ground truth answers");
  const auto p = normalize_answer(pred);
  const auto plen = decode_utf8(p).size();
  double best = 0.0;
  for (const auto& gt : gts) {
    const auto g = normalize_answer(gt);
    const auto longest = std::max(plen, decode_utf8(g).size());
    const double sim =
        longest == 0 ? 1.0
                     : 1.0 - static_cast<double>(levenshtein(p, g)) / static_cast<double>(longest);
    best = std::max(best, sim);
  }
  return best < kAnlsThreshold ? 0.0 : best;
}

double vqa_soft_accuracy(std::string_view pred, std::span<const std::string> gts) {
  if (gts.size() != 10) {
    throw ValidationError("vqa_soft_accuracy: need 10 ground truths, got " +
                          std::to_string(gts.size()));
  }
  const auto p = normalize_answer(pred);
  std::vector<bool> hit;
  std::size_t matches = 0;
  for (const auto& gt : gts) {
    hit.push_back(normalize_answer(gt) == p);
    matches += hit.back() ? 1 : 0;
  }
  double total = 0.0;
  for (bool h : hit) {
    const auto in_subset = matches - (h ? 1 : 0);
    total += std::min(1.0, static_cast<double>(in_subset) / 3.0);
  }
  return total / 10.0;
}

double exact_match(std::string_view pred, std::span<const std::string> gts) {
  const auto p = normalize_answer(pred);
  for (const auto& gt : gts)
    if (normalize_answer(gt) == p) return 1.0;
  return 0.0;
}

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::kAnls:
      return "anls";
    case Metric::kVqa:
      return "vqa";
    case Metric::kExact:
      return "exact";
  }
  return "exact";
}

Metric metric_from_string(std::string_view s) {
  if (s == "anls") return Metric::kAnls;
  if (s == "vqa") return Metric::kVqa;
  if (s == "exact") return Metric::kExact;
  throw ValidationError("unknown metric '" + std::string(s) + "'");
}

double score(Metric m, std::string_view pred, std::span<const std::string> gts) {
  switch (m) {
    case Metric::kAnls:
      return anls(pred, gts);
    case Metric::kVqa:
      return vqa_soft_accuracy(pred, gts);
    case Metric::kExact:
      return exact_match(pred, gts);
  }
  return 0.0;
}

Report evaluate_set(const std::map<std::string, std::string>& predictions,
                    const std::map<std::string, std::vector<std::string>>& ground_truth,
                    Metric metric, std::ostream* warn) {
  for (const auto& [id, _] : predictions) {
    if (!ground_truth.contains(id)) {
      throw ValidationError("prediction for unknown id '" + id + "'");
    }
  }
  Report r;
  r.metric = metric;
  double total = 0.0;
  for (const auto& [id, gts] : ground_truth) {
    EvalRecord rec{id, "", gts, 0.0};
    auto it = predictions.find(id);
    if (it == predictions.end()) {
      ++r.missing;
      if (warn) *warn << "warning: no prediction for " << id << ", scoring 0\n";
    } else {
      rec.prediction = it->second;
      rec.score = score(metric, rec.prediction, gts);
    }
    total += rec.score;
    r.records.push_back(std::move(rec));
  }
  r.count = r.records.size();
  r.mean = r.count == 0 ? 0.0 : total / static_cast<double>(r.count);
  return r;
}

void write_report(std::ostream& out, const Report& r) {
  out << "metric " << to_string(r.metric) << '\n'
      << "count " << r.count << '\n'
      << "mean " << std::setprecision(17) << r.mean << '\n'
      << "missing " << r.missing << '\n';
  for (const auto& rec : r.records) out << rec.id << '\t' << rec.score << '\n';
}

void save_report(const std::filesystem::path& path, const Report& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write report " + path.string());
  write_report(out, report);
}

}  // namespace m4c::metrics
