#include "fewview/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fewview/error.hpp"
#include "fewview/filters.hpp"

namespace fewview {

namespace {

using nlohmann::json;

bool in_bounds(const Vec2& p, const FrameInfo& f) {
  return p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= f.width - 1.0 && p.y() <= f.height - 1.0;
}

int view_index(const json& pair, const char* key, const std::vector<FrameInfo>& frames) {
  if (!pair.contains(key) || !pair[key].is_number_integer()) {
    throw Error(ErrorCode::ParseError, std::string("pair without integer '") + key + "'");
  }
  const long long v = pair[key].get<long long>();
  if (v < 0 || v >= static_cast<long long>(frames.size()) || !frames[v].train) {
    throw Error(ErrorCode::UnknownViewIndex, "match references view " + std::to_string(v));
  }
  return static_cast<int>(v);
}

}  // namespace

std::vector<MatchSet> parse_matches(const std::string& text,
                                    const std::vector<FrameInfo>& frames,
                                    const IngestOptions& options, IngestReport* report) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("match file: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("pairs") || !doc["pairs"].is_array()) {
    throw Error(ErrorCode::ParseError, "match file needs a 'pairs' array");
  }
  IngestReport local;
  std::vector<MatchSet> out;
  for (const json& pair : doc["pairs"]) {
    if (!pair.is_object()) throw Error(ErrorCode::ParseError, "pair is not an object");
    MatchSet set;
    set.view_i = view_index(pair, "i", frames);
    set.view_j = view_index(pair, "j", frames);
    if (set.view_i == set.view_j) throw Error(ErrorCode::ParseError, "pair with i == j");
    if (!pair.contains("matches") || !pair["matches"].is_array()) {
      throw Error(ErrorCode::ParseError, "pair without 'matches' array");
    }
    for (const json& row : pair["matches"]) {
      if (!row.is_array() || row.size() != 5) {
        throw Error(ErrorCode::ParseError, "match rows must have five numbers");
      }
      double v[5];
      for (int k = 0; k < 5; ++k) {
        if (!row[k].is_number()) throw Error(ErrorCode::ParseError, "non-numeric match entry");
        v[k] = row[k].get<double>();
        if (!std::isfinite(v[k])) throw Error(ErrorCode::ParseError, "non-finite match entry");
      }
      if (v[4] < 0.0 || v[4] > 1.0) throw Error(ErrorCode::ParseError, "confidence outside [0,1]");
      const Match m{Vec2(v[0], v[1]), Vec2(v[2], v[3]), v[4]};
      if (!in_bounds(m.pi, frames[set.view_i]) || !in_bounds(m.pj, frames[set.view_j])) {
        if (options.strict) {
          throw Error(ErrorCode::ParseError, "match outside image bounds in pair (" +
                                                 std::to_string(set.view_i) + ", " +
                                                 std::to_string(set.view_j) + ")");
        }
        ++local.out_of_bounds;
        continue;
      }
      if (m.confidence < options.min_confidence) {
        ++local.low_confidence;
        continue;
      }
      set.matches.push_back(m);
      ++local.kept;
    }
    if (!set.matches.empty()) out.push_back(std::move(set));
  }
  if (out.empty()) throw Error(ErrorCode::EmptyAfterFiltering, "no matches survive filtering");
  if (report) *report = local;
  return out;
}

std::vector<MatchSet> ingest_matches(const std::filesystem::path& path,
                                     const std::vector<FrameInfo>& frames,
                                     const IngestOptions& options, IngestReport* report) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_matches(ss.str(), frames, options, report);
}

std::string matches_to_json(const std::vector<MatchSet>& sets) {
  json pairs = json::array();
  for (const MatchSet& s : sets) {
    json rows = json::array();
    for (const Match& m : s.matches) {
      rows.push_back({m.pi.x(), m.pi.y(), m.pj.x(), m.pj.y(), m.confidence});
    }
    pairs.push_back({{"i", s.view_i}, {"j", s.view_j}, {"matches", std::move(rows)}});
  }
  return json{{"pairs", std::move(pairs)}}.dump();
}

void write_matches(const std::filesystem::path& path, const std::vector<MatchSet>& sets) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << matches_to_json(sets) << '\n';
}

std::vector<Vec2> harris_keypoints(const Image& gray, const MatchParams& p) {
  const int w = gray.width(), h = gray.height();
  Image gx, gy;
  sobel(gray, gx, gy);
  Image tensor(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double a = gx.at(x, y) / kSobelStepResponse, b = gy.at(x, y) / kSobelStepResponse;
      tensor.at(x, y, 0) = a * a;
      tensor.at(x, y, 1) = a * b;
      tensor.at(x, y, 2) = b * b;
    }
  }
  tensor = blur_replicate(tensor, gaussian_kernel(p.harris_sigma));
  Image response(w, h, 1);
  double max_r = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double a = tensor.at(x, y, 0), b = tensor.at(x, y, 1), c = tensor.at(x, y, 2);
      const double r = a * c - b * b - p.harris_k * (a + c) * (a + c);
      response.at(x, y) = r;
      max_r = std::max(max_r, r);
    }
  }
  std::vector<Vec2> out;
  if (max_r <= 1e-12) return out;
  const double threshold = p.harris_rel_threshold * max_r;
  const int margin = p.patch / 2 + 1;
  struct Candidate {
    double r;
    int x, y;
  };
  std::vector<Candidate> cands;
  for (int y = margin; y < h - margin; ++y) {
    for (int x = margin; x < w - margin; ++x) {
      const double r = response.at(x, y);
      if (r <= threshold) continue;
      bool is_max = true;
      for (int dy = -p.nms_radius; dy <= p.nms_radius && is_max; ++dy) {
        for (int dx = -p.nms_radius; dx <= p.nms_radius; ++dx) {
          const int xx = std::clamp(x + dx, 0, w - 1), yy = std::clamp(y + dy, 0, h - 1);
          if (xx == x && yy == y) continue;
          const double o = response.at(xx, yy);
          // Plateaus resolve to the first pixel in scan order.
          if (o > r || (o == r && (yy < y || (yy == y && xx < x)))) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) cands.push_back({r, x, y});
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.r > b.r; });
  if (static_cast<int>(cands.size()) > p.max_keypoints) cands.resize(p.max_keypoints);
  for (const Candidate& c : cands) out.emplace_back(c.x, c.y);
  return out;
}

namespace {

// Zero-mean unit-norm patch around an integer pixel; empty if flat.
std::vector<double> normalized_patch(const Image& gray, int cx, int cy, int radius) {
  std::vector<double> v;
  v.reserve((2 * radius + 1) * (2 * radius + 1));
  double mean = 0.0;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const int x = std::clamp(cx + dx, 0, gray.width() - 1);
      const int y = std::clamp(cy + dy, 0, gray.height() - 1);
      v.push_back(gray.at(x, y));
      mean += v.back();
    }
  }
  mean /= static_cast<double>(v.size());
  double norm = 0.0;
  for (double& x : v) {
    x -= mean;
    norm += x * x;
  }
  if (norm < 1e-12) return {};
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) return -1.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Vertex offset of the parabola through (-1, m), (0, c), (1, p).
double parabola_peak(double m, double c, double p) {
  const double denom = m - 2.0 * c + p;
  if (denom >= 0.0) return 0.0;
  return std::clamp(0.5 * (m - p) / denom, -0.5, 0.5);
}

}  // namespace

MatchSet builtin_match(const Image& image_a, const Image& image_b, const MatchParams& p) {
  if (p.patch < 3 || p.patch % 2 == 0) throw Error(ErrorCode::ConfigError, "patch size must be odd and >= 3");
  const Image ga = to_gray(image_a), gb = to_gray(image_b);
  const int radius = p.patch / 2;
  const std::vector<Vec2> ka = harris_keypoints(ga, p), kb = harris_keypoints(gb, p);
  std::vector<std::vector<double>> pa, pb;
  for (const Vec2& k : ka) pa.push_back(normalized_patch(ga, int(k.x()), int(k.y()), radius));
  for (const Vec2& k : kb) pb.push_back(normalized_patch(gb, int(k.x()), int(k.y()), radius));

  const std::size_t na = ka.size(), nb = kb.size();
  std::vector<double> scores(na * nb);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) scores[i * nb + j] = dot(pa[i], pb[j]);
  }
  auto best_in_b = [&](std::size_t i) {
    std::size_t best = nb;
    for (std::size_t j = 0; j < nb; ++j) {
      if (best == nb || scores[i * nb + j] > scores[i * nb + best]) best = j;
    }
    return best;
  };
  auto best_in_a = [&](std::size_t j) {
    std::size_t best = na;
    for (std::size_t i = 0; i < na; ++i) {
      if (best == na || scores[i * nb + j] > scores[best * nb + j]) best = i;
    }
    return best;
  };

  MatchSet out;
  for (std::size_t i = 0; i < na; ++i) {
    const std::size_t j = best_in_b(i);
    if (j == nb || best_in_a(j) != i) continue;
    const double s = scores[i * nb + j];
    if (s < p.min_ncc) continue;
    Vec2 pj = kb[j];
    if (s < 1.0 - 1e-9) {
      const int bx = int(pj.x()), by = int(pj.y());
      auto ncc_at = [&](int dx, int dy) {
        return dot(pa[i], normalized_patch(gb, bx + dx, by + dy, radius));
      };
      pj.x() += parabola_peak(ncc_at(-1, 0), s, ncc_at(1, 0));
      pj.y() += parabola_peak(ncc_at(0, -1), s, ncc_at(0, 1));
    }
    out.matches.push_back({ka[i], pj, std::clamp(s, 0.0, 1.0)});
  }
  if (out.matches.size() < p.min_matches) {
    throw Error(ErrorCode::TooFewKeypoints,
                "builtin matcher found " + std::to_string(out.matches.size()) + " matches");
  }
  return out;
}

}  // namespace fewview
