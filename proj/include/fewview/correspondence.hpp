#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "fewview/geometry.hpp"
#include "fewview/image.hpp"

namespace fewview {

// Pixel coordinates: origin top-left, x right, y down, pixel centers at
// integer coordinates.
struct Match {
  Vec2 pi = Vec2::Zero();
  Vec2 pj = Vec2::Zero();
  double confidence = 1.0;
};

struct MatchSet {
  int view_i = 0;
  int view_j = 0;
  std::vector<Match> matches;
};

// Size of each frame of the dataset, indexed like the match file, and
// whether it may be referenced by matches.
struct FrameInfo {
  int width = 0;
  int height = 0;
  bool train = true;
};

struct IngestOptions {
  double min_confidence = 0.5;
  bool strict = false;  // out-of-bounds entries raise instead of being dropped
};

struct IngestReport {
  std::size_t kept = 0;
  std::size_t low_confidence = 0;
  std::size_t out_of_bounds = 0;
};

// {"pairs":[{"i":int,"j":int,"matches":[[ui,vi,uj,vj,conf],...]}]}
std::vector<MatchSet> parse_matches(const std::string& json_text,
                                    const std::vector<FrameInfo>& frames,
                                    const IngestOptions& options = {},
                                    IngestReport* report = nullptr);
std::vector<MatchSet> ingest_matches(const std::filesystem::path& path,
                                     const std::vector<FrameInfo>& frames,
                                     const IngestOptions& options = {},
                                     IngestReport* report = nullptr);
std::string matches_to_json(const std::vector<MatchSet>& sets);
void write_matches(const std::filesystem::path& path, const std::vector<MatchSet>& sets);

struct MatchParams {
  int patch = 9;  // odd
  double harris_k = 0.04;
  double harris_sigma = 1.0;
  double harris_rel_threshold = 0.01;
  int nms_radius = 2;
  int max_keypoints = 600;
  double min_ncc = 0.8;
  std::size_t min_matches = 8;
};

// Harris corners on both images, matched by ZNCC with a mutual-best check
// and quadratic sub-pixel refinement on the image_b side. Throws
// TooFewKeypoints when fewer than min_matches survive.
MatchSet builtin_match(const Image& image_a, const Image& image_b,
                       const MatchParams& params = {});

// Keypoint detector used by builtin_match; exposed for testing.
std::vector<Vec2> harris_keypoints(const Image& gray, const MatchParams& params);

}  // namespace fewview
