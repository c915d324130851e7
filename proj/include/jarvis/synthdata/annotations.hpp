#pragma once

#include "jarvis/evaluation/evaluate.hpp"
#include "jarvis/geometry/box.hpp"

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace jarvis {

/// One ground-truth box with all of its action labels.
struct AnnotatedBox {
  std::string clip_id;
  long timestamp = 0;
  BoundingBox box;
  std::vector<int> classes;

  bool operator==(const AnnotatedBox&) const = default;
};

// CSV rows, no header:
//   ground truth  clip_id,timestamp,x_lt,y_lt,x_rb,y_rb,class_id
//   predictions   clip_id,timestamp,x_lt,y_lt,x_rb,y_rb,class_id,score
// Coordinates carry six decimals; a multi-label box spans several rows.

/// Rows sharing clip, timestamp and box merge into one AnnotatedBox, in
/// order of first appearance. Malformed rows raise ParseError; boxes that
/// break the corner or range invariants raise ValidationError. Both name
/// the offending line.
std::vector<AnnotatedBox> parse_annotations(std::istream& in);
std::vector<AnnotatedBox> read_annotations(const std::filesystem::path& path);
void write_annotations(std::ostream& out, std::span<const AnnotatedBox> boxes);
void write_annotations(const std::filesystem::path& path, std::span<const AnnotatedBox> boxes);

std::vector<Detection> parse_predictions(std::istream& in);
std::vector<Detection> read_predictions(const std::filesystem::path& path);
void write_predictions(std::ostream& out, std::span<const Detection> dets);
void write_predictions(const std::filesystem::path& path, std::span<const Detection> dets);

/// One GroundTruthBox per (box, class).
std::vector<GroundTruthBox> flatten(std::span<const AnnotatedBox> boxes);

}  // namespace jarvis
