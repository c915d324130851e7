#pragma once

#include "jarvis/geometry/box.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace jarvis {

/// One scored (box, class) pair on a keyframe.
struct Detection {
  std::string clip_id;
  long timestamp = 0;
  BoundingBox box;
  int class_id = 0;
  double score = 0.0;
};

struct GroundTruthBox {
  std::string clip_id;
  long timestamp = 0;
  BoundingBox box;
  int class_id = 0;
};

/// Class names and their category ("pose", "person_person", "person_object").
struct ClassCatalog {
  std::vector<std::string> names;
  std::vector<std::string> categories;

  int size() const { return static_cast<int>(names.size()); }
  /// Thirds of the id range go to pose, person-person and person-object.
  static ClassCatalog standard(int num_classes);
};

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
};

/// Raw precision and recall after each detection in ranking order: detections
/// in descending score (ties keep input order) each claim the unmatched ground
/// truth of the same keyframe with the highest IoU (ties to the lower index)
/// if that IoU reaches the threshold. Requires at least one ground truth.
std::vector<PrPoint> precision_recall(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                                      double iou_thresh = 0.5);

/// Frame AP of one class: area under the precision envelope of
/// precision_recall over all recall points. Empty when there is no ground truth.
std::optional<double> average_precision(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                                        double iou_thresh = 0.5);

struct ClassResult {
  int class_id = 0;
  std::string name;
  std::string category;
  std::optional<double> ap;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
};

struct EvalReport {
  std::vector<ClassResult> classes;
  /// Mean over classes with at least one ground-truth box; 0 if none.
  double mean_ap = 0.0;
  std::map<std::string, double> category_ap;
  std::size_t num_gt = 0;
  std::size_t num_det = 0;
};

EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruthBox> gts, const ClassCatalog& catalog,
                    double iou_thresh = 0.5);

/// class_id,class_name,category,ap,num_gt,num_det
void write_report_csv(const std::filesystem::path& path, const EvalReport& report);
std::string report_summary(const EvalReport& report);

}  // namespace jarvis
