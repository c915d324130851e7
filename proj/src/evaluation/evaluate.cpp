#include "jarvis/evaluation/evaluate.hpp"

#include "jarvis/numerics/errors.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace jarvis {

ClassCatalog ClassCatalog::standard(int num_classes) {
  static const char* const kPose[] = {"stand", "sit", "walk", "bend"};
  static const char* const kPair[] = {"talk_to", "hand_shake", "hug", "fight"};
  static const char* const kObject[] = {"carry", "read", "answer_phone", "drink"};
  if (num_classes < 3 || num_classes % 3 != 0) throw ConfigError("class count must be a positive multiple of 3");
  const int per = num_classes / 3;
  ClassCatalog c;
  for (int k = 0; k < num_classes; ++k) {
    const int group = k / per, j = k % per;
    const char* const* table = group == 0 ? kPose : group == 1 ? kPair : kObject;
    const char* category = group == 0 ? "pose" : group == 1 ? "person_person" : "person_object";
    c.names.push_back(per == 4 ? table[j] : std::string(category) + "_" + std::to_string(j));
    c.categories.emplace_back(category);
  }
  return c;
}

std::vector<PrPoint> precision_recall(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                                      double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) throw ConfigError("IoU threshold must lie in (0, 1)");
  if (gts.empty()) throw ContractError("precision_recall needs at least one ground-truth box");

  std::map<std::pair<std::string, long>, std::vector<std::size_t>> by_frame;
  for (std::size_t g = 0; g < gts.size(); ++g) by_frame[{gts[g].clip_id, gts[g].timestamp}].push_back(g);

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });

  std::vector<char> used(gts.size(), 0);
  std::vector<PrPoint> curve;
  curve.reserve(dets.size());
  std::size_t tp = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const Detection& d = dets[order[rank]];
    if (!std::isfinite(d.score)) throw ValidationError("detection score is not finite");
    auto it = by_frame.find({d.clip_id, d.timestamp});
    if (it != by_frame.end()) {
      double best = -1.0;
      std::size_t best_g = 0;
      for (std::size_t g : it->second) {
        if (used[g]) continue;
        const double o = iou(d.box, gts[g].box);
        if (o > best) {
          best = o;
          best_g = g;
        }
      }
      if (best >= iou_thresh) {
        used[best_g] = 1;
        ++tp;
      }
    }
    curve.push_back({static_cast<double>(tp) / static_cast<double>(rank + 1),
                     static_cast<double>(tp) / static_cast<double>(gts.size())});
  }
  return curve;
}

std::optional<double> average_precision(std::span<const Detection> dets, std::span<const GroundTruthBox> gts,
                                        double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) throw ConfigError("IoU threshold must lie in (0, 1)");
  if (gts.empty()) return std::nullopt;
  std::vector<PrPoint> curve = precision_recall(dets, gts, iou_thresh);
  for (std::size_t i = curve.size(); i-- > 1;) curve[i - 1].precision = std::max(curve[i - 1].precision, curve[i].precision);
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : curve) {
    ap += (p.recall - prev_recall) * p.precision;
    prev_recall = p.recall;
  }
  return ap;
}

EvalReport evaluate(std::span<const Detection> dets, std::span<const GroundTruthBox> gts, const ClassCatalog& catalog,
                    double iou_thresh) {
  const int n = catalog.size();
  std::vector<std::vector<Detection>> det_by_class(n);
  std::vector<std::vector<GroundTruthBox>> gt_by_class(n);
  auto check = [&](int k, const char* what) {
    if (k < 0 || k >= n) throw ValidationError(std::string("unknown class id ") + std::to_string(k) + " in " + what);
  };
  for (const auto& d : dets) {
    check(d.class_id, "detections");
    det_by_class[d.class_id].push_back(d);
  }
  for (const auto& g : gts) {
    check(g.class_id, "ground truth");
    gt_by_class[g.class_id].push_back(g);
  }

  EvalReport r;
  r.num_gt = gts.size();
  r.num_det = dets.size();
  std::map<std::string, std::pair<double, int>> cat_sum;
  double sum = 0.0;
  int counted = 0;
  for (int k = 0; k < n; ++k) {
    ClassResult c;
    c.class_id = k;
    c.name = catalog.names[k];
    c.category = catalog.categories[k];
    c.num_gt = gt_by_class[k].size();
    c.num_det = det_by_class[k].size();
    c.ap = average_precision(det_by_class[k], gt_by_class[k], iou_thresh);
    if (c.ap) {
      sum += *c.ap;
      ++counted;
      cat_sum[c.category].first += *c.ap;
      cat_sum[c.category].second += 1;
    }
    r.classes.push_back(std::move(c));
  }
  r.mean_ap = counted > 0 ? sum / counted : 0.0;
  for (const auto& [cat, s] : cat_sum) r.category_ap[cat] = s.first / s.second;
  return r;
}

void write_report_csv(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << "class_id,class_name,category,ap,num_gt,num_det\n";
  for (const auto& c : report.classes) {
    out << c.class_id << ',' << c.name << ',' << c.category << ',';
    if (c.ap) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", *c.ap);
      out << buf;
    }
    out << ',' << c.num_gt << ',' << c.num_det << '\n';
  }
  if (!out) throw IoError("failed writing report " + path.string());
}

std::string report_summary(const EvalReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "frame-mAP@0.5  " << report.mean_ap << "\n";
  for (const auto& [cat, ap] : report.category_ap) os << "  " << std::left << std::setw(14) << cat << ap << "\n";
  os << "ground truth   " << report.num_gt << "\n";
  os << "detections     " << report.num_det << "\n";
  for (const auto& c : report.classes) {
    os << "  " << std::setw(3) << c.class_id << " " << std::setw(14) << c.name;
    if (c.ap) os << *c.ap;
    else os << "   n/a";
    os << "  (gt " << c.num_gt << ", det " << c.num_det << ")\n";
  }
  return os.str();
}

}  // namespace jarvis
