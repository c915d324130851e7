#include "jarvis/synthdata/annotations.hpp"

#include "jarvis/numerics/errors.hpp"

#include <charconv>
#include <cstdio>
#include <tuple>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace jarvis {

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
T parse_number(const std::string& s, const char* field, std::size_t line) {
  T v{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || s.empty()) throw ParseError(std::string("bad ") + field + " '" + s + "'", line);
  return v;
}

struct Row {
  std::string clip_id;
  long timestamp = 0;
  BoundingBox box;
  int class_id = 0;
  double score = 0.0;
};

Row parse_row(const std::string& raw, std::size_t line, bool with_score) {
  std::string text = raw;
  if (!text.empty() && text.back() == '\r') text.pop_back();
  const auto cells = split_row(text);
  const std::size_t want = with_score ? 8 : 7;
  if (cells.size() != want) {
    throw ParseError("expected " + std::to_string(want) + " fields, found " + std::to_string(cells.size()), line);
  }
  Row r;
  r.clip_id = cells[0];
  if (r.clip_id.empty()) throw ParseError("empty clip id", line);
  r.timestamp = parse_number<long>(cells[1], "timestamp", line);
  const double x0 = parse_number<double>(cells[2], "x_lt", line), y0 = parse_number<double>(cells[3], "y_lt", line);
  const double x1 = parse_number<double>(cells[4], "x_rb", line), y1 = parse_number<double>(cells[5], "y_rb", line);
  r.class_id = parse_number<int>(cells[6], "class_id", line);
  const double coords[] = {x0, y0, x1, y1};
  for (int i = 0; i < 4; ++i) {
    if (!(coords[i] >= 0.0 && coords[i] <= 1.0)) {
      throw ValidationError("line " + std::to_string(line) + ": coordinate " + cells[2 + i] + " out of [0, 1]");
    }
  }
  if (!(x0 < x1 && y0 < y1)) {
    throw ValidationError("line " + std::to_string(line) + ": box corners out of order (x_rb < x_lt or y_rb < y_lt)");
  }
  r.box = BoundingBox{x0, y0, x1, y1};
  if (with_score) {
    r.score = parse_number<double>(cells[7], "score", line);
    if (!std::isfinite(r.score)) throw ValidationError("line " + std::to_string(line) + ": score is not finite");
  }
  return r;
}

template <typename Fn>
void for_each_row(std::istream& in, bool with_score, Fn fn) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty() || line == "\r") continue;
    fn(parse_row(line, n, with_score));
  }
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_prefix(std::ostream& out, const std::string& clip, long ts, const BoundingBox& b) {
  char ts_buf[24];
  std::snprintf(ts_buf, sizeof ts_buf, "%04ld", ts);
  out << clip << ',' << ts_buf << ',' << fmt6(b.x_lt) << ',' << fmt6(b.y_lt) << ',' << fmt6(b.x_rb) << ','
      << fmt6(b.y_rb);
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<AnnotatedBox> parse_annotations(std::istream& in) {
  std::vector<AnnotatedBox> out;
  std::map<std::tuple<std::string, long, double, double, double, double>, std::size_t> index;
  for_each_row(in, false, [&](const Row& r) {
    const auto key = std::make_tuple(r.clip_id, r.timestamp, r.box.x_lt, r.box.y_lt, r.box.x_rb, r.box.y_rb);
    auto [it, fresh] = index.emplace(key, out.size());
    if (fresh) out.push_back(AnnotatedBox{r.clip_id, r.timestamp, r.box, {}});
    out[it->second].classes.push_back(r.class_id);
  });
  return out;
}

std::vector<AnnotatedBox> read_annotations(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_annotations(in);
}

void write_annotations(std::ostream& out, std::span<const AnnotatedBox> boxes) {
  for (const auto& b : boxes) {
    for (int c : b.classes) {
      write_prefix(out, b.clip_id, b.timestamp, b.box);
      out << ',' << c << '\n';
    }
  }
}

void write_annotations(const std::filesystem::path& path, std::span<const AnnotatedBox> boxes) {
  auto out = open_out(path);
  write_annotations(out, boxes);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Detection> parse_predictions(std::istream& in) {
  std::vector<Detection> out;
  for_each_row(in, true, [&](const Row& r) { out.push_back(Detection{r.clip_id, r.timestamp, r.box, r.class_id, r.score}); });
  return out;
}

std::vector<Detection> read_predictions(const std::filesystem::path& path) {
  auto in = open_in(path);
  return parse_predictions(in);
}

void write_predictions(std::ostream& out, std::span<const Detection> dets) {
  for (const auto& d : dets) {
    write_prefix(out, d.clip_id, d.timestamp, d.box);
    out << ',' << d.class_id << ',' << fmt6(d.score) << '\n';
  }
}

void write_predictions(const std::filesystem::path& path, std::span<const Detection> dets) {
  auto out = open_out(path);
  write_predictions(out, dets);
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<GroundTruthBox> flatten(std::span<const AnnotatedBox> boxes) {
  std::vector<GroundTruthBox> out;
  for (const auto& b : boxes)
    for (int c : b.classes) out.push_back(GroundTruthBox{b.clip_id, b.timestamp, b.box, c});
  return out;
}

}  // namespace jarvis
