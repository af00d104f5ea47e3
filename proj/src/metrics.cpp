#include "netwarp/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>

namespace netwarp {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_same(const LabelMap& a, const LabelMap& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError(std::string(what) + ": label maps differ in size");
  }
}

ClassScores finish(std::vector<double> per_class) {
  ClassScores s;
  double sum = 0.0;
  int n = 0;
  for (double v : per_class) {
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  s.per_class = std::move(per_class);
  s.defined = n > 0;
  s.mean = n > 0 ? sum / n : kNaN;
  return s;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int num_classes, int ignore_label)
    : k_(num_classes), ignore_(ignore_label),
      counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 2) throw ValidationError("confusion matrix needs at least 2 classes");
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& gt,
                          const std::vector<std::uint8_t>* mask) {
  check_same(pred, gt, "confusion");
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    if (g == ignore_) continue;
    if (mask && !(*mask)[i]) continue;
    const int p = pred.labels[i];
    if (g < 0 || g >= k_ || p < 0 || p >= k_) {
      throw ValidationError("confusion: label out of range (gt " + std::to_string(g) + ", pred " +
                            std::to_string(p) + ")");
    }
    ++counts_[static_cast<std::size_t>(g) * k_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw DimensionError("confusion merge: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

ClassScores iou(const ConfusionMatrix& conf) {
  const int k = conf.num_classes();
  std::vector<double> per(static_cast<std::size_t>(k), kNaN);
  for (int c = 0; c < k; ++c) {
    std::uint64_t tp = conf.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += conf.at(o, c);
      fn += conf.at(c, o);
    }
    const std::uint64_t denom = tp + fp + fn;
    if (denom > 0) per[c] = static_cast<double>(tp) / static_cast<double>(denom);
  }
  return finish(std::move(per));
}

std::vector<std::uint8_t> trimap_mask(const LabelMap& gt, int band_px) {
  if (band_px < 1) throw ValidationError("trimap band must be >= 1 px");
  const long h = static_cast<long>(gt.height), w = static_cast<long>(gt.width);
  std::vector<std::uint8_t> boundary(gt.labels.size(), 0);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const int l = gt.at(y, x);
      const bool edge = (x > 0 && gt.at(y, x - 1) != l) || (x + 1 < w && gt.at(y, x + 1) != l) ||
                        (y > 0 && gt.at(y - 1, x) != l) || (y + 1 < h && gt.at(y + 1, x) != l);
      boundary[y * w + x] = edge ? 1 : 0;
    }
  }
  // Chebyshev dilation as two separable 1-D max filters.
  const long b = band_px;
  std::vector<std::uint8_t> rows(boundary.size(), 0), out(boundary.size(), 0);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      std::uint8_t m = 0;
      for (long d = std::max(0L, x - b); d <= std::min(w - 1, x + b) && !m; ++d) m = boundary[y * w + d];
      rows[y * w + x] = m;
    }
  }
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      std::uint8_t m = 0;
      for (long d = std::max(0L, y - b); d <= std::min(h - 1, y + b) && !m; ++d) m = rows[d * w + x];
      out[y * w + x] = m;
    }
  }
  return out;
}

ClassScores trimap_iou(const LabelMap& pred, const LabelMap& gt, int num_classes, int band_px) {
  TrimapAccumulator acc(num_classes, band_px);
  acc.add(pred, gt);
  return acc.scores();
}

TrimapAccumulator::TrimapAccumulator(int num_classes, int band_px)
    : band_(band_px), conf_(num_classes) {
  if (band_px < 1) throw ValidationError("trimap band must be >= 1 px");
}

void TrimapAccumulator::add(const LabelMap& pred, const LabelMap& gt) {
  const auto mask = trimap_mask(gt, band_);
  conf_.add(pred, gt, &mask);
}

std::vector<double> class_average_instance_sizes(const std::vector<LabelMap>& labels,
                                                 const std::vector<LabelMap>& instances,
                                                 int num_classes) {
  if (labels.size() != instances.size()) {
    throw DimensionError("instance statistics: label/instance frame counts differ");
  }
  std::vector<double> total(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> count(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t f = 0; f < labels.size(); ++f) {
    check_same(labels[f], instances[f], "instance statistics");
    std::map<int, std::pair<int, std::size_t>> inst;  // id -> (class, size)
    for (std::size_t i = 0; i < labels[f].labels.size(); ++i) {
      const int id = instances[f].labels[i];
      if (id == 0) continue;
      auto& e = inst[id];
      e.first = labels[f].labels[i];
      ++e.second;
    }
    for (const auto& [id, e] : inst) {
      if (e.first < 0 || e.first >= num_classes) continue;
      total[e.first] += static_cast<double>(e.second);
      count[e.first] += 1.0;
    }
  }
  std::vector<double> avg(total.size(), 0.0);
  for (std::size_t c = 0; c < avg.size(); ++c) avg[c] = count[c] > 0 ? total[c] / count[c] : 0.0;
  return avg;
}

IiouAccumulator::IiouAccumulator(int num_classes, std::vector<int> instance_classes,
                                 std::vector<double> class_avg_sizes, int ignore_label)
    : k_(num_classes), ignore_(ignore_label),
      instance_class_(static_cast<std::size_t>(num_classes), false),
      avg_(std::move(class_avg_sizes)), itp_(num_classes, 0.0), ifn_(num_classes, 0.0),
      fp_(num_classes, 0.0) {
  if (avg_.size() != static_cast<std::size_t>(num_classes)) {
    throw DimensionError("iIoU: need one average instance size per class");
  }
  for (int c : instance_classes) {
    if (c < 0 || c >= num_classes) throw ValidationError("iIoU: instance class out of range");
    if (!(avg_[c] > 0.0)) {
      throw ValidationError("iIoU: instance size of class " + std::to_string(c) + " must be positive");
    }
    instance_class_[c] = true;
  }
}

void IiouAccumulator::add(const LabelMap& pred, const LabelMap& gt, const LabelMap& instances) {
  check_same(pred, gt, "iIoU");
  check_same(gt, instances, "iIoU");
  std::map<int, std::size_t> size;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    if (gt.labels[i] != ignore_ && instances.labels[i] != 0) ++size[instances.labels[i]];
  }
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int g = gt.labels[i];
    if (g == ignore_) continue;
    const int p = pred.labels[i];
    if (g < 0 || g >= k_ || p < 0 || p >= k_) throw ValidationError("iIoU: label out of range");
    if (p != g && instance_class_[p]) fp_[p] += 1.0;
    if (!instance_class_[g]) continue;
    const int id = instances.labels[i];
    if (id == 0) {
      throw ValidationError("iIoU: pixel of instance class " + std::to_string(g) +
                            " has no instance id");
    }
    const double weight = avg_[g] / static_cast<double>(size.at(id));
    if (p == g) {
      itp_[g] += weight;
    } else {
      ifn_[g] += weight;
    }
  }
}

ClassScores IiouAccumulator::scores() const {
  std::vector<double> per(static_cast<std::size_t>(k_), kNaN);
  for (int c = 0; c < k_; ++c) {
    if (!instance_class_[c]) continue;
    const double denom = itp_[c] + fp_[c] + ifn_[c];
    if (denom > 0) per[c] = itp_[c] / denom;
  }
  return finish(std::move(per));
}

ClassScores iiou(const LabelMap& pred, const LabelMap& gt, const LabelMap& instances,
                 int num_classes, const std::vector<int>& instance_classes,
                 const std::vector<double>& class_avg_sizes) {
  IiouAccumulator acc(num_classes, instance_classes, class_avg_sizes);
  acc.add(pred, gt, instances);
  return acc.scores();
}

void write_report_text(std::ostream& out, const std::vector<MetricsReport>& reports) {
  std::size_t width = 4;
  for (const auto& r : reports) width = std::max(width, r.name.size());
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %9s  %9s  %9s\n", static_cast<int>(width), "mode", "mIoU",
                "mtIoU", "miIoU");
  out << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-*s  %9s  %9s  %9s\n", static_cast<int>(width),
                  r.name.c_str(), fmt(r.iou.mean * 100).c_str(), fmt(r.tiou.mean * 100).c_str(),
                  fmt(r.iiou.mean * 100).c_str());
    out << line;
  }
  if (!reports.empty()) out << "(tIoU band " << reports.front().band_px << " px; scores in %)\n";
}

void write_report_csv(std::ostream& out, const std::vector<MetricsReport>& reports) {
  out << "row,class,iou,tiou,iiou\n";
  for (const auto& r : reports) {
    const std::size_t k = r.iou.per_class.size();
    auto pick = [](const ClassScores& s, std::size_t c) {
      return c < s.per_class.size() ? s.per_class[c] : kNaN;
    };
    for (std::size_t c = 0; c < k; ++c) {
      out << r.name << ',' << c << ',' << fmt(pick(r.iou, c)) << ',' << fmt(pick(r.tiou, c)) << ','
          << fmt(pick(r.iiou, c)) << '\n';
    }
    out << r.name << ",mean," << fmt(r.iou.mean) << ',' << fmt(r.tiou.mean) << ','
        << fmt(r.iiou.mean) << '\n';
  }
}

}  // namespace netwarp
