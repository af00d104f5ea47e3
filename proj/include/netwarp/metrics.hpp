#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "netwarp/tensor.hpp"

namespace netwarp {

/// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes, int ignore_label = 255);

  /// Counts every pixel whose ground truth is not the ignore label. When `mask`
  /// is given only pixels with a non-zero mask entry are counted.
  void add(const LabelMap& pred, const LabelMap& gt, const std::vector<std::uint8_t>* mask = nullptr);
  void merge(const ConfusionMatrix& other);

  int num_classes() const { return k_; }
  std::uint64_t at(int gt, int pred) const { return counts_[gt * k_ + pred]; }
  std::uint64_t total() const;

 private:
  int k_;
  int ignore_;
  std::vector<std::uint64_t> counts_;
};

struct ClassScores {
  /// NaN where the class is undefined (no TP, FP or FN).
  std::vector<double> per_class;
  /// Mean over defined classes; NaN when none are defined.
  double mean = 0.0;
  /// False when nothing could be scored (e.g. an empty trimap band).
  bool defined = false;
};

/// TP / (TP + FP + FN) per class.
ClassScores iou(const ConfusionMatrix& conf);

/// Pixels within Chebyshev distance band_px of a ground-truth boundary pixel (one
/// whose 4-neighbourhood contains a different label).
std::vector<std::uint8_t> trimap_mask(const LabelMap& gt, int band_px);

/// IoU restricted to the trimap band.
ClassScores trimap_iou(const LabelMap& pred, const LabelMap& gt, int num_classes, int band_px = 2);

/// Streaming trimap accumulation over many frames.
class TrimapAccumulator {
 public:
  TrimapAccumulator(int num_classes, int band_px);
  void add(const LabelMap& pred, const LabelMap& gt);
  ClassScores scores() const { return iou(conf_); }
  const ConfusionMatrix& confusion() const { return conf_; }

 private:
  int band_;
  ConfusionMatrix conf_;
};

/// Mean instance size (pixels) per class over a set of frames; 0 where the class
/// has no instances. Instance id 0 means "no instance".
std::vector<double> class_average_instance_sizes(const std::vector<LabelMap>& labels,
                                                 const std::vector<LabelMap>& instances,
                                                 int num_classes);

/// Instance-weighted IoU: iTP / (iTP + FP + iFN), where each ground-truth pixel of
/// an instance contributes avg_size(class) / size(instance). Only classes listed
/// in `instance_classes` are scored; others are NaN.
class IiouAccumulator {
 public:
  IiouAccumulator(int num_classes, std::vector<int> instance_classes,
                  std::vector<double> class_avg_sizes, int ignore_label = 255);
  void add(const LabelMap& pred, const LabelMap& gt, const LabelMap& instances);
  ClassScores scores() const;

 private:
  int k_;
  int ignore_;
  std::vector<bool> instance_class_;
  std::vector<double> avg_;
  std::vector<double> itp_, ifn_, fp_;
};

ClassScores iiou(const LabelMap& pred, const LabelMap& gt, const LabelMap& instances,
                 int num_classes, const std::vector<int>& instance_classes,
                 const std::vector<double>& class_avg_sizes);

/// One row of an evaluation table.
struct MetricsReport {
  std::string name;
  ClassScores iou;
  ClassScores tiou;
  ClassScores iiou;
  int band_px = 2;
  std::uint64_t pixels = 0;
};

/// Human-readable table: one line per report with mean IoU / tIoU / iIoU.
void write_report_text(std::ostream& out, const std::vector<MetricsReport>& reports);
/// CSV with columns row,class,iou,tiou,iiou; class "mean" carries the means.
void write_report_csv(std::ostream& out, const std::vector<MetricsReport>& reports);

}  // namespace netwarp
