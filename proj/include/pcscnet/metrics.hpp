#pragma once
#include <cstdint>
#include <string>
#include <vector>

namespace pcsc {

// Rows are ground truth, columns are predictions. Ignored points (label < 0)
// never enter the matrix.
struct ConfusionMatrix {
    int classes = 0;
    std::vector<int64_t> counts; // classes x classes

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int c) : classes(c), counts(std::size_t(c) * c, 0) {}

    void add(int truth, int predicted);
    void merge(const ConfusionMatrix& other);
    int64_t at(int truth, int predicted) const { return counts[std::size_t(truth) * classes + predicted]; }
    int64_t total() const;
    int64_t row_sum(int truth) const;
    int64_t col_sum(int predicted) const;
};

struct EvalReport {
    ConfusionMatrix confusion;
    std::vector<double> iou;     // per class; meaningful only where present
    std::vector<bool> present;   // class seen in truth or prediction
    double miou = 0.0;           // mean over present classes
    double points_per_sec = 0.0;
    double scans_per_sec = 0.0;
    double accuracy = 0.0;       // overall point accuracy
};

// IoU_c = TP / (TP + FP + FN); classes absent from both truth and prediction
// are excluded from the mean.
EvalReport make_report(const ConfusionMatrix& confusion, double points_per_sec, double scans_per_sec);

std::string format_report_table(const EvalReport& report, const std::vector<std::string>& class_names);
std::string format_report_kv(const EvalReport& report);

} // namespace pcsc
