#include "pcscnet/metrics.hpp"

#include <sstream>
#include <stdexcept>

namespace pcsc {

void ConfusionMatrix::add(int truth, int predicted) {
    if (truth < 0) return; // ignored point
    if (truth >= classes || predicted < 0 || predicted >= classes)
        throw std::invalid_argument("confusion: label out of range: truth=" + std::to_string(truth) +
                                    " pred=" + std::to_string(predicted));
    ++counts[std::size_t(truth) * classes + predicted];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.classes != classes) throw std::invalid_argument("confusion: merge class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (auto c : counts) t += c;
    return t;
}

int64_t ConfusionMatrix::row_sum(int truth) const {
    int64_t t = 0;
    for (int j = 0; j < classes; ++j) t += at(truth, j);
    return t;
}

int64_t ConfusionMatrix::col_sum(int predicted) const {
    int64_t t = 0;
    for (int i = 0; i < classes; ++i) t += at(i, predicted);
    return t;
}

EvalReport make_report(const ConfusionMatrix& confusion, double points_per_sec, double scans_per_sec) {
    EvalReport r;
    r.confusion = confusion;
    r.points_per_sec = points_per_sec;
    r.scans_per_sec = scans_per_sec;
    const int c = confusion.classes;
    r.iou.assign(c, 0.0);
    r.present.assign(c, false);
    double sum = 0.0;
    int present_count = 0;
    int64_t correct = 0;
    for (int k = 0; k < c; ++k) {
        const int64_t tp = confusion.at(k, k);
        const int64_t fp = confusion.col_sum(k) - tp;
        const int64_t fn = confusion.row_sum(k) - tp;
        correct += tp;
        if (tp + fp + fn == 0) continue; // absent from truth and prediction
        r.present[k] = true;
        r.iou[k] = double(tp) / double(tp + fp + fn);
        sum += r.iou[k];
        ++present_count;
    }
    r.miou = present_count > 0 ? sum / double(present_count) : 0.0;
    r.accuracy = confusion.total() > 0 ? double(correct) / double(confusion.total()) : 0.0;
    return r;
}

std::string format_report_table(const EvalReport& report, const std::vector<std::string>& class_names) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed;
    os << "class                iou\n";
    for (int k = 0; k < report.confusion.classes; ++k) {
        const std::string name = k < int(class_names.size()) ? class_names[k] : "class_" + std::to_string(k);
        os << name;
        for (std::size_t i = name.size(); i < 21; ++i) os << ' ';
        if (report.present[k])
            os << report.iou[k] << "\n";
        else
            os << "absent\n";
    }
    os << "mIoU                 " << report.miou << "\n";
    os << "accuracy             " << report.accuracy << "\n";
    os << "points/sec           " << report.points_per_sec << "\n";
    os << "scans/sec            " << report.scans_per_sec << "\n";
    return os.str();
}

std::string format_report_kv(const EvalReport& report) {
    std::ostringstream os;
    os.precision(12);
    os << "miou=" << report.miou << "\n";
    os << "accuracy=" << report.accuracy << "\n";
    os << "points_per_sec=" << report.points_per_sec << "\n";
    os << "scans_per_sec=" << report.scans_per_sec << "\n";
    for (int k = 0; k < report.confusion.classes; ++k)
        if (report.present[k]) os << "iou_" << k << "=" << report.iou[k] << "\n";
    os << "evaluated_points=" << report.confusion.total() << "\n";
    return os.str();
}

} // namespace pcsc
