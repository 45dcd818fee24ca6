#pragma once

// Two-class evaluation metrics: confusion matrix, per-class
// precision/recall/F1, ROC curve with trapezoidal AUC, plus the history CSV
// and metrics report file formats.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "scalelab/errors.hpp"
#include "scalelab/model.hpp"

namespace scalelab {

// counts[i][j] = samples of true class i predicted as class j.
struct ConfusionMatrix {
    std::int64_t counts[2][2] = {{0, 0}, {0, 0}};

    std::int64_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
    double accuracy() const {
        const std::int64_t t = total();
        return t == 0 ? 0.0 : static_cast<double>(counts[0][0] + counts[1][1]) / static_cast<double>(t);
    }
};

inline ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size())
        throw ValueError("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                         std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm;
    for (size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i], y = labels[i];
        if (p != 0 && p != 1) throw ValueError("confusion: prediction " + std::to_string(p) + " outside {0,1}");
        if (y != 0 && y != 1) throw ValueError("confusion: label " + std::to_string(y) + " outside {0,1}");
        ++cm.counts[y][p];
    }
    return cm;
}

struct ClassScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // Set when the corresponding ratio was 0/0 and reported as 0.
    bool precision_degenerate = false;
    bool recall_degenerate = false;
    bool f1_degenerate = false;
};

struct ClassScores {
    ClassScore per_class[2];
};

// precision_k = c[k][k] / column k, recall_k = c[k][k] / row k,
// f1 = harmonic mean. 0/0 is reported as 0 with the degenerate flag set so
// evaluation never aborts on a constant classifier.
inline ClassScores class_scores(const ConfusionMatrix& cm) {
    ClassScores scores;
    for (int k = 0; k < 2; ++k) {
        ClassScore& s = scores.per_class[k];
        const std::int64_t tp = cm.counts[k][k];
        const std::int64_t predicted = cm.counts[0][k] + cm.counts[1][k];
        const std::int64_t actual = cm.counts[k][0] + cm.counts[k][1];
        if (predicted == 0)
            s.precision_degenerate = true;
        else
            s.precision = static_cast<double>(tp) / static_cast<double>(predicted);
        if (actual == 0)
            s.recall_degenerate = true;
        else
            s.recall = static_cast<double>(tp) / static_cast<double>(actual);
        if (s.precision + s.recall == 0.0)
            s.f1_degenerate = true;
        else
            s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    }
    return scores;
}

// Round-half-up to two decimals, for comparing against published tables.
inline double round2(double v) { return std::floor(v * 100.0 + 0.5) / 100.0; }

// ---------------------------------------------------------------------------
// ROC / AUC. Thresholds sweep the distinct scores in descending order with a
// +inf sentinel; a sample is predicted positive when score >= threshold.
// Under this convention the trapezoidal AUC equals the Mann-Whitney statistic
// (ties counted 1/2), which the tests exploit as an exact oracle.
// ---------------------------------------------------------------------------

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;  // starts at (0,0), ends at (1,1)
    double auc = 0.0;
};

inline RocCurve roc(const std::vector<float>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ValueError("roc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
    std::int64_t n_pos = 0, n_neg = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValueError("roc: label outside {0,1}");
        if (!(scores[i] >= 0.0f && scores[i] <= 1.0f))
            throw ValueError("roc: score " + std::to_string(scores[i]) + " outside [0,1]");
        labels[i] == 1 ? ++n_pos : ++n_neg;
    }
    if (n_pos == 0 || n_neg == 0) throw ValueError("roc: both classes must be present");

    std::vector<size_t> order(scores.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

    RocCurve curve;
    curve.points.push_back({0.0, 0.0});  // +inf sentinel threshold
    std::int64_t tp = 0, fp = 0, prev_tp = 0, prev_fp = 0;
    double area2 = 0.0;  // twice the area, in count space
    size_t i = 0;
    while (i < order.size()) {
        const float threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            labels[order[i]] == 1 ? ++tp : ++fp;
            ++i;
        }
        area2 += static_cast<double>(fp - prev_fp) * static_cast<double>(tp + prev_tp);
        curve.points.push_back(
            {static_cast<double>(fp) / static_cast<double>(n_neg), static_cast<double>(tp) / static_cast<double>(n_pos)});
        prev_tp = tp;
        prev_fp = fp;
    }
    curve.auc = area2 / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
    return curve;
}

// Trapezoidal integral of TPR over FPR.
inline double auc_trapezoid(const RocCurve& curve) {
    double area = 0.0;
    for (size_t i = 1; i < curve.points.size(); ++i) {
        const RocPoint& a = curve.points[i - 1];
        const RocPoint& b = curve.points[i];
        area += (b.fpr - a.fpr) * (a.tpr + b.tpr) * 0.5;
    }
    return area;
}

// ---------------------------------------------------------------------------
// History CSV: header epoch,train_loss,train_acc,val_loss,val_acc with six
// significant digits per value.
// ---------------------------------------------------------------------------

inline void history_write(const std::vector<EpochRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("history_write: cannot open " + path.string());
    out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
    char line[160];
    for (const EpochRecord& r : records) {
        std::snprintf(line, sizeof(line), "%d,%.6g,%.6g,%.6g,%.6g\n", r.epoch, r.train_loss, r.train_accuracy,
                      r.val_loss, r.val_accuracy);
        out << line;
    }
    if (!out) throw IoError("history_write: failed writing " + path.string());
}

inline std::vector<EpochRecord> history_read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("history_read: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("history_read: " + path.string() + " is empty");
    std::vector<EpochRecord> records;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        EpochRecord r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &r.epoch, &r.train_loss, &r.train_accuracy, &r.val_loss,
                        &r.val_accuracy) != 5)
            throw ParseError("history_read: " + path.string() + " row " + std::to_string(row) + " is malformed");
        records.push_back(r);
    }
    return records;
}

// ---------------------------------------------------------------------------
// Report files.
// ---------------------------------------------------------------------------

inline void roc_csv_write(const RocCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("roc_csv_write: cannot open " + path.string());
    out << "fpr,tpr\n";
    char line[80];
    for (const RocPoint& p : curve.points) {
        std::snprintf(line, sizeof(line), "%.17g,%.17g\n", p.fpr, p.tpr);
        out << line;
    }
    if (!out) throw IoError("roc_csv_write: failed writing " + path.string());
}

inline std::vector<RocPoint> roc_csv_read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("roc_csv_read: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("roc_csv_read: " + path.string() + " is empty");
    std::vector<RocPoint> points;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        RocPoint p;
        if (std::sscanf(line.c_str(), "%lf,%lf", &p.fpr, &p.tpr) != 2)
            throw ParseError("roc_csv_read: malformed row in " + path.string());
        points.push_back(p);
    }
    return points;
}

// Structured text: confusion counts, full-precision per-class scores,
// accuracy and AUC, then the ROC points as a two-column CSV block.
inline void metrics_report_write(const ConfusionMatrix& cm, const ClassScores& scores, const RocCurve& curve,
                                 const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("metrics_report_write: cannot open " + path.string());
    char buf[200];
    out << "samples: " << cm.total() << "\n";
    out << "confusion:\n";
    out << "  true0_pred0: " << cm.counts[0][0] << "\n";
    out << "  true0_pred1: " << cm.counts[0][1] << "\n";
    out << "  true1_pred0: " << cm.counts[1][0] << "\n";
    out << "  true1_pred1: " << cm.counts[1][1] << "\n";
    std::snprintf(buf, sizeof(buf), "accuracy: %.17g\n", cm.accuracy());
    out << buf;
    for (int k = 0; k < 2; ++k) {
        const ClassScore& s = scores.per_class[k];
        std::snprintf(buf, sizeof(buf), "class%d_precision: %.17g%s\n", k, s.precision,
                      s.precision_degenerate ? " (degenerate)" : "");
        out << buf;
        std::snprintf(buf, sizeof(buf), "class%d_recall: %.17g%s\n", k, s.recall,
                      s.recall_degenerate ? " (degenerate)" : "");
        out << buf;
        std::snprintf(buf, sizeof(buf), "class%d_f1: %.17g%s\n", k, s.f1, s.f1_degenerate ? " (degenerate)" : "");
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "auc: %.17g\n", curve.auc);
    out << buf;
    out << "roc:\n";
    out << "fpr,tpr\n";
    for (const RocPoint& p : curve.points) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.fpr, p.tpr);
        out << buf;
    }
    if (!out) throw IoError("metrics_report_write: failed writing " + path.string());
}

}  // namespace scalelab
