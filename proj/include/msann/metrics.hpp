#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "msann/common.hpp"

namespace msann {

// Raw counts behind the per-class and per-image metrics. Per class j: images
// correctly labelled j, images predicted j, images with ground truth j. Per
// image i: correct predicted labels, predicted labels, ground-truth labels.
struct CountTable {
    std::int64_t C = 0, N = 0;
    std::vector<std::int64_t> ni_correct, ni_predicted, ni_truth;
    std::vector<std::int64_t> nl_correct, nl_predicted, nl_truth;
};

using LabelSets = std::vector<std::vector<std::int64_t>>;

inline CountTable tally(const LabelSets& predictions, const LabelSets& truth, std::int64_t C) {
    if (predictions.size() != truth.size())
        throw DimensionError("tally: " + std::to_string(predictions.size()) + " predictions vs " +
                             std::to_string(truth.size()) + " truth records");
    CountTable t;
    t.C = C;
    t.N = static_cast<std::int64_t>(predictions.size());
    t.ni_correct.assign(static_cast<std::size_t>(C), 0);
    t.ni_predicted.assign(static_cast<std::size_t>(C), 0);
    t.ni_truth.assign(static_cast<std::size_t>(C), 0);
    t.nl_correct.resize(predictions.size());
    t.nl_predicted.resize(predictions.size());
    t.nl_truth.resize(predictions.size());

    for (std::size_t i = 0; i < predictions.size(); ++i) {
        std::set<std::int64_t> pred(predictions[i].begin(), predictions[i].end());
        std::set<std::int64_t> gt(truth[i].begin(), truth[i].end());
        for (auto j : pred)
            if (j < 0 || j >= C)
                throw DimensionError("tally: predicted label " + std::to_string(j) +
                                     " out of range for C=" + std::to_string(C));
        for (auto j : gt)
            if (j < 0 || j >= C)
                throw DimensionError("tally: ground-truth label " + std::to_string(j) +
                                     " out of range for C=" + std::to_string(C));
        std::int64_t correct = 0;
        for (auto j : pred) {
            ++t.ni_predicted[static_cast<std::size_t>(j)];
            if (gt.count(j)) {
                ++t.ni_correct[static_cast<std::size_t>(j)];
                ++correct;
            }
        }
        for (auto j : gt) ++t.ni_truth[static_cast<std::size_t>(j)];
        t.nl_correct[i] = correct;
        t.nl_predicted[i] = static_cast<std::int64_t>(pred.size());
        t.nl_truth[i] = static_cast<std::int64_t>(gt.size());
    }
    return t;
}

// All scores in percent. H-F1 is the harmonic mean of C-F1 and I-F1.
struct MetricsReport {
    double c_p = 0, c_r = 0, c_f1 = 0;
    double i_p = 0, i_r = 0, i_f1 = 0;
    double h_f1 = 0;
    std::optional<double> lqp_accuracy;  // percent
    std::optional<double> lqp_mse;       // raw squared error
    bool all_zero_warning = false;
};

// Harmonic mean, 2ab/(a+b); scale-invariant, so it applies to percentages
// directly. Zero when both inputs are zero.
inline double harmonic_f1(double a, double b) {
    if (a + b <= 0.0) return 0.0;
    return 2.0 * a * b / (a + b);
}

// Per-class terms with a zero denominator contribute 0 to the class average;
// the overall denominators fall back to 0 as well. This keeps the metrics
// total over classes that are never predicted or absent from the truth.
inline MetricsReport compute_metrics(const CountTable& t) {
    MetricsReport r;
    if (t.C < 1) throw DimensionError("compute_metrics: count table has no classes");
    double cp = 0.0, cr = 0.0;
    for (std::int64_t j = 0; j < t.C; ++j) {
        const auto js = static_cast<std::size_t>(j);
        if (t.ni_predicted[js] > 0)
            cp += static_cast<double>(t.ni_correct[js]) / static_cast<double>(t.ni_predicted[js]);
        if (t.ni_truth[js] > 0)
            cr += static_cast<double>(t.ni_correct[js]) / static_cast<double>(t.ni_truth[js]);
    }
    cp /= static_cast<double>(t.C);
    cr /= static_cast<double>(t.C);

    std::int64_t sum_correct = 0, sum_predicted = 0, sum_truth = 0;
    for (std::size_t i = 0; i < t.nl_correct.size(); ++i) {
        sum_correct += t.nl_correct[i];
        sum_predicted += t.nl_predicted[i];
        sum_truth += t.nl_truth[i];
    }
    const double ip = sum_predicted > 0
                          ? static_cast<double>(sum_correct) / static_cast<double>(sum_predicted)
                          : 0.0;
    const double ir = sum_truth > 0
                          ? static_cast<double>(sum_correct) / static_cast<double>(sum_truth)
                          : 0.0;

    r.c_p = 100.0 * cp;
    r.c_r = 100.0 * cr;
    r.c_f1 = harmonic_f1(r.c_p, r.c_r);
    r.i_p = 100.0 * ip;
    r.i_r = 100.0 * ir;
    r.i_f1 = harmonic_f1(r.i_p, r.i_r);
    r.h_f1 = harmonic_f1(r.c_f1, r.i_f1);
    r.all_zero_warning = sum_predicted == 0 && sum_truth == 0;
    return r;
}

// Accuracy compares clamp(round(m_hat), 1, max_quantity) against the true
// quantity; MSE compares the raw, unquantized predictions. Returned as
// (accuracy percent, mse).
inline std::pair<double, double> lqp_quality(const std::vector<double>& m_hat,
                                             const std::vector<double>& m,
                                             std::int64_t max_quantity) {
    if (m_hat.size() != m.size())
        throw DimensionError("lqp_quality: " + std::to_string(m_hat.size()) + " predictions vs " +
                             std::to_string(m.size()) + " truths");
    if (m_hat.empty()) return {0.0, 0.0};
    std::int64_t hits = 0;
    double se = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double rounded = std::round(m_hat[i]);  // half away from zero
        const double clamped =
            std::min(static_cast<double>(max_quantity), std::max(1.0, rounded));
        if (clamped == m[i]) ++hits;
        const double d = m_hat[i] - m[i];
        se += d * d;
    }
    return {100.0 * static_cast<double>(hits) / static_cast<double>(m.size()),
            se / static_cast<double>(m.size())};
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline const char* kMetricsCsvHeader =
    "model,C-P,C-R,C-F1,I-P,I-R,I-F1,H-F1,LQP-Acc,LQP-MSE";

inline std::string render_csv_row(const std::string& name, const MetricsReport& r) {
    std::string row = name;
    for (double v : {r.c_p, r.c_r, r.c_f1, r.i_p, r.i_r, r.i_f1, r.h_f1}) row += "," + fixed(v, 2);
    row += ",";
    if (r.lqp_accuracy) row += fixed(*r.lqp_accuracy, 2);
    row += ",";
    if (r.lqp_mse) row += fixed(*r.lqp_mse, 3);
    return row;
}

inline std::string report_render(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::string out = kMetricsCsvHeader;
    out += "\n";
    for (const auto& [name, r] : rows) {
        out += render_csv_row(name, r);
        out += "\n";
    }
    return out;
}

inline std::string report_render(const MetricsReport& r) { return report_render({{"report", r}}); }

inline std::string report_render_text(
    const std::vector<std::pair<std::string, MetricsReport>>& rows) {
    std::size_t width = 5;
    for (const auto& [name, r] : rows) width = std::max(width, name.size());
    std::ostringstream os;
    os << std::string(width, ' ')
       << "  C-P     C-R     C-F1    I-P     I-R     I-F1    H-F1    LQP-Acc LQP-MSE\n";
    for (const auto& [name, r] : rows) {
        os << name << std::string(width - name.size(), ' ');
        for (double v : {r.c_p, r.c_r, r.c_f1, r.i_p, r.i_r, r.i_f1, r.h_f1}) {
            std::string s = fixed(v, 2);
            os << "  " << s << std::string(s.size() < 6 ? 6 - s.size() : 0, ' ');
        }
        os << "  " << (r.lqp_accuracy ? fixed(*r.lqp_accuracy, 2) : std::string("-"));
        os << "      " << (r.lqp_mse ? fixed(*r.lqp_mse, 3) : std::string("-"));
        if (r.all_zero_warning) os << "  (warning: all-zero count table)";
        os << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Prediction/truth record files: one image per line,
//   id <TAB> comma-separated label indices [<TAB> raw m_hat]
// ---------------------------------------------------------------------------

struct PredictionRecords {
    std::vector<std::string> ids;
    LabelSets label_sets;
    std::vector<double> m_hat;  // empty when the file carries no quantities
};

inline std::string format_label_list(const std::vector<std::int64_t>& labels) {
    std::string s;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(labels[i]);
    }
    return s;
}

inline std::vector<std::int64_t> parse_label_list(const std::string& s) {
    std::vector<std::int64_t> out;
    std::istringstream stream(s);
    std::string item;
    while (std::getline(stream, item, ','))
        if (!item.empty()) out.push_back(std::stoll(item));
    return out;
}

inline void save_predictions(const std::string& path, const PredictionRecords& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write prediction file: " + path);
    for (std::size_t i = 0; i < records.ids.size(); ++i) {
        out << records.ids[i] << "\t" << format_label_list(records.label_sets[i]);
        if (!records.m_hat.empty()) out << "\t" << fixed(records.m_hat[i], 6);
        out << "\n";
    }
}

inline PredictionRecords load_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open prediction file: " + path);
    PredictionRecords records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream stream(line);
        std::string field;
        while (std::getline(stream, field, '\t')) fields.push_back(field);
        if (line.back() == '\t') fields.push_back("");
        if (fields.size() < 2 || fields.size() > 3)
            throw IoError("prediction file " + path + " line " + std::to_string(lineno) +
                          ": expected 2 or 3 tab-separated fields");
        records.ids.push_back(fields[0]);
        records.label_sets.push_back(parse_label_list(fields[1]));
        if (fields.size() == 3) records.m_hat.push_back(std::stod(fields[2]));
    }
    if (!records.m_hat.empty() && records.m_hat.size() != records.ids.size())
        throw IoError("prediction file " + path + ": m_hat present on some lines but not all");
    return records;
}

}  // namespace msann
