#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "scp/error.hpp"

namespace scp {

// ---------------------------------------------------------------------------
// Group-conditioned confusion counts
// ---------------------------------------------------------------------------

// counts[g][y][y_hat] for the two sensitive groups; g=0 is the unprivileged
// group, g=1 the privileged one.
struct ConfusionTensor {
    int num_classes = 0;
    std::vector<std::int64_t> counts; // [2, num_classes, num_classes], row-major

    std::int64_t& at(int g, int y, int yhat) {
        return counts[(static_cast<std::size_t>(g) * num_classes + y) * num_classes + yhat];
    }
    std::int64_t at(int g, int y, int yhat) const {
        return counts[(static_cast<std::size_t>(g) * num_classes + y) * num_classes + yhat];
    }

    std::int64_t group_total(int g) const {
        std::int64_t n = 0;
        for (int y = 0; y < num_classes; ++y) {
            for (int p = 0; p < num_classes; ++p) n += at(g, y, p);
        }
        return n;
    }

    // positives / negatives of class k within group g
    std::int64_t positives(int g, int k) const {
        std::int64_t n = 0;
        for (int p = 0; p < num_classes; ++p) n += at(g, k, p);
        return n;
    }
    std::int64_t negatives(int g, int k) const { return group_total(g) - positives(g, k); }

    std::int64_t true_positives(int g, int k) const { return at(g, k, k); }
    std::int64_t false_positives(int g, int k) const {
        std::int64_t n = 0;
        for (int y = 0; y < num_classes; ++y) {
            if (y != k) n += at(g, y, k);
        }
        return n;
    }
};

inline ConfusionTensor build_confusion(const std::vector<int>& preds,
                                       const std::vector<int>& labels,
                                       const std::vector<std::uint8_t>& groups,
                                       int num_classes = 0) {
    if (preds.size() != labels.size() || preds.size() != groups.size()) {
        throw config_error("preds/labels/groups must have equal lengths");
    }
    if (preds.empty()) throw config_error("cannot build a confusion tensor from no samples");
    if (num_classes == 0) {
        int mx = 0;
        for (const int v : preds) mx = std::max(mx, v);
        for (const int v : labels) mx = std::max(mx, v);
        num_classes = mx + 1;
    }
    if (num_classes < 2) num_classes = 2;
    ConfusionTensor conf;
    conf.num_classes = num_classes;
    conf.counts.assign(2u * static_cast<std::size_t>(num_classes) * num_classes, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int y = labels[i], p = preds[i];
        const int g = groups[i];
        if (y < 0 || y >= num_classes || p < 0 || p >= num_classes) {
            throw config_error("class index out of range [0," + std::to_string(num_classes) +
                               ") at sample " + std::to_string(i));
        }
        if (g != 0 && g != 1) {
            throw config_error("group label must be 0 or 1 at sample " + std::to_string(i));
        }
        ++conf.at(g, y, p);
    }
    return conf;
}

// ---------------------------------------------------------------------------
// Equal-opportunity / equalized-odds gaps
// ---------------------------------------------------------------------------

// One-vs-rest per class, averaged over the classes whose group-conditional
// rates are defined:
//   eopp1 = mean_k |TPR_{0,k} - TPR_{1,k}|
//   eopp0 = mean_k |TNR_{0,k} - TNR_{1,k}|
//   eodd  = mean_k (|TPR gap| + |FPR gap|) / 2
// A class is skipped from a metric when either group lacks the denominator
// (no positives for TPR, no negatives for TNR/FPR); skipped classes are
// reported alongside the values.
struct GapMetrics {
    double eopp0 = 0.0;
    double eopp1 = 0.0;
    double eodd = 0.0;
    std::vector<int> skipped_eopp0;
    std::vector<int> skipped_eopp1;
    std::vector<int> skipped_eodd;
};

inline GapMetrics eopp_eodd(const ConfusionTensor& conf) {
    if (conf.group_total(0) == 0 || conf.group_total(1) == 0) {
        throw config_error("both sensitive groups must contain samples");
    }
    GapMetrics m;
    double sum0 = 0.0, sum1 = 0.0, sumo = 0.0;
    int n0 = 0, n1 = 0, no = 0;
    for (int k = 0; k < conf.num_classes; ++k) {
        const bool tpr_ok = conf.positives(0, k) > 0 && conf.positives(1, k) > 0;
        const bool fpr_ok = conf.negatives(0, k) > 0 && conf.negatives(1, k) > 0;
        double tpr_gap = 0.0, fpr_gap = 0.0;
        if (tpr_ok) {
            const double tpr0 = static_cast<double>(conf.true_positives(0, k)) /
                                static_cast<double>(conf.positives(0, k));
            const double tpr1 = static_cast<double>(conf.true_positives(1, k)) /
                                static_cast<double>(conf.positives(1, k));
            tpr_gap = std::abs(tpr0 - tpr1);
            sum1 += tpr_gap;
            ++n1;
        } else {
            m.skipped_eopp1.push_back(k);
        }
        if (fpr_ok) {
            const double fpr0 = static_cast<double>(conf.false_positives(0, k)) /
                                static_cast<double>(conf.negatives(0, k));
            const double fpr1 = static_cast<double>(conf.false_positives(1, k)) /
                                static_cast<double>(conf.negatives(1, k));
            fpr_gap = std::abs(fpr0 - fpr1); // |TNR gap| == |FPR gap|
            sum0 += fpr_gap;
            ++n0;
        } else {
            m.skipped_eopp0.push_back(k);
        }
        if (tpr_ok && fpr_ok) {
            sumo += 0.5 * (tpr_gap + fpr_gap);
            ++no;
        } else {
            m.skipped_eodd.push_back(k);
        }
    }
    m.eopp0 = n0 > 0 ? sum0 / n0 : 0.0;
    m.eopp1 = n1 > 0 ? sum1 / n1 : 0.0;
    m.eodd = no > 0 ? sumo / no : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// Per-group precision / recall / F1
// ---------------------------------------------------------------------------

struct PrfRow {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct PrfReport {
    PrfRow group[2];
    PrfRow average;    // mean of the two groups
    PrfRow difference; // absolute gap
    std::vector<int> absent_classes[2];
};

// Macro averages within each group; classes with no true samples in a group
// are excluded from that group's average. A class never predicted within a
// group contributes precision 0.
inline PrfReport group_prf(const ConfusionTensor& conf) {
    if (conf.group_total(0) == 0 || conf.group_total(1) == 0) {
        throw config_error("both sensitive groups must contain samples");
    }
    PrfReport rep;
    for (int g = 0; g < 2; ++g) {
        double psum = 0.0, rsum = 0.0, fsum = 0.0;
        int n = 0;
        for (int k = 0; k < conf.num_classes; ++k) {
            const std::int64_t pos = conf.positives(g, k);
            if (pos == 0) {
                rep.absent_classes[g].push_back(k);
                continue;
            }
            const std::int64_t tp = conf.true_positives(g, k);
            const std::int64_t fp = conf.false_positives(g, k);
            const double recall = static_cast<double>(tp) / static_cast<double>(pos);
            const double precision =
                (tp + fp) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
            const double f1 =
                (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
            psum += precision;
            rsum += recall;
            fsum += f1;
            ++n;
        }
        if (n == 0) throw config_error("group " + std::to_string(g) + " has no usable classes");
        rep.group[g].precision = psum / n;
        rep.group[g].recall = rsum / n;
        rep.group[g].f1 = fsum / n;
    }
    rep.average.precision = 0.5 * (rep.group[0].precision + rep.group[1].precision);
    rep.average.recall = 0.5 * (rep.group[0].recall + rep.group[1].recall);
    rep.average.f1 = 0.5 * (rep.group[0].f1 + rep.group[1].f1);
    rep.difference.precision = std::abs(rep.group[0].precision - rep.group[1].precision);
    rep.difference.recall = std::abs(rep.group[0].recall - rep.group[1].recall);
    rep.difference.f1 = std::abs(rep.group[0].f1 - rep.group[1].f1);
    return rep;
}

// ---------------------------------------------------------------------------
// Accuracy/fairness trade-off score
// ---------------------------------------------------------------------------

// Relative accuracy gain minus the lambda-weighted relative change of a
// fairness gap, both against a baseline model. Positive is better.
inline double fate(double acc_m, double acc_b, double fc_m, double fc_b, double lambda = 1.0) {
    if (acc_b <= 0.0) throw config_error("baseline accuracy must be > 0");
    if (fc_b <= 0.0) throw config_error("baseline fairness gap must be > 0");
    if (lambda < 0.0) throw config_error("lambda must be >= 0");
    return (acc_m - acc_b) / acc_b - lambda * (fc_m - fc_b) / fc_b;
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

struct BaselineMetrics {
    std::string name;
    double f1 = 0.0;
    double eopp0 = 0.0;
    double eopp1 = 0.0;
    double eodd = 0.0;
};

struct FairnessReport {
    PrfReport prf;
    GapMetrics gaps;
    std::optional<double> fate_eopp0;
    std::optional<double> fate_eopp1;
    std::optional<double> fate_eodd;
    std::string baseline_name;
};

inline FairnessReport make_report(const ConfusionTensor& conf,
                                  const std::optional<BaselineMetrics>& baseline = std::nullopt,
                                  double lambda = 1.0) {
    FairnessReport rep;
    rep.prf = group_prf(conf);
    rep.gaps = eopp_eodd(conf);
    if (baseline) {
        rep.baseline_name = baseline->name;
        rep.fate_eopp0 = fate(rep.prf.average.f1, baseline->f1, rep.gaps.eopp0, baseline->eopp0, lambda);
        rep.fate_eopp1 = fate(rep.prf.average.f1, baseline->f1, rep.gaps.eopp1, baseline->eopp1, lambda);
        rep.fate_eodd = fate(rep.prf.average.f1, baseline->f1, rep.gaps.eodd, baseline->eodd, lambda);
    }
    return rep;
}

namespace detail {

inline std::string fmt(double v, const char* spec = "%.4f") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

} // namespace detail

inline std::string report_csv(const FairnessReport& r) {
    std::string out = "row,precision,recall,f1,eopp0,eopp1,eodd,fate_eopp0,fate_eopp1,fate_eodd\n";
    auto prf_cells = [](const PrfRow& p) {
        return detail::fmt(p.precision) + "," + detail::fmt(p.recall) + "," + detail::fmt(p.f1);
    };
    out += "group0," + prf_cells(r.prf.group[0]) + ",,,,,,\n";
    out += "group1," + prf_cells(r.prf.group[1]) + ",,,,,,\n";
    out += "avg," + prf_cells(r.prf.average) + "," + detail::fmt(r.gaps.eopp0) + "," +
           detail::fmt(r.gaps.eopp1) + "," + detail::fmt(r.gaps.eodd) + ",";
    out += (r.fate_eopp0 ? detail::fmt(*r.fate_eopp0) : std::string()) + ",";
    out += (r.fate_eopp1 ? detail::fmt(*r.fate_eopp1) : std::string()) + ",";
    out += (r.fate_eodd ? detail::fmt(*r.fate_eodd) : std::string()) + "\n";
    out += "diff," + prf_cells(r.prf.difference) + ",,,,,,\n";
    return out;
}

inline std::string report_table(const FairnessReport& r) {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%-8s %10s %10s %10s %10s %10s %10s\n", "", "Precision",
                  "Recall", "F1-score", "Eopp0", "Eopp1", "Eodd");
    out += buf;
    auto prf_line = [&](const char* name, const PrfRow& p) {
        std::snprintf(buf, sizeof(buf), "%-8s %10.4f %10.4f %10.4f\n", name, p.precision, p.recall,
                      p.f1);
        out += buf;
    };
    prf_line("group0", r.prf.group[0]);
    prf_line("group1", r.prf.group[1]);
    std::snprintf(buf, sizeof(buf), "%-8s %10.4f %10.4f %10.4f %10.4f %10.4f %10.4f\n", "avg",
                  r.prf.average.precision, r.prf.average.recall, r.prf.average.f1, r.gaps.eopp0,
                  r.gaps.eopp1, r.gaps.eodd);
    out += buf;
    prf_line("diff", r.prf.difference);
    if (r.fate_eopp0) {
        std::snprintf(buf, sizeof(buf), "%-8s %10s %10s %10s %10.4f %10.4f %10.4f  (vs %s)\n",
                      "FATE", "", "", "", *r.fate_eopp0, *r.fate_eopp1, *r.fate_eodd,
                      r.baseline_name.c_str());
        out += buf;
    }
    return out;
}

} // namespace scp
