#include "m3fas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace m3fas {

void validate_scores(const ScoreSet& s, bool need_both_classes) {
    require(s.scores.size() == s.labels.size(), "score/label length mismatch");
    require(s.scores.size() > 0, "empty score set");
    long pos = 0, neg = 0;
    for (Eigen::Index i = 0; i < s.labels.size(); ++i) {
        require(s.labels[i] == 0 || s.labels[i] == 1, "labels must be 0 (attack) or 1 (bonafide)");
        (s.labels[i] == 1 ? pos : neg)++;
    }
    if (need_both_classes && (pos == 0 || neg == 0))
        throw InvalidInputError("metric requires both classes present");
}

ConfusionCounts confusion_at(const ScoreSet& s, double threshold) {
    validate_scores(s, false);
    ConfusionCounts c;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const bool predicted_bona = s.scores[i] >= threshold;
        const bool is_bona = s.labels[i] == 1;
        if (predicted_bona && is_bona) c.tp++;
        else if (predicted_bona && !is_bona) c.fp++;
        else if (!predicted_bona && is_bona) c.fn++;
        else c.tn++;
    }
    return c;
}

double acc(const ConfusionCounts& c) {
    require(c.total() > 0, "acc of empty counts");
    return double(c.tp + c.tn) / double(c.total());
}

double hter(const ConfusionCounts& c) {
    if (c.tn + c.fp == 0 || c.tp + c.fn == 0)
        throw InvalidInputError("hter requires both classes present");
    const double far = double(c.fp) / double(c.tn + c.fp);
    const double frr = double(c.fn) / double(c.tp + c.fn);
    return 0.5 * (far + frr);
}

std::vector<RocPoint> roc_curve(const ScoreSet& s) {
    validate_scores(s, true);
    const Eigen::Index n = s.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index(0));
    std::sort(order.begin(), order.end(), [&s](Eigen::Index a, Eigen::Index b) {
        return s.scores[a] > s.scores[b];
    });

    long pos = 0, neg = 0;
    for (Eigen::Index i = 0; i < n; ++i) (s.labels[i] == 1 ? pos : neg)++;

    std::vector<RocPoint> curve;
    curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double score = s.scores[order[i]];
        // Consume the whole tie group at this score as one threshold step.
        while (i < order.size() && s.scores[order[i]] == score) {
            (s.labels[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        curve.push_back({double(fp) / double(neg), double(tp) / double(pos), score});
    }
    return curve;
}

double auc(const ScoreSet& s) {
    const auto curve = roc_curve(s);
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i)
        area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) * 0.5;
    return area;
}

double eer(const ScoreSet& s) {
    const auto curve = roc_curve(s);
    // FPR rises from 0 to 1 while FNR = 1 - TPR falls from 1 to 0; find the
    // crossing and interpolate within the segment that brackets it.
    for (std::size_t i = 0; i < curve.size(); ++i) {
        const double fpr = curve[i].fpr;
        const double fnr = 1.0 - curve[i].tpr;
        if (fpr >= fnr) {
            if (fpr == fnr || i == 0) return fpr;
            const double fpr0 = curve[i - 1].fpr, fnr0 = 1.0 - curve[i - 1].tpr;
            const double denom = (fpr - fpr0) - (fnr - fnr0);
            if (denom == 0.0) return 0.5 * (fpr0 + fnr0);
            const double t = (fnr0 - fpr0) / denom;
            return fpr0 + t * (fpr - fpr0);
        }
    }
    return 1.0;  // unreachable for valid input: the last point is (1, 1)
}

}  // namespace m3fas
