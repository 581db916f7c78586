#pragma once

#include "m3fas/types.hpp"

#include <vector>

namespace m3fas {

// Paired detection scores and ground truth. Convention: label 1 = bonafide,
// label 0 = attack, and a higher score means more bonafide.
struct ScoreSet {
    Eigen::ArrayXd scores;
    Eigen::ArrayXi labels;

    Eigen::Index size() const { return scores.size(); }
};

void validate_scores(const ScoreSet& s, bool need_both_classes);

struct ConfusionCounts {
    long tp = 0, tn = 0, fp = 0, fn = 0;
    long total() const { return tp + tn + fp + fn; }
};

// Predict bonafide iff score >= threshold.
ConfusionCounts confusion_at(const ScoreSet& s, double threshold);

double acc(const ConfusionCounts& c);

// (FAR + FRR) / 2 = (FP/(TN+FP) + FN/(TP+FN)) / 2. Requires both classes.
double hter(const ConfusionCounts& c);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
};

// Thresholds at distinct scores, tied scores grouped into one step, from
// (0,0) to (1,1).
std::vector<RocPoint> roc_curve(const ScoreSet& s);

// Trapezoid area under the ROC; equals Mann-Whitney pair counting with ties
// scored 1/2.
double auc(const ScoreSet& s);

// The rate at which FPR equals FNR, linearly interpolated between adjacent
// ROC points when no exact crossing exists.
double eer(const ScoreSet& s);

}  // namespace m3fas
