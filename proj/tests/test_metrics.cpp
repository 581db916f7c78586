#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "m3fas/metrics.hpp"
#include "oracles.hpp"

#include <cmath>
#include <random>

using namespace m3fas;

namespace {

ScoreSet random_scores(std::mt19937_64& gen, Eigen::Index n, bool with_ties) {
    ScoreSet s;
    s.scores.resize(n);
    s.labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double v = double(gen() >> 11) * 0x1.0p-53;
        if (with_ties) v = std::round(v * 8.0) / 8.0;
        s.scores[i] = v + (gen() % 2 ? 0.3 : 0.0);
        s.labels[i] = int(gen() % 2);
    }
    // ensure both classes
    s.labels[0] = 0;
    s.labels[n - 1] = 1;
    return s;
}

}  // namespace

TEST_CASE("confusion_at boundary thresholds") {
    ScoreSet s;
    s.scores.resize(6);
    s.scores << 0.1, 0.4, 0.2, 0.9, 0.7, 0.3;
    s.labels.resize(6);
    s.labels << 0, 0, 0, 1, 1, 1;

    ConfusionCounts below = confusion_at(s, 0.0);
    CHECK(below.fp == 3);  // every attack accepted
    CHECK(below.fn == 0);
    ConfusionCounts above = confusion_at(s, 2.0);
    CHECK(above.fp == 0);
    CHECK(above.fn == 3);  // every bonafide rejected
    for (double thr : {0.0, 0.25, 0.5, 0.75, 1.5})
        CHECK(confusion_at(s, thr).total() == 6);
}

TEST_CASE("acc hand cases") {
    CHECK(acc({8, 7, 3, 2}) == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(acc({5, 5, 0, 0}) == 1.0);
    CHECK(acc({0, 0, 5, 5}) == 0.0);
}

TEST_CASE("hter hand cases and complement symmetry") {
    CHECK(hter({5, 5, 0, 0}) == 0.0);
    // FP=1, TN=3, FN=2, TP=2 -> (1/4 + 2/4) / 2 = 0.375
    CHECK(hter({2, 3, 1, 2}) == doctest::Approx(0.375).epsilon(1e-15));
    // Complementing predictions swaps TP<->FN and TN<->FP.
    ConfusionCounts c{7, 2, 5, 3};
    ConfusionCounts flipped{c.fn, c.fp, c.tn, c.tp};
    CHECK(hter(flipped) == doctest::Approx(1.0 - hter(c)).epsilon(1e-12));
    CHECK_THROWS_AS(hter({5, 0, 0, 5}), InvalidInputError);  // one class only
}

TEST_CASE("auc basic cases") {
    ScoreSet s;
    s.scores.resize(6);
    s.labels.resize(6);

    SUBCASE("perfect separation") {
        s.scores << 0.1, 0.2, 0.3, 0.7, 0.8, 0.9;
        s.labels << 0, 0, 0, 1, 1, 1;
        CHECK(auc(s) == 1.0);
        CHECK(eer(s) == 0.0);
    }
    SUBCASE("all scores equal gives chance level") {
        s.scores << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5;
        s.labels << 0, 1, 0, 1, 0, 1;
        CHECK(auc(s) == doctest::Approx(0.5).epsilon(1e-15));
    }
    SUBCASE("fully reversed scores") {
        s.scores << 0.9, 0.8, 0.7, 0.3, 0.2, 0.1;
        s.labels << 0, 0, 0, 1, 1, 1;
        CHECK(auc(s) == 0.0);
        CHECK(eer(s) == 1.0);
    }
    SUBCASE("one class only rejected") {
        s.scores << 1, 2, 3, 4, 5, 6;
        s.labels << 1, 1, 1, 1, 1, 1;
        CHECK_THROWS_AS(auc(s), InvalidInputError);
        CHECK_THROWS_AS(eer(s), InvalidInputError);
    }
}

TEST_CASE("auc equals Mann-Whitney pair counting") {
    std::mt19937_64 gen(404);
    for (int rep = 0; rep < 25; ++rep) {
        const ScoreSet s = random_scores(gen, 50, rep % 2 == 0);
        CHECK(std::abs(auc(s) - oracles::mann_whitney_auc(s)) <= 1e-12);
    }
}

TEST_CASE("eer matches a dense grid search") {
    std::mt19937_64 gen(405);
    for (int rep = 0; rep < 10; ++rep) {
        const ScoreSet s = random_scores(gen, 60, false);
        CHECK(eer(s) == doctest::Approx(oracles::grid_eer(s)).epsilon(1e-6));
    }
}

TEST_CASE("eer interpolated point solves FPR == FNR") {
    std::mt19937_64 gen(406);
    for (int rep = 0; rep < 10; ++rep) {
        const ScoreSet s = random_scores(gen, 40, false);
        const auto curve = roc_curve(s);
        const double e = eer(s);
        // Re-derive the crossing from the curve and confirm the rates agree
        // at the returned value.
        for (std::size_t i = 1; i < curve.size(); ++i) {
            const double fpr0 = curve[i - 1].fpr, fnr0 = 1.0 - curve[i - 1].tpr;
            const double fpr1 = curve[i].fpr, fnr1 = 1.0 - curve[i].tpr;
            if (fpr1 >= fnr1 && fpr0 <= fnr0) {
                const double denom = (fpr1 - fpr0) - (fnr1 - fnr0);
                if (denom == 0.0) break;
                const double t = (fnr0 - fpr0) / denom;
                const double fpr_at = fpr0 + t * (fpr1 - fpr0);
                const double fnr_at = fnr0 + t * (fnr1 - fnr0);
                CHECK(std::abs(fpr_at - fnr_at) <= 1e-9);
                CHECK(e == doctest::Approx(fpr_at).epsilon(1e-9));
                break;
            }
        }
    }
}

TEST_CASE("auc invariant under strictly increasing transforms") {
    std::mt19937_64 gen(407);
    const ScoreSet base = random_scores(gen, 80, false);
    const double reference = auc(base);
    auto transformed = [&base](double (*f)(double)) {
        ScoreSet t = base;
        for (Eigen::Index i = 0; i < t.size(); ++i) t.scores[i] = f(t.scores[i]);
        return t;
    };
    CHECK(auc(transformed([](double x) { return std::exp(x); })) ==
          doctest::Approx(reference).epsilon(1e-12));
    CHECK(auc(transformed([](double x) { return 3.0 * x + 7.0; })) ==
          doctest::Approx(reference).epsilon(1e-12));
    CHECK(auc(transformed([](double x) { return x * x * x; })) ==
          doctest::Approx(reference).epsilon(1e-12));
}

TEST_CASE("auc of label-flipped scores complements (tie-free)") {
    std::mt19937_64 gen(408);
    ScoreSet s = random_scores(gen, 64, false);
    ScoreSet flipped = s;
    for (Eigen::Index i = 0; i < s.size(); ++i) flipped.labels[i] = 1 - s.labels[i];
    CHECK(auc(s) + auc(flipped) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hter stays within [0,1] on random counts") {
    std::mt19937_64 gen(409);
    for (int rep = 0; rep < 50; ++rep) {
        ConfusionCounts c{long(gen() % 20), long(gen() % 20), long(gen() % 20), long(gen() % 20)};
        if (c.tn + c.fp == 0 || c.tp + c.fn == 0) continue;
        const double h = hter(c);
        CHECK(h >= 0.0);
        CHECK(h <= 1.0);
    }
}
