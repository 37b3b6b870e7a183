// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "timestudy/common.hpp"

namespace ts {

// C x C counts, rows = true class, columns = predicted class. All derived
// metrics come from these integer counts so results are exactly reproducible.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes)
        : c_(num_classes), m_(num_classes * num_classes, 0) {}

    std::size_t num_classes() const { return c_; }
    std::int64_t at(std::size_t truth, std::size_t pred) const { return m_[truth * c_ + pred]; }
    std::int64_t& at(std::size_t truth, std::size_t pred) { return m_[truth * c_ + pred]; }

    std::int64_t total() const {
        std::int64_t t = 0;
        for (auto v : m_) t += v;
        return t;
    }

    void accumulate(const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred) {
        if (truth.size() != pred.size())
            throw std::invalid_argument("confusion: label vectors differ in length");
        for (std::size_t i = 0; i < truth.size(); ++i) {
            if (truth[i] >= c_ || pred[i] >= c_)
                throw std::invalid_argument("confusion: class index out of range");
            ++m_[truth[i] * c_ + pred[i]];
        }
    }

    // Partial matrices from worker threads merge by addition.
    ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
        if (other.c_ != c_) throw std::invalid_argument("confusion: size mismatch in merge");
        for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
        return *this;
    }

    std::int64_t true_positives(std::size_t c) const { return at(c, c); }
    std::int64_t false_positives(std::size_t c) const {
        std::int64_t s = 0;
        for (std::size_t r = 0; r < c_; ++r)
            if (r != c) s += at(r, c);
        return s;
    }
    std::int64_t false_negatives(std::size_t c) const {
        std::int64_t s = 0;
        for (std::size_t p = 0; p < c_; ++p)
            if (p != c) s += at(c, p);
        return s;
    }

    // Zero-denominator classes contribute 0 to the macro averages (a
    // classifier that never predicts a class is penalized, not skipped).
    double precision(std::size_t c) const {
        std::int64_t tp = true_positives(c), fp = false_positives(c);
        return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    double recall(std::size_t c) const {
        std::int64_t tp = true_positives(c), fn = false_negatives(c);
        return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    double f1(std::size_t c) const {
        double p = precision(c), r = recall(c);
        return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
    }

    const std::vector<std::int64_t>& counts() const { return m_; }

private:
    std::size_t c_;
    std::vector<std::int64_t> m_;
};

inline void require_nonempty(const ConfusionMatrix& cm) {
    if (cm.total() < 1) throw std::invalid_argument("metrics: empty confusion matrix");
}

inline double accuracy(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    std::int64_t correct = 0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) correct += cm.at(c, c);
    return static_cast<double>(correct) / static_cast<double>(cm.total());
}

inline double macro_precision(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    double s = 0.0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) s += cm.precision(c);
    return s / static_cast<double>(cm.num_classes());
}

inline double macro_recall(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    double s = 0.0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) s += cm.recall(c);
    return s / static_cast<double>(cm.num_classes());
}

inline double macro_f1(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    double s = 0.0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) s += cm.f1(c);
    return s / static_cast<double>(cm.num_classes());
}

// Mean per-sample negative log-likelihood of the true class. Probabilities at
// the true label are floored at 1e-12; `clamped`, when given, reports whether
// the floor was hit.
inline double cross_entropy_metric(const std::vector<double>& probs, std::size_t num_classes,
                                   const std::vector<std::size_t>& truth, bool* clamped = nullptr) {
    if (truth.empty()) throw std::invalid_argument("cross_entropy_metric: empty batch");
    if (probs.size() != truth.size() * num_classes)
        throw std::invalid_argument("cross_entropy_metric: probability buffer size mismatch");
    if (clamped) *clamped = false;
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] >= num_classes) throw std::invalid_argument("cross_entropy_metric: label out of range");
        double p = probs[i * num_classes + truth[i]];
        if (p < 1e-12) {
            p = 1e-12;
            if (clamped) *clamped = true;
        }
        s += -std::log(p);
    }
    return s / static_cast<double>(truth.size());
}

struct MetricsReport {
    double accuracy = 0.0;
    double precision_macro = 0.0;
    double recall_macro = 0.0;
    double f1_macro = 0.0;
    double ce_loss_mean = 0.0;
    std::int64_t n_samples = 0;
    std::vector<std::vector<std::int64_t>> confusion;
};

inline MetricsReport make_report(const ConfusionMatrix& cm, double ce_loss_mean) {
    MetricsReport r;
    r.accuracy = accuracy(cm);
    r.precision_macro = macro_precision(cm);
    r.recall_macro = macro_recall(cm);
    r.f1_macro = macro_f1(cm);
    r.ce_loss_mean = ce_loss_mean;
    r.n_samples = cm.total();
    for (std::size_t i = 0; i < cm.num_classes(); ++i) {
        std::vector<std::int64_t> row;
        for (std::size_t j = 0; j < cm.num_classes(); ++j) row.push_back(cm.at(i, j));
        r.confusion.push_back(std::move(row));
    }
    return r;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    return nlohmann::json{{"accuracy", r.accuracy},
                          {"precision_macro", r.precision_macro},
                          {"recall_macro", r.recall_macro},
                          {"f1_macro", r.f1_macro},
                          {"ce_loss_mean", r.ce_loss_mean},
                          {"n_samples", r.n_samples},
                          {"confusion", r.confusion}};
}

}  // namespace ts
