#pragma once

#include <span>

#include "tipsfuse/matrix.hpp"

namespace tipsfuse::semiseg {

using ad::Matrix;

// 1 - (2 sum(p y) + s) / (sum p + sum y + s) over P (.) M and Y (.) M.
double dice_loss(const Matrix& p, const Matrix& y, const Matrix& mask, double smooth = 1.0);

// alpha * foreground dice + (1 - alpha) * background dice on the inverted
// probabilities and labels.
double weighted_dice(const Matrix& p, const Matrix& y, const Matrix& mask, double alpha = 2.0 / 3.0);

// Linear ramp of the pseudo-label confidence threshold.
struct ConfidenceSchedule {
  double start = 0.8;
  double end = 0.95;
  long total = 1;
};
double confidence_threshold(const ConfidenceSchedule& s, long iteration);

struct PseudoLabels {
  Matrix labels;  // 1 where the teacher probability is >= 0.5
  Matrix mask;    // 1 where max(p, 1 - p) >= tau
};
PseudoLabels pseudo_mask(const Matrix& teacher, double tau);

// Mean of the weighted dice of two strong views against the same pseudo-labels.
double consistency_loss(const Matrix& strong1, const Matrix& strong2, const Matrix& labels, const Matrix& mask,
                        double alpha = 2.0 / 3.0);

double total_semi_loss(double supervised, double consistency, double lambda = 1.0);

// teacher <- momentum * teacher + (1 - momentum) * student, elementwise.
void ema_update(Matrix& teacher, const Matrix& student, double momentum = 0.99);
void ema_update(std::span<Matrix> teacher, std::span<const Matrix> student, double momentum = 0.99);

// Dice on the masked maps plus binary cross-entropy averaged over mask pixels.
double seg_ft_loss(const Matrix& p, const Matrix& y, const Matrix& mask);

}  // namespace tipsfuse::semiseg
