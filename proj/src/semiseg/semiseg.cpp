#include "tipsfuse/semiseg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "tipsfuse/errors.hpp"

namespace tipsfuse::semiseg {

namespace {

void check_shapes(const char* what, const Matrix& a, const Matrix& b, const Matrix& c) {
  if (!a.same_shape(b) || !a.same_shape(c)) {
    throw ShapeError(std::string(what) + ": shapes " + a.shape_string() + ", " + b.shape_string() + ", " +
                     c.shape_string() + " differ");
  }
}

void check_probabilities(const char* what, const Matrix& p) {
  for (double v : p.values())
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(what) + ": probability outside [0, 1]");
}

}  // namespace

double dice_loss(const Matrix& p, const Matrix& y, const Matrix& mask, double smooth) {
  check_shapes("dice_loss", p, y, mask);
  double inter = 0.0, sp = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pm = p[i] * mask[i], ym = y[i] * mask[i];
    inter += pm * ym;
    sp += pm;
    sy += ym;
  }
  return 1.0 - (2.0 * inter + smooth) / (sp + sy + smooth);
}

double weighted_dice(const Matrix& p, const Matrix& y, const Matrix& mask, double alpha) {
  check_shapes("weighted_dice", p, y, mask);
  check_probabilities("weighted_dice", p);
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("weighted_dice: alpha outside [0, 1]");
  Matrix p_bg(p.rows(), p.cols()), y_bg(y.rows(), y.cols());
  for (std::size_t i = 0; i < p.size(); ++i) {
    p_bg[i] = 1.0 - p[i];
    y_bg[i] = 1.0 - y[i];
  }
  return alpha * dice_loss(p, y, mask) + (1.0 - alpha) * dice_loss(p_bg, y_bg, mask);
}

double confidence_threshold(const ConfidenceSchedule& s, long iteration) {
  if (s.total < 1) throw std::invalid_argument("confidence schedule: total iterations must be >= 1");
  if (iteration < 0 || iteration > s.total)
    throw std::invalid_argument("confidence schedule: iteration " + std::to_string(iteration) + " outside [0, " +
                                std::to_string(s.total) + "]");
  if (iteration == s.total) return s.end;
  return s.start + (s.end - s.start) * static_cast<double>(iteration) / static_cast<double>(s.total);
}

PseudoLabels pseudo_mask(const Matrix& teacher, double tau) {
  check_probabilities("pseudo_mask", teacher);
  PseudoLabels out{Matrix(teacher.rows(), teacher.cols()), Matrix(teacher.rows(), teacher.cols())};
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const double q = teacher[i];
    out.labels[i] = q >= 0.5 ? 1.0 : 0.0;
    out.mask[i] = std::max(q, 1.0 - q) >= tau ? 1.0 : 0.0;
  }
  return out;
}

double consistency_loss(const Matrix& strong1, const Matrix& strong2, const Matrix& labels, const Matrix& mask,
                        double alpha) {
  check_shapes("consistency_loss", strong1, strong2, labels);
  return 0.5 * (weighted_dice(strong1, labels, mask, alpha) + weighted_dice(strong2, labels, mask, alpha));
}

double total_semi_loss(double supervised, double consistency, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("total_semi_loss: lambda must be non-negative");
  return supervised + lambda * consistency;
}

void ema_update(Matrix& teacher, const Matrix& student, double momentum) {
  if (!teacher.same_shape(student))
    throw ShapeError("ema_update: teacher " + teacher.shape_string() + " vs student " + student.shape_string());
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("ema_update: momentum outside [0, 1)");
  for (std::size_t i = 0; i < teacher.size(); ++i) teacher[i] = momentum * teacher[i] + (1.0 - momentum) * student[i];
}

void ema_update(std::span<Matrix> teacher, std::span<const Matrix> student, double momentum) {
  if (teacher.size() != student.size()) throw ShapeError("ema_update: parameter counts differ");
  for (std::size_t k = 0; k < teacher.size(); ++k) ema_update(teacher[k], student[k], momentum);
}

double seg_ft_loss(const Matrix& p, const Matrix& y, const Matrix& mask) {
  check_shapes("seg_ft_loss", p, y, mask);
  check_probabilities("seg_ft_loss", p);
  constexpr double kClamp = 1e-12;
  double bce = 0.0, count = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double q = std::clamp(p[i], kClamp, 1.0 - kClamp);
    bce -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    count += 1.0;
  }
  return dice_loss(p, y, mask) + (count > 0.0 ? bce / count : 0.0);
}

}  // namespace tipsfuse::semiseg
