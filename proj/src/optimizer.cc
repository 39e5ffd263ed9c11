#include "fresh/optimizer.h"

#include <cmath>

#include "fresh/error.h"

namespace fresh {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

Adam::Adam(const std::vector<NamedTensor>& params, AdamConfig cfg)
    : params_(params), cfg_(cfg) {
  for (const auto& p : params_) {
    first_.emplace_back(p.tensor->rows, p.tensor->cols);
    second_.emplace_back(p.tensor->rows, p.tensor->cols);
  }
}

void Adam::step(const std::vector<NamedTensor>& grads) {
  if (grads.size() != params_.size()) {
    throw Error(ErrorKind::kInvalidArgument, "gradient list mismatch");
  }
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i].tensor->data;
    const auto& g = grads[i].tensor->data;
    auto& m = first_[i].data;
    auto& v = second_[i].data;
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

double global_norm(const std::vector<NamedTensor>& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += squared_norm(g.tensor->data);
  return std::sqrt(s);
}

double clip_global_norm(const std::vector<NamedTensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (const auto& g : grads) {
      for (auto& x : g.tensor->data) x *= scale;
    }
  }
  return norm;
}

namespace {

template <typename List>
void check_finite_impl(const List& tensors) {
  for (const auto& t : tensors) {
    for (double x : t.tensor->data) {
      if (!std::isfinite(x)) {
        throw Error(ErrorKind::kNumeric, "non-finite value in tensor '" + t.name + "'");
      }
    }
  }
}

}  // namespace

void check_finite(const std::vector<NamedTensor>& tensors) {
  check_finite_impl(tensors);
}

void check_finite(const std::vector<ConstNamedTensor>& tensors) {
  check_finite_impl(tensors);
}

}  // namespace fresh
