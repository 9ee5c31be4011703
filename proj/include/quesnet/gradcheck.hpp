#pragma once

#include <functional>
#include <string>
#include <vector>

#include "params.hpp"

namespace quesnet {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "name[i]" of the worst element
  std::size_t checked = 0;
};

// Compares reverse-mode gradients against central differences. `loss_fn`
// must rebuild the scalar loss from current parameter values on every call
// (fresh forward pass); any randomness inside it has to be replayed
// identically, so seed or disable stochastic pieces before checking.
//
// The relative error divides by max(|analytic|, |numeric|, floor). The floor
// scales with the loss magnitude because central differences on a loss of
// size |f| cannot resolve |up - down| below ~eps*|f|, i.e. gradients below
// ~eps*|f|/h carry no usable signal; without the floor such elements would
// report pure rounding noise as error. Elements under the floor are still
// held to absolute agreement within tol*floor.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss_fn,
                                  ParamMap& params, double h = 1e-5) {
  params.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();
  const double floor = 1e-6 * std::max(1.0, std::abs(loss.item()));

  GradCheckResult res;
  for (auto& e : params) {
    Tensor& p = e.second;
    const auto& analytic = p.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      double keep = p.data()[i];
      p.data()[i] = keep + h;
      double up;
      {
        NoGradGuard ng;
        up = loss_fn().item();
      }
      p.data()[i] = keep - h;
      double down;
      {
        NoGradGuard ng;
        down = loss_fn().item();
      }
      p.data()[i] = keep;
      double numeric = (up - down) / (2.0 * h);
      double denom = std::max({std::abs(analytic[i]), std::abs(numeric),
                               floor});
      double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = e.first + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  }
  return res;
}

// Same comparison for a subset of elements per parameter (strided probe),
// for cases where the full sweep is too slow.
inline GradCheckResult grad_check_sampled(
    const std::function<Tensor()>& loss_fn, ParamMap& params,
    std::size_t stride, double h = 1e-5) {
  params.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();
  const double floor = 1e-6 * std::max(1.0, std::abs(loss.item()));

  GradCheckResult res;
  for (auto& e : params) {
    Tensor& p = e.second;
    const auto& analytic = p.grad();
    for (std::size_t i = 0; i < p.size(); i += stride) {
      double keep = p.data()[i];
      p.data()[i] = keep + h;
      double up;
      {
        NoGradGuard ng;
        up = loss_fn().item();
      }
      p.data()[i] = keep - h;
      double down;
      {
        NoGradGuard ng;
        down = loss_fn().item();
      }
      p.data()[i] = keep;
      double numeric = (up - down) / (2.0 * h);
      double denom = std::max({std::abs(analytic[i]), std::abs(numeric),
                               floor});
      double rel = std::abs(analytic[i] - numeric) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = e.first + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  }
  return res;
}

}  // namespace quesnet
