#pragma once

#include <cstdint>
#include <string>

#include "ddrnet/autograd.hpp"

namespace ddrnet {

struct GradientSuiteOptions {
  uint64_t seed = 0;
  int samples = 256;
  double step = 1e-4;
  double tolerance = 1e-3;
  double linearity_tolerance = 1e-6;
  double alpha = 0.4;
};

struct GradientSuiteReport {
  autograd::FdReport fd;
  int64_t trainable_params = 0;
  double loss_main = 0.0;
  double loss_aux = 0.0;
  double loss_total = 0.0;
  /// |tape L_f - loss module L_f| / max(|L_f|, 1e-12).
  double loss_agreement = 0.0;
  /// max over parameters of rel(grad L_f, grad L_n + alpha grad L_a).
  double linearity_error = 0.0;
  double seconds = 0.0;
  bool pass = false;

  std::string str() const;
};

/// Micro segmenter with auxiliary head, 1x3x64x64 input, 64-bit: backward vs
/// central differences on sampled parameters of L_f = L_n + alpha L_a, and
/// the linearity of the deep-supervision gradient.
GradientSuiteReport run_gradient_suite(const GradientSuiteOptions& options = {});

}  // namespace ddrnet
