#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "mwf/tensor.hpp"

namespace mwf::testutil {

// Central-difference gradient check. `f` must rebuild its graph from the
// current values of `inputs` on every call (the tape is supplied by the
// checker). Passing means every analytic partial agrees with the numeric one
// to rel_tol under the max(|a|,|n|,floor) denominator.
inline void check_gradients(const std::vector<Tensor>& inputs,
                            const std::function<Tensor()>& f, double h = 1e-5,
                            double rel_tol = 1e-3) {
  for (const Tensor& in : inputs) {
    in.impl()->requires_grad = true;
    in.impl()->grad.clear();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
  }
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor in = inputs[ti];
    REQUIRE(in.has_grad());
    for (int64_t i = 0; i < in.size(); ++i) {
      double saved = in.at(i);
      in.set(i, saved + h);
      double up = f().item();
      in.set(i, saved - h);
      double down = f().item();
      in.set(i, saved);
      double numeric = (up - down) / (2.0 * h);
      double analytic = in.grad()[i];
      double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
      double rel = std::abs(analytic - numeric) / denom;
      INFO("input ", ti, " element ", i, ": analytic=", analytic,
           " numeric=", numeric);
      CHECK(rel <= rel_tol);
    }
  }
}

}  // namespace mwf::testutil
