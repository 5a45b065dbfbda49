/*
 * Copyright 2026 The supw Authors. All rights reserved.
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>

#include "supw/tensor.hpp"

namespace supw {

struct GradcheckReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
    bool passed = true;
};

/// Differentiable scalar function of one tensor: value() is 1 element and
/// backward(scalar 1) returns the gradient with respect to the input as element 0.
using ScalarFn = std::function<GradPair(const Tensor&)>;

/// Compares the analytic gradient of f at x with central differences.
/// A coordinate passes when |analytic - numeric| <= abs_floor or the relative
/// error |a - n| / max(|a|, |n|) <= rel_tol.
inline GradcheckReport gradcheck(const ScalarFn& f, const Tensor& x, double h = 1e-5, double rel_tol = 1e-3,
                                 double abs_floor = 1e-7) {
    GradPair at = f(x);
    if (at.value.size() != 1) throw Error("gradcheck: function is not scalar, shape " + shape_str(at.value.shape()));
    const Tensor analytic = at.backward(Tensor::scalar(1.0)).at(0);
    if (analytic.shape() != x.shape())
        throw Error("gradcheck: gradient shape " + shape_str(analytic.shape()) + " != input shape " +
                    shape_str(x.shape()));

    GradcheckReport report;
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double fp = f(probe).value.item();
        probe[i] = orig - h;
        const double fm = f(probe).value.item();
        probe[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw Error("gradcheck: non-finite function value near coordinate " + std::to_string(i));
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[i];
        const double abs_err = std::abs(a - numeric);
        const double denom = std::max(std::abs(a), std::abs(numeric));
        const double rel = denom > 0.0 ? abs_err / denom : 0.0;
        report.max_abs_error = std::max(report.max_abs_error, abs_err);
        ++report.checked;
        const bool fails = abs_err > abs_floor && rel > rel_tol;
        // Below abs_floor / rel_tol the floor can mask relative error, so such coordinates only
        // enter the reported maximum when they fail.
        if ((fails || denom * rel_tol >= abs_floor) && rel > report.max_rel_error) {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        if (fails) report.passed = false;
    }
    return report;
}

}  // namespace supw
