#pragma once

#include "mvoc/tensor.hpp"

namespace mvoc {

// Bilinear resize of an [h, w, c] tensor to [out_h, out_w, c], half-pixel
// sample centers.
Tensor resize_bilinear(const Tensor& src, int out_h, int out_w);

// 2x average pooling of an [h, w, c] tensor (h, w even).
Tensor avgpool2x(const Tensor& src);

Tensor clip01(const Tensor& src);

}  // namespace mvoc
