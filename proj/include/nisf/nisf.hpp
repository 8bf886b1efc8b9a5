// Copyright 2026 The NISF Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "nisf/batch.hpp"
#include "nisf/checkpoint.hpp"
#include "nisf/errors.hpp"
#include "nisf/fastmath.hpp"
#include "nisf/gradcheck.hpp"
#include "nisf/field_model.hpp"
#include "nisf/image_io.hpp"
#include "nisf/latent_inference.hpp"
#include "nisf/latent_prior.hpp"
#include "nisf/metrics.hpp"
#include "nisf/objectives.hpp"
#include "nisf/optimizer.hpp"
#include "nisf/parallel.hpp"
#include "nisf/phantom.hpp"
#include "nisf/sampler.hpp"
#include "nisf/tensor.hpp"
#include "nisf/volume_io.hpp"

namespace nisf {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace nisf
