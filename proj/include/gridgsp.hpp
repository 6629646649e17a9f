// Copyright 2026 The Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Single include for the whole toolkit.
#pragma once

#include "gridgsp/autodiff.hpp"
#include "gridgsp/errors.hpp"
#include "gridgsp/forecasting.hpp"
#include "gridgsp/grid_model.hpp"
#include "gridgsp/gso.hpp"
#include "gridgsp/gsp.hpp"
#include "gridgsp/io.hpp"
#include "gridgsp/nn.hpp"
#include "gridgsp/power_flow.hpp"
#include "gridgsp/sampling.hpp"
#include "gridgsp/voltvar.hpp"
