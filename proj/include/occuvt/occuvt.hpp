// Copyright 2026 The OccuVT Authors
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

#pragma once

#include "occuvt/config_io.hpp"
#include "occuvt/error.hpp"
#include "occuvt/evalloss.hpp"
#include "occuvt/fusion.hpp"
#include "occuvt/geometry.hpp"
#include "occuvt/gridpyramid.hpp"
#include "occuvt/parallel.hpp"
#include "occuvt/projector.hpp"
#include "occuvt/scene.hpp"
#include "occuvt/serialization.hpp"
#include "occuvt/sparse.hpp"

namespace occuvt {
inline constexpr const char* kVersion = "1.0.0";
}  // namespace occuvt
