/*
 * Copyright 2026 fedsim contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "fedsim/datagen.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/local_solvers.hpp"
#include "fedsim/metrics.hpp"
#include "fedsim/objectives.hpp"
#include "fedsim/runner.hpp"
#include "fedsim/veckit.hpp"
