// Copyright 2026 The dpzv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Core library umbrella header (no third-party dependencies). Config and CLI
// support live in dpzv/config.hpp and dpzv/cli.hpp.

#ifndef DPZV_DPZV_HPP_
#define DPZV_DPZV_HPP_

#include "dpzv/checkpoint.hpp"
#include "dpzv/common.hpp"
#include "dpzv/data.hpp"
#include "dpzv/model.hpp"
#include "dpzv/numerics.hpp"
#include "dpzv/param_storage.hpp"
#include "dpzv/privacy.hpp"
#include "dpzv/protocol.hpp"
#include "dpzv/zo.hpp"

#endif  // DPZV_DPZV_HPP_
