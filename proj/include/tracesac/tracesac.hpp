// Copyright (c) 2026, tracesac contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "tracesac/common.hpp"
#include "tracesac/data.hpp"
#include "tracesac/env.hpp"
#include "tracesac/replay.hpp"
#include "tracesac/traces.hpp"
#include "tracesac/nn.hpp"
#include "tracesac/tabular.hpp"
#include "tracesac/agent.hpp"
#include "tracesac/harness.hpp"
#include "tracesac/verify.hpp"
