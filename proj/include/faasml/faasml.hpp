// Copyright (c) 2026 The faasml Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "faasml/checkpoint.hpp"
#include "faasml/cli.hpp"
#include "faasml/clock.hpp"
#include "faasml/collectives.hpp"
#include "faasml/config.hpp"
#include "faasml/costmodel.hpp"
#include "faasml/error.hpp"
#include "faasml/model_core.hpp"
#include "faasml/optimizers.hpp"
#include "faasml/ps_channel.hpp"
#include "faasml/report.hpp"
#include "faasml/runtime.hpp"
#include "faasml/storage.hpp"
