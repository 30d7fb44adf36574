// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "ddp/config.hpp"
#include "ddp/diagnostics.hpp"
#include "ddp/embedding.hpp"
#include "ddp/error.hpp"
#include "ddp/experiment.hpp"
#include "ddp/feature_prior.hpp"
#include "ddp/harness.hpp"
#include "ddp/interaction.hpp"
#include "ddp/metrics.hpp"
#include "ddp/model.hpp"
#include "ddp/model_prior.hpp"
#include "ddp/nn_core.hpp"
#include "ddp/optim.hpp"
#include "ddp/stream.hpp"
#include "ddp/train_step.hpp"
