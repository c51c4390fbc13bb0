// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vgloss/checkpoint.hpp"
#include "vgloss/dataset.hpp"
#include "vgloss/errors.hpp"
#include "vgloss/geometry.hpp"
#include "vgloss/gradcheck.hpp"
#include "vgloss/losses.hpp"
#include "vgloss/metrics.hpp"
#include "vgloss/model.hpp"
#include "vgloss/optim.hpp"
#include "vgloss/synth.hpp"
#include "vgloss/table.hpp"
#include "vgloss/targets.hpp"
#include "vgloss/trainer.hpp"
