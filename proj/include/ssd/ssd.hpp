// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ssd/commands.hpp"
#include "ssd/config.hpp"
#include "ssd/denoiser.hpp"
#include "ssd/diagnostics.hpp"
#include "ssd/errors.hpp"
#include "ssd/external_denoiser.hpp"
#include "ssd/generation.hpp"
#include "ssd/inversion.hpp"
#include "ssd/operators.hpp"
#include "ssd/parallel.hpp"
#include "ssd/protocol.hpp"
#include "ssd/random.hpp"
#include "ssd/schedule.hpp"
#include "ssd/stats.hpp"
#include "ssd/tensor.hpp"
#include "ssd/tensorio.hpp"
#include "ssd/toy.hpp"
