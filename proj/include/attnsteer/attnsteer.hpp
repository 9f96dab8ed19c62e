#pragma once

// Umbrella header.

#include "attnsteer/common.hpp"
#include "attnsteer/types.hpp"
#include "attnsteer/matfun.hpp"
#include "attnsteer/model.hpp"
#include "attnsteer/fonc_bvp.hpp"
#include "attnsteer/direct_opt.hpp"
#include "attnsteer/limits.hpp"
#include "attnsteer/fisher.hpp"
#include "attnsteer/mc_sim.hpp"
#include "attnsteer/io.hpp"
#include "attnsteer/commands.hpp"
