#pragma once

#include "cvek.hpp"
#include "errors.hpp"
#include "gp_lmm.hpp"
#include "interaction.hpp"
#include "kernel.hpp"
#include "linalg.hpp"
#include "score_test.hpp"
#include "simulate.hpp"
#include "version.hpp"
