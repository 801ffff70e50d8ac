#pragma once

#include "proxcsl/error.hpp"
#include "proxcsl/weights.hpp"
#include "proxcsl/data.hpp"
#include "proxcsl/objective.hpp"
#include "proxcsl/prox_solver.hpp"
#include "proxcsl/merge.hpp"
#include "proxcsl/orchestrator.hpp"
#include "proxcsl/harness.hpp"
