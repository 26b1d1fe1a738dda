#pragma once

#include "proxgen/core.hpp"
#include "proxgen/diagnostics.hpp"
#include "proxgen/optim.hpp"
#include "proxgen/oracle.hpp"
#include "proxgen/precond.hpp"
#include "proxgen/problems.hpp"
#include "proxgen/prox.hpp"
#include "proxgen/run.hpp"
