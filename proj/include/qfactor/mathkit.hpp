#pragma once

#include "qfactor/mathkit/loss.hpp"
#include "qfactor/mathkit/ols.hpp"
#include "qfactor/mathkit/qr_solve.hpp"
#include "qfactor/mathkit/sym_eig.hpp"
