#pragma once

#include "qfactor/dgp.hpp"
#include "qfactor/distributions.hpp"
#include "qfactor/error.hpp"
#include "qfactor/json_io.hpp"
#include "qfactor/mathkit.hpp"
#include "qfactor/mc.hpp"
#include "qfactor/panel.hpp"
#include "qfactor/pca.hpp"
#include "qfactor/qfa.hpp"
#include "qfactor/rng.hpp"
#include "qfactor/select.hpp"
#include "qfactor/sqr.hpp"
