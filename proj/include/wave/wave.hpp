#pragma once

#include "wave/config.hpp"
#include "wave/control.hpp"
#include "wave/dynamics.hpp"
#include "wave/errors.hpp"
#include "wave/identify.hpp"
#include "wave/model.hpp"
#include "wave/simulate.hpp"
#include "wave/svg.hpp"
#include "wave/units.hpp"
