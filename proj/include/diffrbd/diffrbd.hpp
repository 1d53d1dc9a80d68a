#pragma once

#include "autodiff.hpp"
#include "spatial.hpp"
#include "model.hpp"
#include "model_io.hpp"
#include "dynamics.hpp"
#include "embedding.hpp"
#include "optim.hpp"
#include "estimation.hpp"
#include "design.hpp"
#include "control.hpp"
#include "io.hpp"
