#pragma once

#include "kge/anchors.hpp"
#include "kge/binary_io.hpp"
#include "kge/checkpoint.hpp"
#include "kge/config.hpp"
#include "kge/encoder.hpp"
#include "kge/error.hpp"
#include "kge/evaluation.hpp"
#include "kge/gradcheck.hpp"
#include "kge/kg_core.hpp"
#include "kge/model.hpp"
#include "kge/params.hpp"
#include "kge/scoring.hpp"
#include "kge/train_loop.hpp"
#include "kge/training.hpp"
