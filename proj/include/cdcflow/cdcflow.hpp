#pragma once

#include "cdcflow/assignment.hpp"
#include "cdcflow/core/blob.hpp"
#include "cdcflow/core/error.hpp"
#include "cdcflow/core/linalg.hpp"
#include "cdcflow/core/parallel.hpp"
#include "cdcflow/core/random.hpp"
#include "cdcflow/core/types.hpp"
#include "cdcflow/dataio.hpp"
#include "cdcflow/flowpath.hpp"
#include "cdcflow/geometry.hpp"
#include "cdcflow/knn.hpp"
#include "cdcflow/metrics.hpp"
#include "cdcflow/mlp.hpp"
#include "cdcflow/ode.hpp"
#include "cdcflow/train.hpp"
