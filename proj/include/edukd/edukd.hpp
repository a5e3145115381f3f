#pragma once

// Education distillation: staged teacher-student training with teaching
// reference blocks, disjoint sub-datasets and parameter freezing.

#include "edukd/checkpoint.hpp"
#include "edukd/common.hpp"
#include "edukd/config.hpp"
#include "edukd/dataset.hpp"
#include "edukd/loss.hpp"
#include "edukd/metrics.hpp"
#include "edukd/model.hpp"
#include "edukd/nn.hpp"
#include "edukd/optim.hpp"
#include "edukd/partition.hpp"
#include "edukd/report.hpp"
#include "edukd/rng.hpp"
#include "edukd/schedule.hpp"
#include "edukd/teacher.hpp"
#include "edukd/tensor.hpp"
#include "edukd/trainer.hpp"
