// Convenience umbrella for the whole library.
#pragma once

#include "sinckws/checkpoint.hpp"
#include "sinckws/common.hpp"
#include "sinckws/dataset.hpp"
#include "sinckws/layers.hpp"
#include "sinckws/model.hpp"
#include "sinckws/ops.hpp"
#include "sinckws/sinc.hpp"
#include "sinckws/tensor.hpp"
#include "sinckws/trainer.hpp"
