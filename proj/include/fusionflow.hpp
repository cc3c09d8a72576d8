#pragma once

// Everything except the command implementations in fusionflow/app.hpp.

#include "fusionflow/autodiff.hpp"
#include "fusionflow/checkpoint.hpp"
#include "fusionflow/config.hpp"
#include "fusionflow/dataset.hpp"
#include "fusionflow/energy.hpp"
#include "fusionflow/error.hpp"
#include "fusionflow/evaluation.hpp"
#include "fusionflow/events.hpp"
#include "fusionflow/image.hpp"
#include "fusionflow/io.hpp"
#include "fusionflow/kernels.hpp"
#include "fusionflow/loss.hpp"
#include "fusionflow/network.hpp"
#include "fusionflow/neuron.hpp"
#include "fusionflow/ops.hpp"
#include "fusionflow/tensor.hpp"
#include "fusionflow/train.hpp"
