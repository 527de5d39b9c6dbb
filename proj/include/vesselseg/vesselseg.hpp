#pragma once

#include "vesselseg/core/components.hpp"
#include "vesselseg/core/errors.hpp"
#include "vesselseg/core/image.hpp"
#include "vesselseg/core/resample.hpp"
#include "vesselseg/core/roi.hpp"
#include "vesselseg/core/stats.hpp"
#include "vesselseg/rng.hpp"

#include "vesselseg/augment/affine.hpp"
#include "vesselseg/augment/divergence.hpp"
#include "vesselseg/augment/protocol.hpp"
#include "vesselseg/augment/warp.hpp"

#include "vesselseg/phantom/phantom.hpp"

#include "vesselseg/nn/attention.hpp"
#include "vesselseg/nn/checkpoint.hpp"
#include "vesselseg/nn/ops.hpp"
#include "vesselseg/nn/tensor.hpp"
#include "vesselseg/nn/unet.hpp"

#include "vesselseg/train/loss.hpp"
#include "vesselseg/train/optimizer.hpp"
#include "vesselseg/train/trainer.hpp"

#include "vesselseg/pipeline/model.hpp"
#include "vesselseg/pipeline/pipeline.hpp"

#include "vesselseg/eval/cohort.hpp"
#include "vesselseg/eval/comparison.hpp"
#include "vesselseg/eval/dice.hpp"
#include "vesselseg/eval/icc.hpp"
#include "vesselseg/eval/report.hpp"

#include "vesselseg/io/config.hpp"
#include "vesselseg/io/manifest.hpp"
#include "vesselseg/io/nifti.hpp"
