#pragma once

// Face Shadow Eraser: umbrella header.

#include "fse/autodiff.hpp"
#include "fse/checkpoint.hpp"
#include "fse/cli.hpp"
#include "fse/coarse_net.hpp"
#include "fse/config.hpp"
#include "fse/dataset.hpp"
#include "fse/errors.hpp"
#include "fse/image.hpp"
#include "fse/image_io.hpp"
#include "fse/io_container.hpp"
#include "fse/loss.hpp"
#include "fse/mask_net.hpp"
#include "fse/metrics.hpp"
#include "fse/model.hpp"
#include "fse/nn_ops.hpp"
#include "fse/optim.hpp"
#include "fse/params.hpp"
#include "fse/perceptual.hpp"
#include "fse/refine_net.hpp"
#include "fse/rng.hpp"
#include "fse/shadow_synth.hpp"
#include "fse/tensor.hpp"
#include "fse/train.hpp"
