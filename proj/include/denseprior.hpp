#pragma once

// Umbrella header: the full public surface of the library.

#include "denseprior/checkpoint.hpp"
#include "denseprior/config.hpp"
#include "denseprior/datamix.hpp"
#include "denseprior/diffusion.hpp"
#include "denseprior/errors.hpp"
#include "denseprior/losses.hpp"
#include "denseprior/metrics.hpp"
#include "denseprior/nn.hpp"
#include "denseprior/pngio.hpp"
#include "denseprior/projection.hpp"
#include "denseprior/raster.hpp"
#include "denseprior/report.hpp"
#include "denseprior/rng.hpp"
#include "denseprior/scenegen.hpp"
#include "denseprior/taps.hpp"
#include "denseprior/tensor.hpp"
#include "denseprior/trainer.hpp"
#include "denseprior/unet.hpp"
