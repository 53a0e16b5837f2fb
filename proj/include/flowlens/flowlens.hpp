#pragma once

// Umbrella header for the whole library.

#include "flowlens/bench.hpp"
#include "flowlens/block.hpp"
#include "flowlens/camera.hpp"
#include "flowlens/discriminator.hpp"
#include "flowlens/engine.hpp"
#include "flowlens/ffn.hpp"
#include "flowlens/flow.hpp"
#include "flowlens/flow_net.hpp"
#include "flowlens/hub.hpp"
#include "flowlens/losses.hpp"
#include "flowlens/mask.hpp"
#include "flowlens/metrics.hpp"
#include "flowlens/model.hpp"
#include "flowlens/propagation.hpp"
#include "flowlens/sampler.hpp"
#include "flowlens/synth.hpp"
#include "flowlens/tokens.hpp"
#include "flowlens/trainer.hpp"
#include "flowlens/video.hpp"
