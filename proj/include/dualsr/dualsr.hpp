#pragma once

#include "dualsr/adam.hpp"
#include "dualsr/benchmark.hpp"
#include "dualsr/blur.hpp"
#include "dualsr/checkpoint.hpp"
#include "dualsr/config.hpp"
#include "dualsr/contrast.hpp"
#include "dualsr/degrade.hpp"
#include "dualsr/extractor.hpp"
#include "dualsr/image.hpp"
#include "dualsr/manifest.hpp"
#include "dualsr/metrics.hpp"
#include "dualsr/ops.hpp"
#include "dualsr/resample.hpp"
#include "dualsr/rng.hpp"
#include "dualsr/separability.hpp"
#include "dualsr/sr_network.hpp"
#include "dualsr/synth_image.hpp"
#include "dualsr/tensor.hpp"
#include "dualsr/train.hpp"
#include "dualsr/wavelet.hpp"
