#pragma once

#include "whilter/attention.hpp"
#include "whilter/audio.hpp"
#include "whilter/augment.hpp"
#include "whilter/checkpoint.hpp"
#include "whilter/commands.hpp"
#include "whilter/error.hpp"
#include "whilter/evaluate.hpp"
#include "whilter/features.hpp"
#include "whilter/gradcheck.hpp"
#include "whilter/labels.hpp"
#include "whilter/labelstudio.hpp"
#include "whilter/manifest.hpp"
#include "whilter/metrics.hpp"
#include "whilter/mixing.hpp"
#include "whilter/model.hpp"
#include "whilter/optim.hpp"
#include "whilter/rng.hpp"
#include "whilter/sampler.hpp"
#include "whilter/synth.hpp"
#include "whilter/tensor.hpp"
#include "whilter/train.hpp"
