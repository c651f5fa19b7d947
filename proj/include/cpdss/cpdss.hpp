#pragma once

#include "cpdss/checkpoint.hpp"
#include "cpdss/config.hpp"
#include "cpdss/decoder.hpp"
#include "cpdss/diffusion.hpp"
#include "cpdss/egnn.hpp"
#include "cpdss/encoder.hpp"
#include "cpdss/geom.hpp"
#include "cpdss/metrics.hpp"
#include "cpdss/nn.hpp"
#include "cpdss/pipeline.hpp"
#include "cpdss/protein.hpp"
#include "cpdss/rng.hpp"
#include "cpdss/secondary.hpp"
#include "cpdss/ssgraph.hpp"
#include "cpdss/tensor.hpp"
