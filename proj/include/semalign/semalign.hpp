#pragma once

#include "semalign/adversary.hpp"
#include "semalign/augment.hpp"
#include "semalign/dataset.hpp"
#include "semalign/error.hpp"
#include "semalign/harness.hpp"
#include "semalign/hybridgen.hpp"
#include "semalign/image.hpp"
#include "semalign/io.hpp"
#include "semalign/loss.hpp"
#include "semalign/metrics.hpp"
#include "semalign/model.hpp"
#include "semalign/nn.hpp"
#include "semalign/plot.hpp"
#include "semalign/rng.hpp"
#include "semalign/taxonomy.hpp"
#include "semalign/train.hpp"
