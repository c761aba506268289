#pragma once

// Umbrella header for the multi-scale multi-modal annotation library.

#include "msann/annotate.hpp"
#include "msann/checkpoint.hpp"
#include "msann/common.hpp"
#include "msann/config.hpp"
#include "msann/dataset.hpp"
#include "msann/experiment.hpp"
#include "msann/fusion_net.hpp"
#include "msann/gradcheck.hpp"
#include "msann/heads.hpp"
#include "msann/layers.hpp"
#include "msann/metrics.hpp"
#include "msann/model.hpp"
#include "msann/ops.hpp"
#include "msann/optimizer.hpp"
#include "msann/rng.hpp"
#include "msann/tag_branch.hpp"
#include "msann/tensor.hpp"
#include "msann/train.hpp"
