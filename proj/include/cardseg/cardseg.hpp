#pragma once

// Whole-heart CT segmentation refinement toolkit: volume I/O and geometry,
// deterministic label-map operators, Dice evaluation, a self-contained 3D
// U-Net engine, the multi-stage refinement pipeline, and a synthetic heart
// phantom for end-to-end testing without clinical data.

#include "cardseg/annotations.hpp"
#include "cardseg/core.hpp"
#include "cardseg/feature_grid.hpp"
#include "cardseg/label_ops.hpp"
#include "cardseg/metrics.hpp"
#include "cardseg/nifti.hpp"
#include "cardseg/phantom.hpp"
#include "cardseg/pipeline.hpp"
#include "cardseg/resample.hpp"
#include "cardseg/schema.hpp"
#include "cardseg/unet.hpp"
#include "cardseg/volume.hpp"
