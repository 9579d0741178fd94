// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "amfmn/checkpoint.hpp"
#include "amfmn/dataset.hpp"
#include "amfmn/error.hpp"
#include "amfmn/fusion.hpp"
#include "amfmn/geolocate.hpp"
#include "amfmn/loss.hpp"
#include "amfmn/model.hpp"
#include "amfmn/pnm.hpp"
#include "amfmn/retrieval.hpp"
#include "amfmn/tensor.hpp"
#include "amfmn/text.hpp"
#include "amfmn/text_metrics.hpp"
#include "amfmn/train.hpp"
#include "amfmn/visual.hpp"
