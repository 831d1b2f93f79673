#pragma once

#include "godiff/config.hpp"
#include "godiff/csn.hpp"
#include "godiff/dataset.hpp"
#include "godiff/dataset_io.hpp"
#include "godiff/error.hpp"
#include "godiff/metrics.hpp"
#include "godiff/object_filter.hpp"
#include "godiff/pipeline.hpp"
#include "godiff/prompt.hpp"
#include "godiff/ptdg.hpp"
#include "godiff/random.hpp"
