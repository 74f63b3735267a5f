#pragma once

#include "finder/batch.hpp"
#include "finder/chem.hpp"
#include "finder/checkpoint.hpp"
#include "finder/dataset.hpp"
#include "finder/elements.hpp"
#include "finder/embedding.hpp"
#include "finder/graph.hpp"
#include "finder/io.hpp"
#include "finder/model.hpp"
#include "finder/optim.hpp"
#include "finder/spectra.hpp"
#include "finder/stats.hpp"
#include "finder/tensor.hpp"
#include "finder/train.hpp"
