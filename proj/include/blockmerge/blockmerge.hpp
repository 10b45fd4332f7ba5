#pragma once

#include "blockmerge/acquisition.hpp"
#include "blockmerge/errors.hpp"
#include "blockmerge/evaluation.hpp"
#include "blockmerge/fixture.hpp"
#include "blockmerge/forest.hpp"
#include "blockmerge/merge.hpp"
#include "blockmerge/rng.hpp"
#include "blockmerge/search.hpp"
#include "blockmerge/search_space.hpp"
#include "blockmerge/segment.hpp"
#include "blockmerge/sobol.hpp"
#include "blockmerge/tensor.hpp"
#include "blockmerge/tensor_file.hpp"
#include "blockmerge/toy_model.hpp"
