#pragma once

#include "tcto/agents.hpp"
#include "tcto/checkpoint.hpp"
#include "tcto/clustering.hpp"
#include "tcto/common.hpp"
#include "tcto/encoder.hpp"
#include "tcto/evaluator.hpp"
#include "tcto/information.hpp"
#include "tcto/nnsub.hpp"
#include "tcto/opset.hpp"
#include "tcto/pipeline.hpp"
#include "tcto/reward.hpp"
#include "tcto/roadmap.hpp"
#include "tcto/tabular.hpp"
