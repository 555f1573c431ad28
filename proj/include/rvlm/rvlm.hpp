#pragma once

#include "rvlm/chunker.hpp"
#include "rvlm/error.hpp"
#include "rvlm/evaluator.hpp"
#include "rvlm/format.hpp"
#include "rvlm/matrix.hpp"
#include "rvlm/retriever.hpp"
#include "rvlm/store.hpp"
#include "rvlm/synth.hpp"
#include "rvlm/trainer.hpp"
