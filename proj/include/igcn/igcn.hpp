#pragma once

#include "igcn/tensor.hpp"
#include "igcn/tape.hpp"
#include "igcn/graph.hpp"
#include "igcn/degree_test.hpp"
#include "igcn/models.hpp"
#include "igcn/training.hpp"
#include "igcn/attacks.hpp"
#include "igcn/experiments.hpp"
