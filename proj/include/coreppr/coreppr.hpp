#pragma once

#include "coreppr/binary_io.hpp"
#include "coreppr/dataset.hpp"
#include "coreppr/diffusion.hpp"
#include "coreppr/error.hpp"
#include "coreppr/graph.hpp"
#include "coreppr/neural.hpp"
#include "coreppr/parallel.hpp"
#include "coreppr/ppr.hpp"
#include "coreppr/trainer.hpp"
