#pragma once

// Umbrella header for the TURNER library.

#include "turner/config.hpp"
#include "turner/corpus.hpp"
#include "turner/decoder.hpp"
#include "turner/errors.hpp"
#include "turner/evalkit.hpp"
#include "turner/fusion.hpp"
#include "turner/lattice.hpp"
#include "turner/pipeline.hpp"
#include "turner/retrieval.hpp"
#include "turner/rng.hpp"
#include "turner/sweep.hpp"
#include "turner/tagger.hpp"
#include "turner/tagspace.hpp"
#include "turner/uncertainty.hpp"
#include "turner/utf8.hpp"
