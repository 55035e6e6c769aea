#pragma once

#include "gibscore/analysis_io.hpp"
#include "gibscore/binary_io.hpp"
#include "gibscore/error.hpp"
#include "gibscore/interchange.hpp"
#include "gibscore/intrusive.hpp"
#include "gibscore/manifest.hpp"
#include "gibscore/ngram.hpp"
#include "gibscore/parallel.hpp"
#include "gibscore/pipeline.hpp"
#include "gibscore/recurrent.hpp"
#include "gibscore/report.hpp"
#include "gibscore/rng.hpp"
#include "gibscore/scoring.hpp"
#include "gibscore/stats.hpp"
#include "gibscore/synthetic.hpp"
#include "gibscore/tokenizer.hpp"
#include "gibscore/ulm.hpp"
