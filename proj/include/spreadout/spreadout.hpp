#pragma once

#include "spreadout/config.hpp"
#include "spreadout/data.hpp"
#include "spreadout/encoder.hpp"
#include "spreadout/eval.hpp"
#include "spreadout/losses.hpp"
#include "spreadout/pipeline.hpp"
#include "spreadout/sphere_math.hpp"
#include "spreadout/trainer.hpp"
