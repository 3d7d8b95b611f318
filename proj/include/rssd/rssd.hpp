#pragma once

#include "rssd/annotations.hpp"
#include "rssd/boxes.hpp"
#include "rssd/config.hpp"
#include "rssd/data.hpp"
#include "rssd/error.hpp"
#include "rssd/eval.hpp"
#include "rssd/heads.hpp"
#include "rssd/kernels.hpp"
#include "rssd/layers.hpp"
#include "rssd/loss.hpp"
#include "rssd/metrics.hpp"
#include "rssd/model.hpp"
#include "rssd/ops.hpp"
#include "rssd/params.hpp"
#include "rssd/postprocess.hpp"
#include "rssd/pyramid.hpp"
#include "rssd/tape.hpp"
#include "rssd/tensor.hpp"
#include "rssd/train.hpp"
