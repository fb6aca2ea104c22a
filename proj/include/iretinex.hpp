#pragma once

// Umbrella header: the whole library.

#include "iretinex/arch.hpp"
#include "iretinex/colorspace.hpp"
#include "iretinex/dataset.hpp"
#include "iretinex/degrade.hpp"
#include "iretinex/errors.hpp"
#include "iretinex/fpenv.hpp"
#include "iretinex/gradcheck.hpp"
#include "iretinex/gradsuite.hpp"
#include "iretinex/icrr.hpp"
#include "iretinex/io.hpp"
#include "iretinex/losses.hpp"
#include "iretinex/metrics.hpp"
#include "iretinex/model.hpp"
#include "iretinex/ops.hpp"
#include "iretinex/optim.hpp"
#include "iretinex/params.hpp"
#include "iretinex/rcm.hpp"
#include "iretinex/tensor.hpp"
#include "iretinex/training.hpp"
