#pragma once

// Everything in one include, roughly bottom-up.

#include "pcvs/common.hpp"
#include "pcvs/rng.hpp"
#include "pcvs/tensor.hpp"
#include "pcvs/ops.hpp"
#include "pcvs/params.hpp"
#include "pcvs/nn.hpp"
#include "pcvs/adam.hpp"
#include "pcvs/gradcheck.hpp"
#include "pcvs/camera.hpp"
#include "pcvs/warp.hpp"
#include "pcvs/kdtree.hpp"
#include "pcvs/cloud.hpp"
#include "pcvs/fusion.hpp"
#include "pcvs/render.hpp"
#include "pcvs/losses.hpp"
#include "pcvs/restore.hpp"
#include "pcvs/depthnet.hpp"
#include "pcvs/image_io.hpp"
#include "pcvs/checkpoint.hpp"
#include "pcvs/scene.hpp"
#include "pcvs/pipeline.hpp"
#include "pcvs/train.hpp"
