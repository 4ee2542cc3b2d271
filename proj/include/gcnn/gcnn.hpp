#pragma once

#include "gcnn/bench.hpp"
#include "gcnn/boxes.hpp"
#include "gcnn/config.hpp"
#include "gcnn/conv.hpp"
#include "gcnn/csv.hpp"
#include "gcnn/dataset.hpp"
#include "gcnn/detector.hpp"
#include "gcnn/error.hpp"
#include "gcnn/experiments.hpp"
#include "gcnn/gemm.hpp"
#include "gcnn/guidance_net.hpp"
#include "gcnn/guided.hpp"
#include "gcnn/image_io.hpp"
#include "gcnn/mask.hpp"
#include "gcnn/network.hpp"
#include "gcnn/ops.hpp"
#include "gcnn/parallel.hpp"
#include "gcnn/pipeline.hpp"
#include "gcnn/rng.hpp"
#include "gcnn/scene.hpp"
#include "gcnn/synthesis.hpp"
#include "gcnn/tensor.hpp"
#include "gcnn/tensor_io.hpp"
#include "gcnn/weights_io.hpp"
