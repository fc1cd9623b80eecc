// Umbrella header for the full pipeline.
#ifndef LODNN_LODNN_HPP
#define LODNN_LODNN_HPP

#include "lodnn/adam.hpp"
#include "lodnn/annotation.hpp"
#include "lodnn/autodiff.hpp"
#include "lodnn/common.hpp"
#include "lodnn/config.hpp"
#include "lodnn/evaluator.hpp"
#include "lodnn/label_grid.hpp"
#include "lodnn/model.hpp"
#include "lodnn/png_io.hpp"
#include "lodnn/point_cloud.hpp"
#include "lodnn/rasterizer.hpp"
#include "lodnn/synth.hpp"
#include "lodnn/tensor.hpp"
#include "lodnn/trainer.hpp"

#endif  // LODNN_LODNN_HPP
