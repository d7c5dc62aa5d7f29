#ifndef NOF1_NOF1_HPP
#define NOF1_NOF1_HPP

// Umbrella header: label-free analysis of image-based N-of-1 trials.
// Tensor autodiff + convolutional autoencoder -> PCA -> phase statistics.

#include "nof1/adam.hpp"
#include "nof1/autoencoder.hpp"
#include "nof1/common.hpp"
#include "nof1/dataio.hpp"
#include "nof1/image.hpp"
#include "nof1/pca.hpp"
#include "nof1/pipeline.hpp"
#include "nof1/rng.hpp"
#include "nof1/stats.hpp"
#include "nof1/tensor.hpp"
#include "nof1/trial.hpp"

#endif
