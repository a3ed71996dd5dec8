#pragma once

#include <cstdint>
#include <vector>

#include "mars/numerics.hpp"

// Convolutional autoencoder for item images: 128x128x3 in, four conv+pool
// stages down to an 8x8x1 bottleneck, mirrored nearest-upsampling decoder,
// ReLU activations, trained on MSE reconstruction.

namespace mars::feat {

inline constexpr int kCaeEmbeddingDim = 64;  // 8*8*1 flattened

class Cae {
 public:
  static Cae init(std::uint64_t seed);

  // 64-dim bottleneck, no graph recorded
  std::vector<double> encode(const num::Tensor& image) const;

  // scalar MSE between the reconstruction and the input, differentiable
  num::Tensor reconstruction_loss(const num::Tensor& image) const;

  std::vector<num::Tensor> parameters() const;

 private:
  // encoder stages (conv weight, bias), channels 3-2-2-1-1
  std::vector<num::Tensor> enc_w_, enc_b_;
  // decoder stages mirrored, channels 1-1-2-2-3
  std::vector<num::Tensor> dec_w_, dec_b_;

  num::Tensor bottleneck(const num::Tensor& image) const;
};

struct CaeTrace {
  double initial_mse = 0.0;
  double final_mse = 0.0;
  std::vector<double> epoch_mse;  // mean training loss per epoch
};

Cae train_image_autoencoder(const std::vector<num::Tensor>& images,
                            int epochs = 100, std::uint64_t seed = 0,
                            double lr = 0.01, CaeTrace* trace = nullptr);

}  // namespace mars::feat
