#include "mars/cae.hpp"

#include <cmath>

#include "mars/errors.hpp"
#include "mars/imageio.hpp"
#include "mars/optim.hpp"
#include "mars/rng.hpp"

namespace mars::feat {

namespace {

using num::Tensor;

// encoder channel plan: 3 -> 2 -> 2 -> 1 -> 1, one 2x pool per stage,
// so 128 -> 8 spatially
constexpr int kEncChannels[] = {3, 2, 2, 1, 1};
constexpr int kStages = 4;

Tensor glorot_conv(int out_ch, int in_ch, Rng& rng) {
  const double fan_in = in_ch * 9.0;
  const double fan_out = out_ch * 9.0;
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::vector<double> w(static_cast<std::size_t>(out_ch) * in_ch * 9);
  for (auto& x : w) x = rng.uniform(-a, a);
  return Tensor::from_values({out_ch, in_ch, 3, 3}, std::move(w), true);
}

void require_image(const Tensor& image) {
  if (image.shape() != num::Shape{3, kImageSide, kImageSide}) {
    throw DataError("autoencoder: expected a {3,128,128} image, got " +
                    num::shape_str(image.shape()));
  }
}

}  // namespace

Cae Cae::init(std::uint64_t seed) {
  Cae cae;
  Rng rng(derive_seed(seed, "cae"));
  for (int s = 0; s < kStages; ++s) {
    cae.enc_w_.push_back(glorot_conv(kEncChannels[s + 1], kEncChannels[s], rng));
    cae.enc_b_.push_back(Tensor::zeros({kEncChannels[s + 1]}, true));
  }
  for (int s = 0; s < kStages; ++s) {
    // mirror: consumes encoder stage (kStages-s) output channels
    const int in_ch = kEncChannels[kStages - s];
    const int out_ch = kEncChannels[kStages - s - 1];
    cae.dec_w_.push_back(glorot_conv(out_ch, in_ch, rng));
    cae.dec_b_.push_back(Tensor::zeros({out_ch}, true));
  }
  return cae;
}

Tensor Cae::bottleneck(const Tensor& image) const {
  require_image(image);
  Tensor h = image;
  for (int s = 0; s < kStages; ++s) {
    h = num::maxpool2(num::relu(num::conv2d(h, enc_w_[s], enc_b_[s])));
  }
  return h;  // {1,8,8}
}

std::vector<double> Cae::encode(const num::Tensor& image) const {
  num::NoGradGuard ng;
  const Tensor h = bottleneck(image);
  return {h.values().begin(), h.values().end()};
}

Tensor Cae::reconstruction_loss(const num::Tensor& image) const {
  Tensor h = bottleneck(image);
  for (int s = 0; s < kStages; ++s) {
    h = num::relu(num::conv2d(num::upsample2(h), dec_w_[s], dec_b_[s]));
  }
  const Tensor diff = num::add(h, num::scalar_mul(image, -1.0));
  return num::mean(num::mul(diff, diff));
}

std::vector<num::Tensor> Cae::parameters() const {
  std::vector<Tensor> out;
  for (int s = 0; s < kStages; ++s) {
    out.push_back(enc_w_[s]);
    out.push_back(enc_b_[s]);
  }
  for (int s = 0; s < kStages; ++s) {
    out.push_back(dec_w_[s]);
    out.push_back(dec_b_[s]);
  }
  return out;
}

Cae train_image_autoencoder(const std::vector<num::Tensor>& images, int epochs,
                            std::uint64_t seed, double lr, CaeTrace* trace) {
  if (images.empty()) throw DataError("autoencoder: no images");
  if (epochs < 0) throw DataError("autoencoder: negative epoch count");
  for (const auto& img : images) require_image(img);

  Cae cae = Cae::init(seed);
  num::Adam opt(cae.parameters(), lr);

  auto dataset_mse = [&] {
    num::NoGradGuard ng;
    double total = 0.0;
    for (const auto& img : images) total += cae.reconstruction_loss(img).item();
    return total / static_cast<double>(images.size());
  };

  CaeTrace local;
  local.initial_mse = dataset_mse();
  for (int e = 0; e < epochs; ++e) {
    double epoch_total = 0.0;
    for (const auto& img : images) {
      opt.zero_grad();
      const Tensor loss = cae.reconstruction_loss(img);
      epoch_total += loss.item();
      num::backward(loss);
      opt.step();
    }
    local.epoch_mse.push_back(epoch_total / static_cast<double>(images.size()));
  }
  local.final_mse = dataset_mse();
  if (trace) *trace = local;
  return cae;
}

}  // namespace mars::feat
