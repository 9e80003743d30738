#pragma once

// Feature autoencoder between the VQ encoder's latent grid and a flat vector w.

#include "strata/checkpoint.hpp"
#include "strata/datagen.hpp"
#include "strata/vqmodel.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace strata::fae {

struct FAEConfig {
    vq::Profile profile = vq::Profile::desk;
    int D = 128;
    std::vector<int> stage_channels{128, 256};
    int in_channels = 64;  // VQ embedding dim d
    int grid = 8;          // VQ grid side
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int batch_size = 32;
    int max_epochs = 60;
    std::uint64_t seed = 11;

    static FAEConfig desk();
    static FAEConfig paper();
    /// Matches in_channels/grid to a VQ configuration.
    static FAEConfig for_vq(const vq::VQConfig& vq, vq::Profile profile);

    int bottleneck_grid() const { return grid >> static_cast<int>(stage_channels.size()); }
    void validate() const;
    void set(const std::string& key, const std::string& value);
    std::vector<std::pair<std::string, std::string>> fields() const;
    void write(Checkpoint& ckpt, const std::string& prefix = "fae.") const;
    static FAEConfig read(const Checkpoint& ckpt, const std::string& prefix = "fae.");
};

struct FeatureAutoencoderImpl : torch::nn::Module {
    explicit FeatureAutoencoderImpl(const FAEConfig& cfg);

    /// [N,d,g,g] -> [N,D]
    torch::Tensor encode_w(const torch::Tensor& z_e);
    /// [N,D] -> [N,d,g,g]
    torch::Tensor decode_w(const torch::Tensor& w);
    torch::Tensor forward(const torch::Tensor& z_e) { return decode_w(encode_w(z_e)); }

    const FAEConfig& config() const { return cfg_; }

    torch::nn::Sequential down{nullptr}, up{nullptr};
    torch::nn::Linear to_w{nullptr}, from_w{nullptr};

private:
    FAEConfig cfg_;
};
TORCH_MODULE(FeatureAutoencoder);

/// Frozen VQ encoder features for a set of images, computed in batches.
torch::Tensor encode_features(vq::VQModel& vq, std::span<const Image> images, int batch_size = 64);

struct TrainOptions {
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
    std::function<void(const std::string&)> progress;
};

struct EpochLog {
    int epoch = 0;
    double train_mse = 0;
    double val_mse = 0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochLog> log;
    int best_epoch = 0;
    double feature_variance = 0;  // mean-predictor MSE on the validation features
};

/// Trains on precomputed feature tensors [N,d,g,g].
TrainResult train_fae_features(const torch::Tensor& train, const torch::Tensor& val, const FAEConfig& cfg,
                               const TrainOptions& opts, const std::string& vq_id = "");

/// Computes frozen encoder features for the train/val splits, then trains.
TrainResult train_fae(const DatasetManifest& manifest, const Checkpoint& vq_ckpt, const FAEConfig& cfg,
                      const TrainOptions& opts);

Checkpoint to_checkpoint(const FeatureAutoencoder& model);
FeatureAutoencoder load_fae(const Checkpoint& ckpt);

/// Mean squared error per element.
double feature_mse(FeatureAutoencoder& fae, const torch::Tensor& z_e);

/// decode(quantize(decode_w(encode_w(encode(x)))).z_q) for [N,3,H,W] input.
torch::Tensor roundtrip(vq::VQModel& vq, FeatureAutoencoder& fae, const torch::Tensor& x);
/// Decodes w vectors [N,D] through the quantizer and image decoder.
torch::Tensor decode_from_w(vq::VQModel& vq, FeatureAutoencoder& fae, const torch::Tensor& w);
/// Code grids chosen by the quantizer for w vectors.
torch::Tensor codes_from_w(vq::VQModel& vq, FeatureAutoencoder& fae, const torch::Tensor& w);

std::vector<double> image_to_w(vq::VQModel& vq, FeatureAutoencoder& fae, const Image& x);
Image w_to_image(vq::VQModel& vq, FeatureAutoencoder& fae, std::span<const double> w);

}  // namespace strata::fae
