#pragma once

// Vector-quantised convolutional autoencoder with patch discriminator and
// fixed-feature perceptual loss.

#include "strata/checkpoint.hpp"
#include "strata/datagen.hpp"
#include "strata/image.hpp"
#include "strata/nn_util.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace strata::vq {

enum class Profile { desk, paper };
std::string_view to_string(Profile p);
Profile parse_profile(std::string_view s);

struct VQConfig {
    Profile profile = Profile::desk;
    int image_size = 64;
    int f = 3;  // number of 2x downsampling stages
    int d = 64;
    int k = 256;
    std::vector<int> filters{32, 64, 128, 128};  // one entry per resolution, f + 1 total
    int res_blocks = 1;
    double beta = 1.0;
    double lr = 2e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.9;
    int batch_size = 16;
    int max_epochs = 20;
    double dropout = 0.1;
    int disc_filters = 32;
    int disc_layers = 3;
    std::vector<int> featnet_channels{16, 32, 64, 64};
    std::uint64_t featnet_seed = 1234;
    std::uint64_t seed = 7;

    static VQConfig desk();
    static VQConfig paper();

    int grid_size() const { return image_size >> f; }
    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
    /// Applies one `key=value` override (CLI/config files); throws naming unknown keys.
    void set(const std::string& key, const std::string& value);
    void write(Checkpoint& ckpt, const std::string& prefix = "vq.") const;
    static VQConfig read(const Checkpoint& ckpt, const std::string& prefix = "vq.");
    std::vector<std::pair<std::string, std::string>> fields() const;
};

struct LossBreakdown {
    double l1 = 0;
    double perceptual = 0;
    double adversarial_gen = 0;
    double embedding = 0;
    double commitment = 0;
    double discriminator = 0;

    /// Unit-weighted generator objective.
    double generator_total() const { return l1 + perceptual + adversarial_gen + embedding + commitment; }
    kv::Record to_record() const;
};

struct CodeGrid {
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> indices;  // row-major

    std::int32_t at(int y, int x) const { return indices[static_cast<std::size_t>(y) * width + x]; }
    friend bool operator==(const CodeGrid&, const CodeGrid&) = default;
};

/// Per-image code grids from an [N,h,w] index tensor.
std::vector<CodeGrid> to_code_grids(const torch::Tensor& indices);
torch::Tensor from_code_grids(std::span<const CodeGrid> grids);

// ---------------------------------------------------------------------------
// Quantizer

struct QuantizeOutput {
    torch::Tensor indices;     // [N,h,w] int64
    torch::Tensor z_q;         // [N,d,h,w], straight-through: forward e_q, backward identity onto z_e
    torch::Tensor embedding;   // mean over cells of ||sg[z_e] - e_q||^2
    torch::Tensor commitment;  // beta * mean over cells of ||z_e - sg[e_q]||^2
};

/// Nearest codebook row per cell (ties -> lowest index). `z_e` is [N,d,h,w], codebook [k,d].
QuantizeOutput quantize(const torch::Tensor& z_e, const torch::Tensor& codebook, double beta);

/// rank-th nearest codebook row per cell; rank 1 is the ordinary quantizer choice.
torch::Tensor nearest_indices(const torch::Tensor& z_e, const torch::Tensor& codebook, int rank = 1);

/// Codebook rows for an [N,h,w] index tensor, as [N,d,h,w].
torch::Tensor lookup(const torch::Tensor& indices, const torch::Tensor& codebook);

// ---------------------------------------------------------------------------
// Networks

struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int in_ch, int out_ch, double dropout);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
    torch::nn::Dropout drop{nullptr};
};
TORCH_MODULE(ResBlock);

/// Single-head spatial self-attention over all cells.
struct AttnBlockImpl : torch::nn::Module {
    explicit AttnBlockImpl(int ch);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::GroupNorm norm{nullptr};
    torch::nn::Conv2d q{nullptr}, k{nullptr}, v{nullptr}, proj{nullptr};
};
TORCH_MODULE(AttnBlock);

struct EncoderImpl : torch::nn::Module {
    explicit EncoderImpl(const VQConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
    torch::nn::ModuleList stages{nullptr};
    ResBlock mid1{nullptr}, mid2{nullptr};
    AttnBlock mid_attn{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
};
TORCH_MODULE(Encoder);

struct DecoderImpl : torch::nn::Module {
    explicit DecoderImpl(const VQConfig& cfg);
    torch::Tensor forward(const torch::Tensor& z);

    torch::nn::Conv2d conv_in{nullptr}, conv_out{nullptr};
    torch::nn::ModuleList stages{nullptr};
    ResBlock mid1{nullptr}, mid2{nullptr};
    AttnBlock mid_attn{nullptr};
    torch::nn::GroupNorm norm_out{nullptr};
};
TORCH_MODULE(Decoder);

struct ConvSpec {
    int kernel = 3;
    int stride = 1;
    int dilation = 1;
};

/// rf_0 = 1, jump_0 = 1; rf += (kernel-1)*dilation*jump; jump *= stride.
int compute_receptive_field(std::span<const ConvSpec> stack);

/// Three stride-2 4x4 convolutions, then two stride-1 4x4 convolutions.
std::vector<ConvSpec> canonical_patch_stack();

/// Spatial size after a conv stack with the given padding.
int conv_output_size(int input, std::span<const ConvSpec> stack, int padding);

struct DiscriminatorOptions {
    int in_channels = 3;
    int filters = 64;
    int layers = 3;
    int padding = 1;
    bool batch_norm = false;
};

/// Patch discriminator emitting a 2-D grid of real/fake logits.
struct PatchDiscriminatorImpl : torch::nn::Module {
    explicit PatchDiscriminatorImpl(const DiscriminatorOptions& opts);
    torch::Tensor forward(const torch::Tensor& x);  // [N,1,gh,gw]
    const std::vector<ConvSpec>& layer_stack() const { return stack_; }

    torch::nn::Sequential body{nullptr};

private:
    std::vector<ConvSpec> stack_;
};
TORCH_MODULE(PatchDiscriminator);

/// Frozen random-weight convolutional feature extractor used for perceptual
/// distances and Frechet distances.
struct FeatureNetImpl : torch::nn::Module {
    FeatureNetImpl(std::vector<int> channels, std::uint64_t seed);
    std::vector<torch::Tensor> stages(const torch::Tensor& x);
    /// Global-average-pooled final stage, [N, channels.back()].
    torch::Tensor pooled(const torch::Tensor& x);
    std::string id() const;

    torch::nn::ModuleList convs{nullptr};

private:
    std::vector<int> channels_;
    std::uint64_t seed_;
};
TORCH_MODULE(FeatureNet);

/// Sum over feature stages of mean squared feature differences.
torch::Tensor perceptual_distance(FeatureNet& featnet, const torch::Tensor& x, const torch::Tensor& x_p);

/// mean softplus(-logit): non-saturating generator loss.
torch::Tensor generator_adversarial(const torch::Tensor& fake_logits);
/// mean softplus(-real) + mean softplus(fake).
torch::Tensor discriminator_objective(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

struct GeneratorTerms {
    torch::Tensor l1, perceptual, adversarial_gen, embedding, commitment;
    torch::Tensor total() const { return l1 + perceptual + adversarial_gen + embedding + commitment; }
};

GeneratorTerms generator_objective(const torch::Tensor& x, const torch::Tensor& x_p, const torch::Tensor& fake_logits,
                                   FeatureNet& featnet, const torch::Tensor& embedding, const torch::Tensor& commitment);

// ---------------------------------------------------------------------------
// Full model

struct VQModelImpl : torch::nn::Module {
    explicit VQModelImpl(const VQConfig& cfg);

    torch::Tensor encode(const torch::Tensor& x);  // [N,d,h,w]
    QuantizeOutput quantize(const torch::Tensor& z_e);
    torch::Tensor decode(const torch::Tensor& z_q);  // [N,3,H,W] in [-1,1]
    torch::Tensor decode_indices(const torch::Tensor& indices);

    const VQConfig& config() const { return cfg_; }

    Encoder encoder{nullptr};
    Decoder decoder{nullptr};
    torch::Tensor codebook;  // [k,d]

private:
    VQConfig cfg_;
};
TORCH_MODULE(VQModel);

/// Rejects images whose size differs from the configuration.
void check_input(const torch::Tensor& x, const VQConfig& cfg);

/// Inference helpers on single images (eval mode, no grad).
torch::Tensor encode_image(VQModel& model, const Image& x);
CodeGrid quantize_image(VQModel& model, const Image& x);
Image decode_codes(VQModel& model, const CodeGrid& q);
Image reconstruct(VQModel& model, const Image& x);

// ---------------------------------------------------------------------------
// Training

class VQTrainer {
public:
    explicit VQTrainer(const VQConfig& cfg);
    /// Restores generator, discriminator and codebook from a checkpoint.
    explicit VQTrainer(const Checkpoint& ckpt);

    /// One generator step followed by one discriminator step.
    LossBreakdown train_step(const torch::Tensor& x);
    /// Loss components without parameter updates (eval mode).
    LossBreakdown evaluate(const torch::Tensor& x);
    LossBreakdown evaluate(const nn::ImageBank& bank, int batch_size);

    Checkpoint to_checkpoint() const;

    VQModel& model() { return model_; }
    PatchDiscriminator& discriminator() { return disc_; }
    FeatureNet& featnet() { return featnet_; }
    const VQConfig& config() const { return cfg_; }

private:
    VQConfig cfg_;
    VQModel model_{nullptr};
    PatchDiscriminator disc_{nullptr};
    FeatureNet featnet_{nullptr};
    std::unique_ptr<torch::optim::Adam> opt_g_;
    std::unique_ptr<torch::optim::Adam> opt_d_;
};

struct TrainOptions {
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
    std::int64_t max_train_images = -1;  // -1: whole split
    std::int64_t max_val_images = -1;
    std::function<void(const std::string&)> progress;
};

struct EpochLog {
    int epoch = 0;
    LossBreakdown train;
    LossBreakdown val;
    double seconds = 0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochLog> log;
    int best_epoch = 0;
};

/// Alternating generator/discriminator Adam training; keeps the checkpoint with the
/// lowest validation embedding loss. Aborts naming the loss term on divergence.
TrainResult train_vq(const DatasetManifest& manifest, const VQConfig& cfg, const TrainOptions& opts);

/// Restores an inference model from a checkpoint.
VQModel load_vq(const Checkpoint& ckpt);
FeatureNet make_featnet(const VQConfig& cfg);

}  // namespace strata::vq
