#pragma once

// Glue between the library's value types and libtorch tensors/modules.

#include "strata/checkpoint.hpp"
#include "strata/image.hpp"

#include <torch/torch.h>

#include <span>
#include <string>
#include <vector>

namespace strata::nn {

/// [N,3,H,W] float tensor.
torch::Tensor images_to_tensor(std::span<const Image> images);
torch::Tensor image_to_tensor(const Image& image);
/// Accepts [3,H,W] or [1,3,H,W]; values are clamped into [-1,1].
Image tensor_to_image(const torch::Tensor& t);

/// Images stored as uint8 to keep whole datasets resident.
class ImageBank {
public:
    ImageBank() = default;
    explicit ImageBank(std::span<const Image> images);

    std::int64_t size() const { return data_.defined() ? data_.size(0) : 0; }
    /// Float batch in [-1,1] for the given indices.
    torch::Tensor batch(std::span<const std::int64_t> indices) const;
    torch::Tensor all() const;

private:
    torch::Tensor data_;
};

/// Copies parameters and buffers into named checkpoint tensors, prefixed by `prefix`.
void export_module(const torch::nn::Module& module, const std::string& prefix, Checkpoint& ckpt);
/// Loads tensors back; throws naming the tensor on a missing entry or shape mismatch.
void import_module(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt);

NamedTensor to_named(const torch::Tensor& t);
torch::Tensor from_named(const NamedTensor& t);

/// Fixed batch order for an epoch, reproducible from (seed, epoch).
std::vector<std::vector<std::int64_t>> epoch_batches(std::int64_t n, std::int64_t batch_size, std::uint64_t seed,
                                                     int epoch, bool shuffle);

/// Number of groups used by group normalisation for `channels`.
int group_count(int channels);

}  // namespace strata::nn
