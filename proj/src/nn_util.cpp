#include "strata/nn_util.hpp"

#include "strata/rng.hpp"

#include <numeric>
#include <stdexcept>

namespace strata::nn {

torch::Tensor images_to_tensor(std::span<const Image> images) {
    if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const int H = images[0].height(), W = images[0].width();
    auto out = torch::empty({static_cast<std::int64_t>(images.size()), 3, H, W}, torch::kFloat32);
    auto acc = out.accessor<float, 4>();
    for (std::size_t n = 0; n < images.size(); ++n) {
        const auto& im = images[n];
        if (im.height() != H || im.width() != W) throw std::invalid_argument("images_to_tensor: mixed image sizes");
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c) acc[static_cast<long>(n)][c][y][x] = im.at(y, x, c);
    }
    return out;
}

torch::Tensor image_to_tensor(const Image& image) { return images_to_tensor(std::span<const Image>(&image, 1)); }

Image tensor_to_image(const torch::Tensor& t) {
    auto v = t.detach().to(torch::kFloat32).contiguous();
    if (v.dim() == 4) {
        if (v.size(0) != 1) throw std::invalid_argument("tensor_to_image: batch dimension must be 1");
        v = v[0];
    }
    if (v.dim() != 3 || v.size(0) != 3) throw std::invalid_argument("tensor_to_image: expected [3,H,W]");
    v = v.clamp(-1.0, 1.0);
    const int H = static_cast<int>(v.size(1)), W = static_cast<int>(v.size(2));
    Image img(H, W);
    auto acc = v.accessor<float, 3>();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = acc[c][y][x];
    return img;
}

ImageBank::ImageBank(std::span<const Image> images) {
    if (images.empty()) return;
    const int H = images[0].height(), W = images[0].width();
    data_ = torch::empty({static_cast<std::int64_t>(images.size()), 3, H, W}, torch::kUInt8);
    auto acc = data_.accessor<std::uint8_t, 4>();
    for (std::size_t n = 0; n < images.size(); ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                for (int c = 0; c < 3; ++c) acc[static_cast<long>(n)][c][y][x] = to_byte(images[n].at(y, x, c));
}

torch::Tensor ImageBank::batch(std::span<const std::int64_t> indices) const {
    auto idx = torch::tensor(std::vector<std::int64_t>(indices.begin(), indices.end()), torch::kInt64);
    return data_.index_select(0, idx).to(torch::kFloat32).div(127.5).sub(1.0);
}

torch::Tensor ImageBank::all() const { return data_.to(torch::kFloat32).div(127.5).sub(1.0); }

NamedTensor to_named(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    NamedTensor out;
    out.shape.assign(c.sizes().begin(), c.sizes().end());
    out.values.assign(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
    return out;
}

torch::Tensor from_named(const NamedTensor& t) {
    auto out = torch::empty(t.shape, torch::kFloat32);
    std::copy(t.values.begin(), t.values.end(), out.data_ptr<float>());
    return out;
}

void export_module(const torch::nn::Module& module, const std::string& prefix, Checkpoint& ckpt) {
    for (const auto& p : module.named_parameters(true)) ckpt.tensors[prefix + p.key()] = to_named(p.value());
    for (const auto& b : module.named_buffers(true)) {
        if (b.value().scalar_type() == torch::kInt64) {
            ckpt.tensors[prefix + b.key()] = to_named(b.value().to(torch::kFloat32));
        } else {
            ckpt.tensors[prefix + b.key()] = to_named(b.value());
        }
    }
}

void import_module(torch::nn::Module& module, const std::string& prefix, const Checkpoint& ckpt) {
    torch::NoGradGuard guard;
    auto load = [&](const std::string& name, torch::Tensor& target) {
        auto it = ckpt.tensors.find(prefix + name);
        if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint is missing tensor '" + prefix + name + "'");
        const auto& nt = it->second;
        if (std::vector<std::int64_t>(target.sizes().begin(), target.sizes().end()) != nt.shape) {
            throw std::runtime_error("checkpoint tensor '" + prefix + name + "' has a shape that does not match the model");
        }
        target.copy_(from_named(nt).to(target.scalar_type()));
    };
    for (auto& p : module.named_parameters(true)) load(p.key(), p.value());
    for (auto& b : module.named_buffers(true)) load(b.key(), b.value());
}

std::vector<std::vector<std::int64_t>> epoch_batches(std::int64_t n, std::int64_t batch_size, std::uint64_t seed,
                                                     int epoch, bool shuffle) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
    }
    std::vector<std::vector<std::int64_t>> out;
    for (std::int64_t i = 0; i < n; i += batch_size) {
        out.emplace_back(order.begin() + i, order.begin() + std::min(n, i + batch_size));
    }
    return out;
}

int group_count(int channels) {
    int g = std::min(32, channels);
    while (channels % g != 0) --g;
    return g;
}

}  // namespace strata::nn
