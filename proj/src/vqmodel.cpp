#include "strata/vqmodel.hpp"

#include "strata/rng.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace strata::vq {

namespace F = torch::nn::functional;

std::string_view to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

Profile parse_profile(std::string_view s) {
    if (s == "desk") return Profile::desk;
    if (s == "paper") return Profile::paper;
    throw std::invalid_argument("profile: expected desk or paper, got '" + std::string(s) + "'");
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<int> parse_ints(const std::string& key, const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            out.push_back(std::stoi(tok));
        } catch (const std::exception&) {
            throw std::invalid_argument(key + ": expected comma-separated integers, got '" + s + "'");
        }
    }
    return out;
}

int parse_int(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected an integer, got '" + s + "'");
    }
}

double parse_real(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected a number, got '" + s + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        auto v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(key + ": expected an unsigned integer, got '" + s + "'");
    }
}

torch::nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = 0, bool bias = true) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

torch::nn::GroupNorm group_norm(int ch) {
    return torch::nn::GroupNorm(torch::nn::GroupNormOptions(nn::group_count(ch), ch).eps(1e-6));
}

void require_finite(const torch::Tensor& t, const char* term) {
    const double v = t.item<double>();
    if (!std::isfinite(v)) throw std::runtime_error(std::string("training diverged: non-finite ") + term + " loss");
}

}  // namespace

VQConfig VQConfig::desk() { return VQConfig{}; }

VQConfig VQConfig::paper() {
    VQConfig c;
    c.profile = Profile::paper;
    c.image_size = 256;
    c.f = 4;
    c.d = 256;
    c.k = 2048;
    c.filters = {64, 128, 256, 512, 512};
    c.res_blocks = 2;
    c.beta = 1.0;
    c.lr = 2e-5;
    c.adam_beta1 = 0.5;
    c.adam_beta2 = 0.9;
    c.batch_size = 24;
    c.max_epochs = 130;
    c.disc_filters = 64;
    c.featnet_channels = {64, 128, 256, 512};
    return c;
}

void VQConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("VQConfig." + field + ": " + why);
    };
    if (image_size < 8 || !is_power_of_two(image_size)) fail("image_size", "must be a power of two >= 8");
    if (f < 1 || (image_size >> f) < 1) fail("f", "downsampling stages exceed image size");
    if (d < 1) fail("d", "must be positive");
    if (k < 2) fail("k", "codebook needs at least two entries");
    if (static_cast<int>(filters.size()) != f + 1) fail("filters", "needs exactly f + 1 entries");
    for (int c : filters)
        if (c < 1) fail("filters", "channel counts must be positive");
    if (res_blocks < 1) fail("res_blocks", "must be >= 1");
    if (!(beta > 0)) fail("beta", "commitment coefficient must be > 0");
    if (!(lr > 0)) fail("lr", "must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail("adam_beta1", "must lie in [0, 1)");
    if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam_beta2", "must lie in [0, 1)");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (max_epochs < 1) fail("max_epochs", "must be >= 1");
    if (!(dropout >= 0 && dropout < 1)) fail("dropout", "must lie in [0, 1)");
    if (disc_filters < 1) fail("disc_filters", "must be positive");
    if (disc_layers < 1) fail("disc_layers", "must be >= 1");
    if (featnet_channels.empty()) fail("featnet_channels", "needs at least one stage");
    if (profile == Profile::paper) {
        const auto ref = paper();
        if (d != ref.d || k != ref.k || f != ref.f || filters != ref.filters || batch_size != ref.batch_size ||
            lr != ref.lr || adam_beta1 != ref.adam_beta1 || adam_beta2 != ref.adam_beta2) {
            fail("profile", "paper profile fixes d, k, f, filters, lr, Adam betas and batch size");
        }
    }
}

std::vector<std::pair<std::string, std::string>> VQConfig::fields() const {
    return {
        {"profile", std::string(to_string(profile))},
        {"image_size", std::to_string(image_size)},
        {"f", std::to_string(f)},
        {"d", std::to_string(d)},
        {"k", std::to_string(k)},
        {"filters", join_ints(filters)},
        {"res_blocks", std::to_string(res_blocks)},
        {"beta", kv::format_double(beta)},
        {"lr", kv::format_double(lr)},
        {"adam_beta1", kv::format_double(adam_beta1)},
        {"adam_beta2", kv::format_double(adam_beta2)},
        {"batch_size", std::to_string(batch_size)},
        {"max_epochs", std::to_string(max_epochs)},
        {"dropout", kv::format_double(dropout)},
        {"disc_filters", std::to_string(disc_filters)},
        {"disc_layers", std::to_string(disc_layers)},
        {"featnet_channels", join_ints(featnet_channels)},
        {"featnet_seed", std::to_string(featnet_seed)},
        {"seed", std::to_string(seed)},
    };
}

void VQConfig::set(const std::string& key, const std::string& v) {
    if (key == "profile") profile = parse_profile(v);
    else if (key == "image_size") image_size = parse_int(key, v);
    else if (key == "f") f = parse_int(key, v);
    else if (key == "d") d = parse_int(key, v);
    else if (key == "k") k = parse_int(key, v);
    else if (key == "filters") filters = parse_ints(key, v);
    else if (key == "res_blocks") res_blocks = parse_int(key, v);
    else if (key == "beta") beta = parse_real(key, v);
    else if (key == "lr") lr = parse_real(key, v);
    else if (key == "adam_beta1") adam_beta1 = parse_real(key, v);
    else if (key == "adam_beta2") adam_beta2 = parse_real(key, v);
    else if (key == "batch_size") batch_size = parse_int(key, v);
    else if (key == "max_epochs") max_epochs = parse_int(key, v);
    else if (key == "dropout") dropout = parse_real(key, v);
    else if (key == "disc_filters") disc_filters = parse_int(key, v);
    else if (key == "disc_layers") disc_layers = parse_int(key, v);
    else if (key == "featnet_channels") featnet_channels = parse_ints(key, v);
    else if (key == "featnet_seed") featnet_seed = parse_u64(key, v);
    else if (key == "seed") seed = parse_u64(key, v);
    else throw std::invalid_argument("VQConfig: unknown field '" + key + "'");
}

void VQConfig::write(Checkpoint& ckpt, const std::string& prefix) const {
    for (const auto& [k, v] : fields()) ckpt.set_meta(prefix + k, v);
}

VQConfig VQConfig::read(const Checkpoint& ckpt, const std::string& prefix) {
    VQConfig c;
    for (const auto& [k, v] : c.fields()) {
        (void)v;
        const auto key = prefix + k;
        if (!ckpt.has_meta(key)) throw std::runtime_error("checkpoint lacks VQ config field '" + key + "'");
        c.set(k, ckpt.meta(key));
    }
    c.validate();
    return c;
}

kv::Record LossBreakdown::to_record() const {
    kv::Record r;
    r.set("l1", l1).set("perceptual", perceptual).set("adversarial_gen", adversarial_gen).set("embedding", embedding)
        .set("commitment", commitment).set("discriminator", discriminator).set("generator_total", generator_total());
    return r;
}

std::vector<CodeGrid> to_code_grids(const torch::Tensor& indices) {
    auto idx = indices.to(torch::kInt64).contiguous();
    if (idx.dim() != 3) throw std::invalid_argument("to_code_grids: expected [N,h,w]");
    std::vector<CodeGrid> out;
    const auto N = idx.size(0), h = idx.size(1), w = idx.size(2);
    const auto* p = idx.data_ptr<std::int64_t>();
    for (std::int64_t n = 0; n < N; ++n) {
        CodeGrid g{static_cast<int>(h), static_cast<int>(w), {}};
        g.indices.reserve(static_cast<std::size_t>(h * w));
        for (std::int64_t i = 0; i < h * w; ++i) g.indices.push_back(static_cast<std::int32_t>(p[n * h * w + i]));
        out.push_back(std::move(g));
    }
    return out;
}

torch::Tensor from_code_grids(std::span<const CodeGrid> grids) {
    if (grids.empty()) throw std::invalid_argument("from_code_grids: empty");
    const int h = grids[0].height, w = grids[0].width;
    auto out = torch::empty({static_cast<std::int64_t>(grids.size()), h, w}, torch::kInt64);
    auto* p = out.data_ptr<std::int64_t>();
    for (std::size_t n = 0; n < grids.size(); ++n) {
        if (grids[n].height != h || grids[n].width != w ||
            grids[n].indices.size() != static_cast<std::size_t>(h) * static_cast<std::size_t>(w)) {
            throw std::invalid_argument("from_code_grids: inconsistent grid shapes");
        }
        for (std::size_t i = 0; i < grids[n].indices.size(); ++i) p[n * h * w + i] = grids[n].indices[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Quantizer

namespace {

torch::Tensor flatten_cells(const torch::Tensor& z) {
    return z.permute({0, 2, 3, 1}).reshape({-1, z.size(1)});
}

// Squared Euclidean distances [M,k] computed in double as sums of squared differences.
template <class Fn>
void for_each_distance_chunk(const torch::Tensor& cells, const torch::Tensor& codebook, Fn&& fn) {
    torch::NoGradGuard guard;
    const auto z = cells.detach().to(torch::kFloat64);
    const auto e = codebook.detach().to(torch::kFloat64);
    const std::int64_t M = z.size(0);
    const std::int64_t chunk = std::max<std::int64_t>(1, (1 << 22) / std::max<std::int64_t>(1, e.size(0) * e.size(1)));
    for (std::int64_t s = 0; s < M; s += chunk) {
        const auto len = std::min(chunk, M - s);
        auto dist = (z.narrow(0, s, len).unsqueeze(1) - e.unsqueeze(0)).pow(2).sum(-1);
        fn(s, len, dist);
    }
}

}  // namespace

torch::Tensor nearest_indices(const torch::Tensor& z_e, const torch::Tensor& codebook, int rank) {
    if (z_e.dim() != 4) throw std::invalid_argument("quantize: z_e must be [N,d,h,w]");
    if (z_e.size(1) != codebook.size(1)) {
        throw std::invalid_argument("quantize: z_e depth " + std::to_string(z_e.size(1)) +
                                    " does not match codebook dimension " + std::to_string(codebook.size(1)));
    }
    if (rank < 1 || rank > codebook.size(0)) {
        throw std::invalid_argument("rank must lie in [1, k], got " + std::to_string(rank));
    }
    if (!torch::isfinite(z_e).all().item<bool>()) throw std::invalid_argument("quantize: z_e contains non-finite values");
    const auto cells = flatten_cells(z_e);
    auto idx = torch::empty({cells.size(0)}, torch::kInt64);
    for_each_distance_chunk(cells, codebook, [&](std::int64_t s, std::int64_t len, const torch::Tensor& dist) {
        if (rank == 1) {
            idx.narrow(0, s, len).copy_(dist.argmin(1));
        } else {
            auto sorted = std::get<1>(dist.sort(/*stable=*/true, /*dim=*/1, /*descending=*/false));
            idx.narrow(0, s, len).copy_(sorted.select(1, rank - 1));
        }
    });
    return idx.reshape({z_e.size(0), z_e.size(2), z_e.size(3)});
}

torch::Tensor lookup(const torch::Tensor& indices, const torch::Tensor& codebook) {
    const auto N = indices.size(0), h = indices.size(1), w = indices.size(2);
    if (indices.numel() > 0 && (indices.min().item<std::int64_t>() < 0 || indices.max().item<std::int64_t>() >= codebook.size(0))) {
        throw std::invalid_argument("code index outside the codebook");
    }
    return codebook.index_select(0, indices.reshape({-1}).to(torch::kInt64))
        .reshape({N, h, w, codebook.size(1)})
        .permute({0, 3, 1, 2})
        .contiguous();
}

QuantizeOutput quantize(const torch::Tensor& z_e, const torch::Tensor& codebook, double beta) {
    QuantizeOutput out;
    out.indices = nearest_indices(z_e, codebook, 1);
    const auto cells = flatten_cells(z_e);
    const auto e_q = codebook.index_select(0, out.indices.reshape({-1}));
    // Accumulated in double so the loss values stay exact to float rounding.
    const auto dtype = z_e.scalar_type();
    out.embedding = (cells.detach() - e_q).to(torch::kDouble).pow(2).sum(1).mean().to(dtype);
    out.commitment = (beta * (cells - e_q.detach()).to(torch::kDouble).pow(2).sum(1).mean()).to(dtype);
    // Forward value is exactly e_q; the gradient passes to z_e unchanged.
    const auto st = e_q.detach() + (cells - cells.detach());
    out.z_q = st.reshape({z_e.size(0), z_e.size(2), z_e.size(3), z_e.size(1)}).permute({0, 3, 1, 2});
    return out;
}

// ---------------------------------------------------------------------------
// Networks

ResBlockImpl::ResBlockImpl(int in_ch, int out_ch, double dropout) {
    norm1 = register_module("norm1", group_norm(in_ch));
    conv1 = register_module("conv1", conv(in_ch, out_ch, 3, 1, 1));
    norm2 = register_module("norm2", group_norm(out_ch));
    drop = register_module("drop", torch::nn::Dropout(dropout));
    conv2 = register_module("conv2", conv(out_ch, out_ch, 3, 1, 1));
    if (in_ch != out_ch) skip = register_module("skip", conv(in_ch, out_ch, 1));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
    auto h = conv1(torch::silu(norm1(x)));
    h = conv2(drop(torch::silu(norm2(h))));
    return (skip ? skip(x) : x) + h;
}

AttnBlockImpl::AttnBlockImpl(int ch) {
    norm = register_module("norm", group_norm(ch));
    q = register_module("q", conv(ch, ch, 1));
    k = register_module("k", conv(ch, ch, 1));
    v = register_module("v", conv(ch, ch, 1));
    proj = register_module("proj", conv(ch, ch, 1));
}

torch::Tensor AttnBlockImpl::forward(const torch::Tensor& x) {
    const auto N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
    auto h = norm(x);
    auto qq = q(h).reshape({N, C, H * W}).permute({0, 2, 1});  // [N,HW,C]
    auto kk = k(h).reshape({N, C, H * W});                     // [N,C,HW]
    auto vv = v(h).reshape({N, C, H * W});
    auto attn = torch::softmax(torch::bmm(qq, kk) / std::sqrt(static_cast<double>(C)), -1);  // [N,HW,HW]
    auto out = torch::bmm(vv, attn.permute({0, 2, 1})).reshape({N, C, H, W});
    return x + proj(out);
}

namespace {

struct DownsampleImpl : torch::nn::Module {
    explicit DownsampleImpl(int ch) { c = register_module("conv", conv(ch, ch, 3, 2, 1)); }
    torch::Tensor forward(const torch::Tensor& x) { return c(x); }
    torch::nn::Conv2d c{nullptr};
};
TORCH_MODULE(Downsample);

// Nearest-neighbour 2x upsample followed by a 3x3 conv into the next level's width.
struct UpsampleImpl : torch::nn::Module {
    UpsampleImpl(int in, int out) { c = register_module("conv", conv(in, out, 3, 1, 1)); }
    torch::Tensor forward(const torch::Tensor& x) {
        return c(F::interpolate(x, F::InterpolateFuncOptions()
                                       .scale_factor(std::vector<double>{2.0, 2.0})
                                       .mode(torch::kNearest)));
    }
    torch::nn::Conv2d c{nullptr};
};
TORCH_MODULE(Upsample);

}  // namespace

EncoderImpl::EncoderImpl(const VQConfig& cfg) {
    conv_in = register_module("conv_in", conv(3, cfg.filters[0], 3, 1, 1));
    stages = register_module("stages", torch::nn::ModuleList());
    int ch = cfg.filters[0];
    for (std::size_t level = 0; level < cfg.filters.size(); ++level) {
        torch::nn::Sequential stage;
        for (int r = 0; r < cfg.res_blocks; ++r) {
            stage->push_back(ResBlock(ch, cfg.filters[level], cfg.dropout));
            ch = cfg.filters[level];
        }
        if (level + 1 < cfg.filters.size()) stage->push_back(Downsample(ch));
        stages->push_back(stage);
    }
    mid1 = register_module("mid1", ResBlock(ch, ch, cfg.dropout));
    mid_attn = register_module("mid_attn", AttnBlock(ch));
    mid2 = register_module("mid2", ResBlock(ch, ch, cfg.dropout));
    norm_out = register_module("norm_out", group_norm(ch));
    conv_out = register_module("conv_out", conv(ch, cfg.d, 3, 1, 1));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
    auto h = conv_in(x);
    for (const auto& stage : *stages) h = stage->as<torch::nn::Sequential>()->forward(h);
    h = mid2(mid_attn(mid1(h)));
    return conv_out(torch::silu(norm_out(h)));
}

DecoderImpl::DecoderImpl(const VQConfig& cfg) {
    int ch = cfg.filters.back();
    conv_in = register_module("conv_in", conv(cfg.d, ch, 3, 1, 1));
    mid1 = register_module("mid1", ResBlock(ch, ch, cfg.dropout));
    mid_attn = register_module("mid_attn", AttnBlock(ch));
    mid2 = register_module("mid2", ResBlock(ch, ch, cfg.dropout));
    stages = register_module("stages", torch::nn::ModuleList());
    for (int level = static_cast<int>(cfg.filters.size()) - 1; level >= 0; --level) {
        torch::nn::Sequential stage;
        for (int r = 0; r < cfg.res_blocks; ++r) {
            stage->push_back(ResBlock(ch, cfg.filters[static_cast<std::size_t>(level)], cfg.dropout));
            ch = cfg.filters[static_cast<std::size_t>(level)];
        }
        if (level > 0) {
            stage->push_back(Upsample(ch, cfg.filters[static_cast<std::size_t>(level - 1)]));
            ch = cfg.filters[static_cast<std::size_t>(level - 1)];
        }
        stages->push_back(stage);
    }
    norm_out = register_module("norm_out", group_norm(ch));
    conv_out = register_module("conv_out", conv(ch, 3, 3, 1, 1));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) {
    auto h = mid2(mid_attn(mid1(conv_in(z))));
    for (const auto& stage : *stages) h = stage->as<torch::nn::Sequential>()->forward(h);
    return torch::tanh(conv_out(torch::silu(norm_out(h))));
}

int compute_receptive_field(std::span<const ConvSpec> stack) {
    if (stack.empty()) throw std::invalid_argument("compute_receptive_field: empty layer stack");
    long long rf = 1, jump = 1;
    for (const auto& l : stack) {
        if (l.stride <= 0) throw std::invalid_argument("compute_receptive_field: stride must be positive");
        if (l.kernel <= 0 || l.dilation <= 0) throw std::invalid_argument("compute_receptive_field: bad kernel/dilation");
        rf += static_cast<long long>(l.kernel - 1) * l.dilation * jump;
        jump *= l.stride;
    }
    return static_cast<int>(rf);
}

std::vector<ConvSpec> canonical_patch_stack() { return {{4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {4, 1, 1}, {4, 1, 1}}; }

int conv_output_size(int input, std::span<const ConvSpec> stack, int padding) {
    int s = input;
    for (const auto& l : stack) s = (s + 2 * padding - l.dilation * (l.kernel - 1) - 1) / l.stride + 1;
    return s;
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorOptions& o) {
    body = register_module("body", torch::nn::Sequential());
    auto lrelu = [] { return torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)); };
    body->push_back(conv(o.in_channels, o.filters, 4, 2, o.padding));
    body->push_back(lrelu());
    stack_.push_back({4, 2, 1});
    int prev = o.filters;
    for (int n = 1; n < o.layers; ++n) {
        const int ch = o.filters * std::min(1 << n, 8);
        body->push_back(conv(prev, ch, 4, 2, o.padding, !o.batch_norm));
        if (o.batch_norm) body->push_back(torch::nn::BatchNorm2d(ch));
        body->push_back(lrelu());
        stack_.push_back({4, 2, 1});
        prev = ch;
    }
    const int ch = o.filters * std::min(1 << o.layers, 8);
    body->push_back(conv(prev, ch, 4, 1, o.padding, !o.batch_norm));
    if (o.batch_norm) body->push_back(torch::nn::BatchNorm2d(ch));
    body->push_back(lrelu());
    stack_.push_back({4, 1, 1});
    body->push_back(conv(ch, 1, 4, 1, o.padding));
    stack_.push_back({4, 1, 1});

    for (auto& m : body->modules(false)) {
        if (auto* c = m->as<torch::nn::Conv2dImpl>()) torch::nn::init::normal_(c->weight, 0.0, 0.02);
        if (auto* b = m->as<torch::nn::BatchNorm2dImpl>()) {
            torch::nn::init::normal_(b->weight, 1.0, 0.02);
            torch::nn::init::zeros_(b->bias);
        }
    }
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return body->forward(x); }

FeatureNetImpl::FeatureNetImpl(std::vector<int> channels, std::uint64_t seed)
    : channels_(std::move(channels)), seed_(seed) {
    convs = register_module("convs", torch::nn::ModuleList());
    Rng rng(seed);
    torch::NoGradGuard guard;
    int prev = 3;
    for (std::size_t i = 0; i < channels_.size(); ++i) {
        auto c = conv(prev, channels_[i], 3, i == 0 ? 1 : 2, 1);
        const double sd = std::sqrt(2.0 / (prev * 9.0));
        auto w = c->weight.data_ptr<float>();
        for (std::int64_t j = 0; j < c->weight.numel(); ++j) w[j] = static_cast<float>(sd * rng.normal());
        c->bias.zero_();
        c->weight.set_requires_grad(false);
        c->bias.set_requires_grad(false);
        convs->push_back(c);
        prev = channels_[i];
    }
}

std::vector<torch::Tensor> FeatureNetImpl::stages(const torch::Tensor& x) {
    std::vector<torch::Tensor> out;
    auto h = x;
    for (const auto& c : *convs) {
        h = torch::relu(c->as<torch::nn::Conv2d>()->forward(h));
        out.push_back(h);
    }
    return out;
}

torch::Tensor FeatureNetImpl::pooled(const torch::Tensor& x) { return stages(x).back().mean({2, 3}); }

std::string FeatureNetImpl::id() const {
    std::string s = "randconv";
    for (int c : channels_) s += "-" + std::to_string(c);
    return s + "-seed" + std::to_string(seed_);
}

torch::Tensor perceptual_distance(FeatureNet& featnet, const torch::Tensor& x, const torch::Tensor& x_p) {
    if (x.sizes() != x_p.sizes()) throw std::invalid_argument("perceptual_distance: shape mismatch");
    auto fa = featnet->stages(x);
    auto fb = featnet->stages(x_p);
    auto total = torch::zeros({}, x.options());
    for (std::size_t i = 0; i < fa.size(); ++i) total = total + (fa[i] - fb[i]).pow(2).mean();
    return total;
}

torch::Tensor generator_adversarial(const torch::Tensor& fake_logits) { return F::softplus(-fake_logits).mean(); }

torch::Tensor discriminator_objective(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
    return F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
}

GeneratorTerms generator_objective(const torch::Tensor& x, const torch::Tensor& x_p, const torch::Tensor& fake_logits,
                                   FeatureNet& featnet, const torch::Tensor& embedding, const torch::Tensor& commitment) {
    if (x.sizes() != x_p.sizes()) throw std::invalid_argument("generator_objective: shape mismatch");
    GeneratorTerms t;
    t.l1 = (x - x_p).abs().mean();
    t.perceptual = perceptual_distance(featnet, x, x_p);
    t.adversarial_gen = generator_adversarial(fake_logits);
    t.embedding = embedding;
    t.commitment = commitment;
    return t;
}

// ---------------------------------------------------------------------------
// Full model

VQModelImpl::VQModelImpl(const VQConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    encoder = register_module("encoder", Encoder(cfg_));
    decoder = register_module("decoder", Decoder(cfg_));
    const double bound = 1.0 / cfg_.k;
    codebook = register_parameter("codebook", torch::empty({cfg_.k, cfg_.d}).uniform_(-bound, bound));
}

void check_input(const torch::Tensor& x, const VQConfig& cfg) {
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != cfg.image_size || x.size(3) != cfg.image_size) {
        std::ostringstream os;
        os << "expected images [N,3," << cfg.image_size << "," << cfg.image_size << "], got " << x.sizes();
        throw std::invalid_argument(os.str());
    }
}

torch::Tensor VQModelImpl::encode(const torch::Tensor& x) {
    check_input(x, cfg_);
    return encoder(x);
}

QuantizeOutput VQModelImpl::quantize(const torch::Tensor& z_e) { return vq::quantize(z_e, codebook, cfg_.beta); }

torch::Tensor VQModelImpl::decode(const torch::Tensor& z_q) {
    const int g = cfg_.grid_size();
    if (z_q.dim() != 4 || z_q.size(1) != cfg_.d || z_q.size(2) != g || z_q.size(3) != g) {
        std::ostringstream os;
        os << "decode: expected latent grid [N," << cfg_.d << "," << g << "," << g << "], got " << z_q.sizes();
        throw std::invalid_argument(os.str());
    }
    return decoder(z_q.contiguous());
}

torch::Tensor VQModelImpl::decode_indices(const torch::Tensor& indices) { return decode(lookup(indices, codebook)); }

torch::Tensor encode_image(VQModel& model, const Image& x) {
    torch::NoGradGuard guard;
    model->eval();
    return model->encode(nn::image_to_tensor(x));
}

CodeGrid quantize_image(VQModel& model, const Image& x) {
    torch::NoGradGuard guard;
    model->eval();
    return to_code_grids(model->quantize(model->encode(nn::image_to_tensor(x))).indices)[0];
}

Image decode_codes(VQModel& model, const CodeGrid& q) {
    torch::NoGradGuard guard;
    model->eval();
    return nn::tensor_to_image(model->decode_indices(from_code_grids(std::span<const CodeGrid>(&q, 1))));
}

Image reconstruct(VQModel& model, const Image& x) {
    torch::NoGradGuard guard;
    model->eval();
    auto z = model->encode(nn::image_to_tensor(x));
    return nn::tensor_to_image(model->decode(model->quantize(z).z_q));
}

FeatureNet make_featnet(const VQConfig& cfg) { return FeatureNet(cfg.featnet_channels, cfg.featnet_seed); }

namespace {

DiscriminatorOptions disc_options(const VQConfig& cfg) {
    DiscriminatorOptions o;
    o.filters = cfg.disc_filters;
    o.layers = cfg.disc_layers;
    return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// Training

VQTrainer::VQTrainer(const VQConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    torch::manual_seed(static_cast<std::int64_t>(cfg_.seed));
    model_ = VQModel(cfg_);
    disc_ = PatchDiscriminator(disc_options(cfg_));
    featnet_ = make_featnet(cfg_);
    featnet_->eval();
    opt_g_ = std::make_unique<torch::optim::Adam>(
        model_->parameters(), torch::optim::AdamOptions(cfg_.lr).betas({cfg_.adam_beta1, cfg_.adam_beta2}));
    opt_d_ = std::make_unique<torch::optim::Adam>(
        disc_->parameters(), torch::optim::AdamOptions(cfg_.lr).betas({cfg_.adam_beta1, cfg_.adam_beta2}));
}

VQTrainer::VQTrainer(const Checkpoint& ckpt) : VQTrainer(VQConfig::read(ckpt)) {
    nn::import_module(*model_, "model.", ckpt);
    nn::import_module(*disc_, "disc.", ckpt);
}

LossBreakdown VQTrainer::train_step(const torch::Tensor& x) {
    check_input(x, cfg_);
    model_->train();
    disc_->train();

    auto z_e = model_->encode(x);
    auto q = model_->quantize(z_e);
    auto x_p = model_->decode(q.z_q);
    auto terms = generator_objective(x, x_p, disc_->forward(x_p), featnet_, q.embedding, q.commitment);
    auto total = terms.total();
    require_finite(terms.l1, "l1");
    require_finite(terms.perceptual, "perceptual");
    require_finite(terms.adversarial_gen, "adversarial_gen");
    require_finite(terms.embedding, "embedding");
    require_finite(terms.commitment, "commitment");
    opt_g_->zero_grad();
    total.backward();
    opt_g_->step();

    opt_d_->zero_grad();
    auto d_loss = discriminator_objective(disc_->forward(x), disc_->forward(x_p.detach()));
    require_finite(d_loss, "discriminator");
    d_loss.backward();
    opt_d_->step();

    return {terms.l1.item<double>(),        terms.perceptual.item<double>(), terms.adversarial_gen.item<double>(),
            terms.embedding.item<double>(), terms.commitment.item<double>(), d_loss.item<double>()};
}

LossBreakdown VQTrainer::evaluate(const torch::Tensor& x) {
    check_input(x, cfg_);
    torch::NoGradGuard guard;
    model_->eval();
    disc_->eval();
    auto q = model_->quantize(model_->encode(x));
    auto x_p = model_->decode(q.z_q);
    auto fake = disc_->forward(x_p);
    auto terms = generator_objective(x, x_p, fake, featnet_, q.embedding, q.commitment);
    auto d_loss = discriminator_objective(disc_->forward(x), fake);
    return {terms.l1.item<double>(),        terms.perceptual.item<double>(), terms.adversarial_gen.item<double>(),
            terms.embedding.item<double>(), terms.commitment.item<double>(), d_loss.item<double>()};
}

LossBreakdown VQTrainer::evaluate(const nn::ImageBank& bank, int batch_size) {
    LossBreakdown acc;
    const auto n = bank.size();
    for (const auto& b : nn::epoch_batches(n, batch_size, 0, 0, false)) {
        const auto l = evaluate(bank.batch(b));
        const double w = static_cast<double>(b.size()) / static_cast<double>(n);
        acc.l1 += w * l.l1;
        acc.perceptual += w * l.perceptual;
        acc.adversarial_gen += w * l.adversarial_gen;
        acc.embedding += w * l.embedding;
        acc.commitment += w * l.commitment;
        acc.discriminator += w * l.discriminator;
    }
    return acc;
}

Checkpoint VQTrainer::to_checkpoint() const {
    Checkpoint c;
    c.set_meta("kind", "vq");
    cfg_.write(c);
    c.set_meta("featnet_id", featnet_->id());
    nn::export_module(*model_, "model.", c);
    nn::export_module(*disc_, "disc.", c);
    return c;
}

VQModel load_vq(const Checkpoint& ckpt) {
    if (ckpt.kind() != "vq") throw std::runtime_error("expected a vq checkpoint, got kind '" + ckpt.kind() + "'");
    auto cfg = VQConfig::read(ckpt);
    VQModel m(cfg);
    nn::import_module(*m, "model.", ckpt);
    m->eval();
    return m;
}

TrainResult train_vq(const DatasetManifest& manifest, const VQConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    if (manifest.image_size != cfg.image_size) {
        throw std::invalid_argument("train_vq: manifest image_size " + std::to_string(manifest.image_size) +
                                    " differs from VQConfig.image_size " + std::to_string(cfg.image_size));
    }
    auto train_records = load_split(manifest, Split::train);
    auto val_records = load_split(manifest, Split::val);
    if (train_records.empty() || val_records.empty()) throw std::invalid_argument("train_vq: manifest needs train and val splits");
    if (opts.max_train_images > 0 && static_cast<std::int64_t>(train_records.size()) > opts.max_train_images)
        train_records.resize(static_cast<std::size_t>(opts.max_train_images));
    if (opts.max_val_images > 0 && static_cast<std::int64_t>(val_records.size()) > opts.max_val_images)
        val_records.resize(static_cast<std::size_t>(opts.max_val_images));
    const nn::ImageBank train_bank(load_images(manifest, train_records));
    const nn::ImageBank val_bank(load_images(manifest, val_records));

    VQTrainer trainer(cfg);
    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path, std::ios::binary);
        if (!log) throw std::runtime_error("cannot write training log: " + opts.log_path.string());
    }

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        LossBreakdown sum;
        int steps = 0;
        for (const auto& b : nn::epoch_batches(train_bank.size(), cfg.batch_size, cfg.seed, epoch, true)) {
            const auto l = trainer.train_step(train_bank.batch(b));
            sum.l1 += l.l1;
            sum.perceptual += l.perceptual;
            sum.adversarial_gen += l.adversarial_gen;
            sum.embedding += l.embedding;
            sum.commitment += l.commitment;
            sum.discriminator += l.discriminator;
            ++steps;
        }
        EpochLog e;
        e.epoch = epoch;
        e.train = {sum.l1 / steps,        sum.perceptual / steps, sum.adversarial_gen / steps,
                   sum.embedding / steps, sum.commitment / steps, sum.discriminator / steps};
        e.val = trainer.evaluate(val_bank, cfg.batch_size);
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(e);

        kv::Record rec;
        rec.set("epoch", epoch);
        const auto train_rec = e.train.to_record();
        const auto val_rec = e.val.to_record();
        for (const auto& [k, v] : train_rec.fields()) rec.set("train_" + k, v);
        for (const auto& [k, v] : val_rec.fields()) rec.set("val_" + k, v);
        rec.set("seconds", e.seconds);
        if (log) log << rec.to_line() << '\n' << std::flush;
        if (opts.progress) opts.progress(rec.to_line());

        if (e.val.embedding < best) {
            best = e.val.embedding;
            result.best = trainer.to_checkpoint();
            result.best.set_meta("epoch", std::to_string(epoch));
            result.best.set_meta("val_loss", kv::format_double(e.val.embedding));
            result.best.set_meta("val_metric", "embedding");
            result.best_epoch = epoch;
            if (!opts.checkpoint_path.empty()) result.best.save(opts.checkpoint_path);
        }
    }
    return result;
}

}  // namespace strata::vq
