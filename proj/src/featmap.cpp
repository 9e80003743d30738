#include "strata/featmap.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace strata::fae {

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

int to_int(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        int v = std::stoi(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(key + ": expected an integer, got '" + s + "'");
}

double to_real(const std::string& key, const std::string& s) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used == s.size()) return v;
    } catch (const std::exception&) {
    }
    throw std::invalid_argument(key + ": expected a number, got '" + s + "'");
}

torch::nn::Conv2d conv(int in, int out, int kernel, int stride, int padding) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding));
}

struct UpImpl : torch::nn::Module {
    UpImpl(int in, int out) { c = register_module("conv", conv(in, out, 3, 1, 1)); }
    torch::Tensor forward(const torch::Tensor& x) {
        namespace F = torch::nn::functional;
        return c(F::interpolate(
            x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    }
    torch::nn::Conv2d c{nullptr};
};
TORCH_MODULE(Up);

}  // namespace

FAEConfig FAEConfig::desk() { return FAEConfig{}; }

FAEConfig FAEConfig::paper() {
    FAEConfig c;
    c.profile = vq::Profile::paper;
    c.D = 512;
    c.stage_channels = {512, 1024};
    c.in_channels = 256;
    c.grid = 16;
    c.max_epochs = 300;
    return c;
}

FAEConfig FAEConfig::for_vq(const vq::VQConfig& v, vq::Profile profile) {
    FAEConfig c = profile == vq::Profile::paper ? paper() : desk();
    c.in_channels = v.d;
    c.grid = v.grid_size();
    return c;
}

void FAEConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("FAEConfig." + field + ": " + why);
    };
    if (D < 1) fail("D", "must be positive");
    if (stage_channels.empty()) fail("stage_channels", "needs at least one stage");
    for (int c : stage_channels)
        if (c < 1) fail("stage_channels", "channel counts must be positive");
    if (in_channels < 1) fail("in_channels", "must be positive");
    if (grid < 1 || (grid >> static_cast<int>(stage_channels.size())) < 1 ||
        (grid % (1 << static_cast<int>(stage_channels.size()))) != 0) {
        fail("grid", "must be divisible by 2^stages");
    }
    if (!(lr > 0)) fail("lr", "must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail("adam_beta1", "must lie in [0, 1)");
    if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam_beta2", "must lie in [0, 1)");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (max_epochs < 1) fail("max_epochs", "must be >= 1");
}

std::vector<std::pair<std::string, std::string>> FAEConfig::fields() const {
    return {
        {"profile", std::string(vq::to_string(profile))},
        {"D", std::to_string(D)},
        {"stage_channels", join_ints(stage_channels)},
        {"in_channels", std::to_string(in_channels)},
        {"grid", std::to_string(grid)},
        {"lr", kv::format_double(lr)},
        {"adam_beta1", kv::format_double(adam_beta1)},
        {"adam_beta2", kv::format_double(adam_beta2)},
        {"batch_size", std::to_string(batch_size)},
        {"max_epochs", std::to_string(max_epochs)},
        {"seed", std::to_string(seed)},
    };
}

void FAEConfig::set(const std::string& key, const std::string& v) {
    if (key == "profile") profile = vq::parse_profile(v);
    else if (key == "D") D = to_int(key, v);
    else if (key == "stage_channels") {
        stage_channels.clear();
        std::stringstream ss(v);
        std::string tok;
        while (std::getline(ss, tok, ',')) stage_channels.push_back(to_int(key, tok));
    } else if (key == "in_channels") in_channels = to_int(key, v);
    else if (key == "grid") grid = to_int(key, v);
    else if (key == "lr") lr = to_real(key, v);
    else if (key == "adam_beta1") adam_beta1 = to_real(key, v);
    else if (key == "adam_beta2") adam_beta2 = to_real(key, v);
    else if (key == "batch_size") batch_size = to_int(key, v);
    else if (key == "max_epochs") max_epochs = to_int(key, v);
    else if (key == "seed") {
        try {
            seed = std::stoull(v);
        } catch (const std::exception&) {
            throw std::invalid_argument("seed: expected an unsigned integer, got '" + v + "'");
        }
    } else throw std::invalid_argument("FAEConfig: unknown field '" + key + "'");
}

void FAEConfig::write(Checkpoint& ckpt, const std::string& prefix) const {
    for (const auto& [k, v] : fields()) ckpt.set_meta(prefix + k, v);
}

FAEConfig FAEConfig::read(const Checkpoint& ckpt, const std::string& prefix) {
    FAEConfig c;
    for (const auto& [k, v] : c.fields()) {
        (void)v;
        if (!ckpt.has_meta(prefix + k)) throw std::runtime_error("checkpoint lacks FAE config field '" + prefix + k + "'");
        c.set(k, ckpt.meta(prefix + k));
    }
    c.validate();
    return c;
}

FeatureAutoencoderImpl::FeatureAutoencoderImpl(const FAEConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    down = register_module("down", torch::nn::Sequential());
    int ch = cfg_.in_channels;
    for (int c : cfg_.stage_channels) {
        down->push_back(conv(ch, c, 3, 2, 1));
        down->push_back(torch::nn::SiLU());
        ch = c;
    }
    const int g = cfg_.bottleneck_grid();
    const int flat = ch * g * g;
    to_w = register_module("to_w", torch::nn::Linear(flat, cfg_.D));
    from_w = register_module("from_w", torch::nn::Linear(cfg_.D, flat));
    up = register_module("up", torch::nn::Sequential());
    for (int i = static_cast<int>(cfg_.stage_channels.size()) - 1; i >= 0; --i) {
        const int out = i > 0 ? cfg_.stage_channels[static_cast<std::size_t>(i - 1)] : cfg_.in_channels;
        up->push_back(torch::nn::SiLU());
        up->push_back(Up(ch, out));
        ch = out;
    }
}

torch::Tensor FeatureAutoencoderImpl::encode_w(const torch::Tensor& z_e) {
    if (z_e.dim() != 4 || z_e.size(1) != cfg_.in_channels || z_e.size(2) != cfg_.grid || z_e.size(3) != cfg_.grid) {
        std::ostringstream os;
        os << "encode_w: expected [N," << cfg_.in_channels << "," << cfg_.grid << "," << cfg_.grid << "], got "
           << z_e.sizes();
        throw std::invalid_argument(os.str());
    }
    return to_w(down->forward(z_e).flatten(1));
}

torch::Tensor FeatureAutoencoderImpl::decode_w(const torch::Tensor& w) {
    if (w.dim() != 2 || w.size(1) != cfg_.D) {
        std::ostringstream os;
        os << "decode_w: expected [N," << cfg_.D << "], got " << w.sizes();
        throw std::invalid_argument(os.str());
    }
    const int g = cfg_.bottleneck_grid();
    return up->forward(from_w(w).reshape({w.size(0), cfg_.stage_channels.back(), g, g}));
}

torch::Tensor encode_features(vq::VQModel& vq, std::span<const Image> images, int batch_size) {
    torch::NoGradGuard guard;
    vq->eval();
    std::vector<torch::Tensor> parts;
    for (std::size_t s = 0; s < images.size(); s += static_cast<std::size_t>(batch_size)) {
        const auto n = std::min(images.size() - s, static_cast<std::size_t>(batch_size));
        parts.push_back(vq->encode(nn::images_to_tensor(images.subspan(s, n))));
    }
    return torch::cat(parts, 0);
}

double feature_mse(FeatureAutoencoder& fae, const torch::Tensor& z_e) {
    torch::NoGradGuard guard;
    fae->eval();
    double total = 0;
    const auto n = z_e.size(0);
    for (std::int64_t s = 0; s < n; s += 256) {
        const auto len = std::min<std::int64_t>(256, n - s);
        const auto part = z_e.narrow(0, s, len);
        total += (fae->forward(part) - part).pow(2).mean().item<double>() * static_cast<double>(len);
    }
    return total / static_cast<double>(n);
}

TrainResult train_fae_features(const torch::Tensor& train, const torch::Tensor& val, const FAEConfig& cfg,
                               const TrainOptions& opts, const std::string& vq_id) {
    cfg.validate();
    torch::manual_seed(static_cast<std::int64_t>(cfg.seed));
    FeatureAutoencoder model(cfg);
    torch::optim::Adam opt(model->parameters(),
                           torch::optim::AdamOptions(cfg.lr).betas({cfg.adam_beta1, cfg.adam_beta2}));
    TrainResult result;
    result.feature_variance = (val - val.mean(0, true)).pow(2).mean().item<double>();

    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path, std::ios::binary);
        if (!log) throw std::runtime_error("cannot write training log: " + opts.log_path.string());
    }
    double best = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        model->train();
        double sum = 0;
        std::int64_t seen = 0;
        for (const auto& b : nn::epoch_batches(train.size(0), cfg.batch_size, cfg.seed, epoch, true)) {
            auto x = train.index_select(0, torch::tensor(b, torch::kInt64));
            auto loss = (model->forward(x) - x).pow(2).mean();
            const double v = loss.item<double>();
            if (!std::isfinite(v)) throw std::runtime_error("training diverged: non-finite feature mse loss");
            opt.zero_grad();
            loss.backward();
            opt.step();
            sum += v * static_cast<double>(b.size());
            seen += static_cast<std::int64_t>(b.size());
        }
        EpochLog e{epoch, sum / static_cast<double>(seen), feature_mse(model, val)};
        result.log.push_back(e);
        kv::Record rec;
        rec.set("epoch", epoch).set("train_mse", e.train_mse).set("val_mse", e.val_mse);
        if (log) log << rec.to_line() << '\n' << std::flush;
        if (opts.progress) opts.progress(rec.to_line());
        if (e.val_mse < best) {
            best = e.val_mse;
            auto c = to_checkpoint(model);
            c.set_meta("vq_id", vq_id);
            c.set_meta("epoch", std::to_string(epoch));
            c.set_meta("val_loss", kv::format_double(e.val_mse));
            c.set_meta("feature_variance", kv::format_double(result.feature_variance));
            result.best = std::move(c);
            result.best_epoch = epoch;
            if (!opts.checkpoint_path.empty()) result.best.save(opts.checkpoint_path);
        }
    }
    return result;
}

TrainResult train_fae(const DatasetManifest& manifest, const Checkpoint& vq_ckpt, const FAEConfig& cfg,
                      const TrainOptions& opts) {
    auto vq = vq::load_vq(vq_ckpt);
    const auto& vcfg = vq->config();
    if (vcfg.d != cfg.in_channels || vcfg.grid_size() != cfg.grid) {
        throw std::invalid_argument("train_fae: FAEConfig in_channels/grid do not match the VQ checkpoint");
    }
    const auto train_imgs = load_images(manifest, load_split(manifest, Split::train));
    const auto val_imgs = load_images(manifest, load_split(manifest, Split::val));
    if (train_imgs.empty() || val_imgs.empty()) throw std::invalid_argument("train_fae: manifest needs train and val splits");
    const auto train = encode_features(vq, train_imgs);
    const auto val = encode_features(vq, val_imgs);
    return train_fae_features(train, val, cfg, opts, vq_ckpt.id());
}

Checkpoint to_checkpoint(const FeatureAutoencoder& model) {
    Checkpoint c;
    c.set_meta("kind", "fae");
    model->config().write(c);
    nn::export_module(*model, "model.", c);
    return c;
}

FeatureAutoencoder load_fae(const Checkpoint& ckpt) {
    if (ckpt.kind() != "fae") throw std::runtime_error("expected an fae checkpoint, got kind '" + ckpt.kind() + "'");
    FeatureAutoencoder m(FAEConfig::read(ckpt));
    nn::import_module(*m, "model.", ckpt);
    m->eval();
    return m;
}

namespace {

void check_pair(vq::VQModel& vq, FeatureAutoencoder& fae) {
    const auto& v = vq->config();
    const auto& f = fae->config();
    if (v.d != f.in_channels || v.grid_size() != f.grid) {
        throw std::invalid_argument("feature autoencoder does not match the VQ model's latent grid");
    }
}

}  // namespace

torch::Tensor decode_from_w(vq::VQModel& vq, FeatureAutoencoder& fae, const torch::Tensor& w) {
    check_pair(vq, fae);
    torch::NoGradGuard guard;
    vq->eval();
    fae->eval();
    return vq->decode(vq->quantize(fae->decode_w(w)).z_q);
}

torch::Tensor codes_from_w(vq::VQModel& vq, FeatureAutoencoder& fae, const torch::Tensor& w) {
    check_pair(vq, fae);
    torch::NoGradGuard guard;
    fae->eval();
    return vq::nearest_indices(fae->decode_w(w), vq->codebook, 1);
}

torch::Tensor roundtrip(vq::VQModel& vq, FeatureAutoencoder& fae, const torch::Tensor& x) {
    check_pair(vq, fae);
    torch::NoGradGuard guard;
    vq->eval();
    fae->eval();
    return decode_from_w(vq, fae, fae->encode_w(vq->encode(x)));
}

std::vector<double> image_to_w(vq::VQModel& vq, FeatureAutoencoder& fae, const Image& x) {
    check_pair(vq, fae);
    torch::NoGradGuard guard;
    vq->eval();
    fae->eval();
    auto w = fae->encode_w(vq->encode(nn::image_to_tensor(x))).to(torch::kFloat64).contiguous();
    return {w.data_ptr<double>(), w.data_ptr<double>() + w.numel()};
}

Image w_to_image(vq::VQModel& vq, FeatureAutoencoder& fae, std::span<const double> w) {
    if (static_cast<int>(w.size()) != fae->config().D) {
        throw std::invalid_argument("w has dimension " + std::to_string(w.size()) + ", expected " +
                                    std::to_string(fae->config().D));
    }
    for (double v : w)
        if (!std::isfinite(v)) throw std::invalid_argument("w contains non-finite values");
    auto t = torch::tensor(std::vector<double>(w.begin(), w.end()), torch::kFloat64).to(torch::kFloat32).unsqueeze(0);
    return nn::tensor_to_image(decode_from_w(vq, fae, t));
}

}  // namespace strata::fae
