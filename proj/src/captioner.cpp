#include "strata/captioner.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace strata::cap {

namespace F = torch::nn::functional;

namespace {

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

torch::Tensor causal_mask(std::int64_t T) {
    return torch::full({T, T}, -std::numeric_limits<float>::infinity()).triu(1);
}

}  // namespace

CaptionerConfig CaptionerConfig::desk() { return CaptionerConfig{}; }

CaptionerConfig CaptionerConfig::paper() {
    CaptionerConfig c;
    c.profile = vq::Profile::paper;
    c.image_vocab = 2048;
    c.image_len = 256;
    return c;
}

CaptionerConfig CaptionerConfig::for_models(const vq::VQConfig& v, const Vocabulary& vocab, vq::Profile profile) {
    CaptionerConfig c = profile == vq::Profile::paper ? paper() : desk();
    c.image_vocab = v.k;
    c.image_len = v.grid_size() * v.grid_size();
    c.text_vocab = static_cast<int>(vocab.size());
    return c;
}

void CaptionerConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) {
        throw std::invalid_argument("CaptionerConfig." + field + ": " + why);
    };
    if (layers < 1) fail("layers", "must be >= 1");
    if (heads < 1) fail("heads", "must be >= 1");
    if (model_dim < 1) fail("model_dim", "must be positive");
    if (model_dim % heads != 0) fail("heads", "must divide model_dim");
    if (ff_dim < 1) fail("ff_dim", "must be positive");
    if (image_vocab < 1) fail("image_vocab", "must be positive");
    if (image_len < 1) fail("image_len", "must be positive");
    if (text_vocab <= special::count) fail("text_vocab", "must exceed the special-token count");
    if (!(dropout >= 0 && dropout < 1)) fail("dropout", "must lie in [0, 1)");
    if (!(lr > 0)) fail("lr", "must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail("adam_beta1", "must lie in [0, 1)");
    if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam_beta2", "must lie in [0, 1)");
    if (batch_size < 1) fail("batch_size", "must be >= 1");
    if (max_epochs < 1) fail("max_epochs", "must be >= 1");
    if (max_caption_len < 2) fail("max_caption_len", "must hold at least [START] and [STOP]");
}

std::vector<std::pair<std::string, std::string>> CaptionerConfig::fields() const {
    return {
        {"profile", std::string(vq::to_string(profile))},
        {"layers", std::to_string(layers)},
        {"heads", std::to_string(heads)},
        {"ff_dim", std::to_string(ff_dim)},
        {"model_dim", std::to_string(model_dim)},
        {"image_vocab", std::to_string(image_vocab)},
        {"image_len", std::to_string(image_len)},
        {"text_vocab", std::to_string(text_vocab)},
        {"dropout", kv::format_double(dropout)},
        {"lr", kv::format_double(lr)},
        {"adam_beta1", kv::format_double(adam_beta1)},
        {"adam_beta2", kv::format_double(adam_beta2)},
        {"batch_size", std::to_string(batch_size)},
        {"max_epochs", std::to_string(max_epochs)},
        {"max_caption_len", std::to_string(max_caption_len)},
        {"seed", std::to_string(seed)},
    };
}

void CaptionerConfig::set(const std::string& key, const std::string& v) {
    if (key == "profile") profile = vq::parse_profile(v);
    else if (key == "layers") layers = to_int(key, v);
    else if (key == "heads") heads = to_int(key, v);
    else if (key == "ff_dim") ff_dim = to_int(key, v);
    else if (key == "model_dim") model_dim = to_int(key, v);
    else if (key == "image_vocab") image_vocab = to_int(key, v);
    else if (key == "image_len") image_len = to_int(key, v);
    else if (key == "text_vocab") text_vocab = to_int(key, v);
    else if (key == "dropout") dropout = to_real(key, v);
    else if (key == "lr") lr = to_real(key, v);
    else if (key == "adam_beta1") adam_beta1 = to_real(key, v);
    else if (key == "adam_beta2") adam_beta2 = to_real(key, v);
    else if (key == "batch_size") batch_size = to_int(key, v);
    else if (key == "max_epochs") max_epochs = to_int(key, v);
    else if (key == "max_caption_len") max_caption_len = to_int(key, v);
    else if (key == "seed") {
        try {
            seed = std::stoull(v);
        } catch (const std::exception&) {
            throw std::invalid_argument("seed: expected an unsigned integer, got '" + v + "'");
        }
    } else throw std::invalid_argument("CaptionerConfig: unknown field '" + key + "'");
}

void CaptionerConfig::write(Checkpoint& ckpt, const std::string& prefix) const {
    for (const auto& [k, v] : fields()) ckpt.set_meta(prefix + k, v);
}

CaptionerConfig CaptionerConfig::read(const Checkpoint& ckpt, const std::string& prefix) {
    CaptionerConfig c;
    for (const auto& [k, v] : c.fields()) {
        (void)v;
        if (!ckpt.has_meta(prefix + k))
            throw std::runtime_error("checkpoint lacks captioner config field '" + prefix + k + "'");
        c.set(k, ckpt.meta(prefix + k));
    }
    c.validate();
    return c;
}

AttentionImpl::AttentionImpl(int dim, int h) : heads(h) {
    wq = register_module("wq", torch::nn::Linear(dim, dim));
    wk = register_module("wk", torch::nn::Linear(dim, dim));
    wv = register_module("wv", torch::nn::Linear(dim, dim));
    wo = register_module("wo", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& q, const torch::Tensor& kv, const torch::Tensor& mask) {
    const auto N = q.size(0), Tq = q.size(1), Tk = kv.size(1), D = q.size(2);
    const auto hd = D / heads;
    auto split = [&](const torch::Tensor& t, std::int64_t T) { return t.reshape({N, T, heads, hd}).transpose(1, 2); };
    auto Q = split(wq(q), Tq), K = split(wk(kv), Tk), V = split(wv(kv), Tk);
    auto scores = torch::matmul(Q, K.transpose(-2, -1)) / std::sqrt(static_cast<double>(hd));
    if (mask.defined()) scores = scores + mask;
    auto out = torch::matmul(torch::softmax(scores, -1), V);
    return wo(out.transpose(1, 2).reshape({N, Tq, D}));
}

FeedForwardImpl::FeedForwardImpl(int dim, int hidden) {
    fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) { return fc2(torch::relu(fc1(x))); }

EncoderLayerImpl::EncoderLayerImpl(const CaptionerConfig& cfg) {
    ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.model_dim})));
    ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.model_dim})));
    attn = register_module("attn", Attention(cfg.model_dim, cfg.heads));
    ff = register_module("ff", FeedForward(cfg.model_dim, cfg.ff_dim));
    drop = register_module("drop", torch::nn::Dropout(cfg.dropout));
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x) {
    auto h = ln1(x);
    auto y = x + drop(attn(h, h));
    return y + drop(ff(ln2(y)));
}

DecoderLayerImpl::DecoderLayerImpl(const CaptionerConfig& cfg) {
    ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.model_dim})));
    ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.model_dim})));
    ln3 = register_module("ln3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.model_dim})));
    self_attn = register_module("self_attn", Attention(cfg.model_dim, cfg.heads));
    cross_attn = register_module("cross_attn", Attention(cfg.model_dim, cfg.heads));
    ff = register_module("ff", FeedForward(cfg.model_dim, cfg.ff_dim));
    drop = register_module("drop", torch::nn::Dropout(cfg.dropout));
}

torch::Tensor DecoderLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& memory,
                                        const torch::Tensor& causal) {
    auto h = ln1(x);
    auto y = x + drop(self_attn(h, h, causal));
    y = y + drop(cross_attn(ln2(y), memory));
    return y + drop(ff(ln3(y)));
}

CaptionerImpl::CaptionerImpl(const CaptionerConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    image_embed = register_module("image_embed", torch::nn::Embedding(cfg_.image_vocab, cfg_.model_dim));
    text_embed = register_module("text_embed", torch::nn::Embedding(cfg_.text_vocab, cfg_.model_dim));
    image_pos = register_parameter("image_pos", torch::randn({cfg_.image_len, cfg_.model_dim}) * 0.02);
    text_pos = register_parameter("text_pos", torch::randn({cfg_.max_caption_len, cfg_.model_dim}) * 0.02);
    enc_layers = register_module("enc_layers", torch::nn::ModuleList());
    dec_layers = register_module("dec_layers", torch::nn::ModuleList());
    for (int i = 0; i < cfg_.layers; ++i) {
        enc_layers->push_back(EncoderLayer(cfg_));
        dec_layers->push_back(DecoderLayer(cfg_));
    }
    enc_norm = register_module("enc_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.model_dim})));
    dec_norm = register_module("dec_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg_.model_dim})));
    head = register_module("head", torch::nn::Linear(cfg_.model_dim, cfg_.text_vocab));
    drop = register_module("drop", torch::nn::Dropout(cfg_.dropout));
    torch::NoGradGuard guard;
    torch::nn::init::normal_(image_embed->weight, 0.0, 0.02);
    torch::nn::init::normal_(text_embed->weight, 0.0, 0.02);
    torch::nn::init::normal_(head->weight, 0.0, 0.02);
    torch::nn::init::zeros_(head->bias);
}

torch::Tensor CaptionerImpl::encode(const torch::Tensor& q) {
    if (q.dim() != 2 || q.size(1) != cfg_.image_len) {
        throw std::invalid_argument("captioner: expected code sequence of length " + std::to_string(cfg_.image_len));
    }
    if (q.numel() > 0 && (q.min().item<std::int64_t>() < 0 || q.max().item<std::int64_t>() >= cfg_.image_vocab)) {
        throw std::invalid_argument("captioner: code index outside the image vocabulary");
    }
    auto x = drop(image_embed(q) + image_pos.unsqueeze(0));
    for (const auto& l : *enc_layers) x = l->as<EncoderLayer>()->forward(x);
    return enc_norm(x);
}

torch::Tensor CaptionerImpl::decode(const torch::Tensor& memory, const torch::Tensor& tokens) {
    const auto T = tokens.size(1);
    if (tokens.dim() != 2 || T < 1 || T > cfg_.max_caption_len) {
        throw std::invalid_argument("captioner: token sequence length must lie in [1, " +
                                    std::to_string(cfg_.max_caption_len) + "]");
    }
    if (tokens.min().item<std::int64_t>() < 0 || tokens.max().item<std::int64_t>() >= cfg_.text_vocab) {
        throw std::invalid_argument("captioner: token id outside the text vocabulary");
    }
    auto mask = causal_mask(T);
    auto x = drop(text_embed(tokens) + text_pos.narrow(0, 0, T).unsqueeze(0));
    for (const auto& l : *dec_layers) x = l->as<DecoderLayer>()->forward(x, memory, mask);
    return head(dec_norm(x));
}

torch::Tensor teacher_forced_loss(Captioner& model, const torch::Tensor& q, const torch::Tensor& tokens) {
    const auto T = tokens.size(1);
    auto inputs = tokens.narrow(1, 0, T - 1);
    auto targets = tokens.narrow(1, 1, T - 1);
    auto logits = model->forward(q, inputs);
    return F::cross_entropy(logits.reshape({-1, logits.size(2)}), targets.reshape({-1}),
                            F::CrossEntropyFuncOptions().ignore_index(special::pad));
}

torch::Tensor pad_tokens(const std::vector<TokenSeq>& seqs, int length) {
    auto out = torch::full({static_cast<std::int64_t>(seqs.size()), length}, special::pad, torch::kInt64);
    auto acc = out.accessor<std::int64_t, 2>();
    for (std::size_t i = 0; i < seqs.size(); ++i) {
        if (static_cast<int>(seqs[i].size()) > length) {
            throw std::invalid_argument("token sequence of length " + std::to_string(seqs[i].size()) +
                                        " exceeds max_caption_len " + std::to_string(length));
        }
        for (std::size_t t = 0; t < seqs[i].size(); ++t) acc[static_cast<long>(i)][static_cast<long>(t)] = seqs[i][t];
    }
    return out;
}

torch::Tensor flatten_codes(const torch::Tensor& indices) {
    return indices.reshape({indices.size(0), -1}).to(torch::kInt64).contiguous();
}

std::vector<GeneratedCaption> generate(Captioner& model, const torch::Tensor& q, const Vocabulary& vocab) {
    torch::NoGradGuard guard;
    model->eval();
    const auto N = q.size(0);
    const int max_len = model->config().max_caption_len;
    auto memory = model->encode(q);
    auto tokens = torch::full({N, 1}, special::start, torch::kInt64);
    std::vector<bool> done(static_cast<std::size_t>(N), false);
    std::vector<GeneratedCaption> out(static_cast<std::size_t>(N));
    for (auto& g : out) g.tokens = {special::start};
    std::int64_t remaining = N;
    while (tokens.size(1) < max_len && remaining > 0) {
        auto logits = model->decode(memory, tokens);
        auto next = logits.select(1, tokens.size(1) - 1).argmax(-1);
        auto acc = next.accessor<std::int64_t, 1>();
        for (std::int64_t n = 0; n < N; ++n) {
            if (done[static_cast<std::size_t>(n)]) continue;
            const auto id = static_cast<std::int32_t>(acc[n]);
            out[static_cast<std::size_t>(n)].tokens.push_back(id);
            if (id == special::stop) {
                done[static_cast<std::size_t>(n)] = true;
                --remaining;
            }
        }
        tokens = torch::cat({tokens, next.unsqueeze(1)}, 1);
    }
    for (std::size_t n = 0; n < out.size(); ++n) {
        out[n].truncated = !done[n];
        out[n].text = detokenize(out[n].tokens, vocab);
    }
    return out;
}

CaptionData build_caption_data(const DatasetManifest& manifest, Split split, vq::VQModel& vq, const Vocabulary& vocab,
                               int max_caption_len) {
    const auto records = load_split(manifest, split);
    CaptionData data;
    if (records.empty()) return data;
    const auto images = load_images(manifest, records);
    std::vector<torch::Tensor> parts;
    {
        torch::NoGradGuard guard;
        vq->eval();
        const std::size_t bs = 64;
        for (std::size_t s = 0; s < images.size(); s += bs) {
            const auto n = std::min(bs, images.size() - s);
            auto x = nn::images_to_tensor(std::span<const Image>(images).subspan(s, n));
            parts.push_back(flatten_codes(vq->quantize(vq->encode(x)).indices));
        }
    }
    data.q = torch::cat(parts, 0);
    std::vector<TokenSeq> seqs;
    for (const auto& r : records) {
        data.captions.push_back(r.caption);
        seqs.push_back(tokenize(r.caption, vocab));
    }
    data.tokens = pad_tokens(seqs, max_caption_len);
    return data;
}

double mean_loss(Captioner& model, const CaptionData& data, int batch_size) {
    torch::NoGradGuard guard;
    model->eval();
    double total = 0;
    double weight = 0;
    for (std::int64_t s = 0; s < data.size(); s += batch_size) {
        const auto len = std::min<std::int64_t>(batch_size, data.size() - s);
        auto tok = data.tokens.narrow(0, s, len);
        const double targets = tok.narrow(1, 1, tok.size(1) - 1).ne(special::pad).sum().item<double>();
        total += teacher_forced_loss(model, data.q.narrow(0, s, len), tok).item<double>() * targets;
        weight += targets;
    }
    return total / weight;
}

TrainResult train_captioner_data(const CaptionData& train, const CaptionData& val, const CaptionerConfig& cfg,
                                 const TrainOptions& opts,
                                 const std::vector<std::pair<std::string, std::string>>& extra_meta) {
    cfg.validate();
    if (train.size() == 0 || val.size() == 0) throw std::invalid_argument("train_captioner: empty train or val data");
    torch::manual_seed(static_cast<std::int64_t>(cfg.seed));
    Captioner model(cfg);
    torch::optim::Adam opt(model->parameters(),
                           torch::optim::AdamOptions(cfg.lr).betas({cfg.adam_beta1, cfg.adam_beta2}));
    std::ofstream log;
    if (!opts.log_path.empty()) {
        log.open(opts.log_path, std::ios::binary);
        if (!log) throw std::runtime_error("cannot write training log: " + opts.log_path.string());
    }
    TrainResult result;
    double best = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        model->train();
        double sum = 0;
        int steps = 0;
        for (const auto& b : nn::epoch_batches(train.size(), cfg.batch_size, cfg.seed, epoch, true)) {
            auto idx = torch::tensor(b, torch::kInt64);
            auto loss = teacher_forced_loss(model, train.q.index_select(0, idx), train.tokens.index_select(0, idx));
            const double v = loss.item<double>();
            if (!std::isfinite(v)) throw std::runtime_error("training diverged: non-finite cross-entropy loss");
            opt.zero_grad();
            loss.backward();
            opt.step();
            sum += v;
            ++steps;
        }
        EpochLog e{epoch, sum / steps, mean_loss(model, val)};
        result.log.push_back(e);
        kv::Record rec;
        rec.set("epoch", epoch).set("train_loss", e.train_loss).set("val_loss", e.val_loss);
        if (log) log << rec.to_line() << '\n' << std::flush;
        if (opts.progress) opts.progress(rec.to_line());
        if (e.val_loss < best) {
            best = e.val_loss;
            auto c = to_checkpoint(model);
            for (const auto& [k, v] : extra_meta) c.set_meta(k, v);
            c.set_meta("epoch", std::to_string(epoch));
            c.set_meta("val_loss", kv::format_double(e.val_loss));
            result.best = std::move(c);
            result.best_epoch = epoch;
            if (!opts.checkpoint_path.empty()) result.best.save(opts.checkpoint_path);
        }
    }
    return result;
}

Checkpoint to_checkpoint(const Captioner& model) {
    Checkpoint c;
    c.set_meta("kind", "captioner");
    model->config().write(c);
    nn::export_module(*model, "model.", c);
    return c;
}

TrainResult train_captioner(const DatasetManifest& manifest, const Checkpoint& vq_ckpt, const Vocabulary& vocab,
                            const CaptionerConfig& cfg, const TrainOptions& opts) {
    auto vq = vq::load_vq(vq_ckpt);
    const auto& v = vq->config();
    if (cfg.image_vocab != v.k || cfg.image_len != v.grid_size() * v.grid_size()) {
        throw std::invalid_argument("train_captioner: image_vocab/image_len do not match the VQ checkpoint");
    }
    if (cfg.text_vocab != static_cast<int>(vocab.size())) {
        throw std::invalid_argument("train_captioner: text_vocab does not match the vocabulary size");
    }
    const auto train = build_caption_data(manifest, Split::train, vq, vocab, cfg.max_caption_len);
    const auto val = build_caption_data(manifest, Split::val, vq, vocab, cfg.max_caption_len);
    return train_captioner_data(train, val, cfg, opts,
                                {{"vq_id", vq_ckpt.id()}, {"vocab_hash", vocab.content_hash()}});
}

double caption_accuracy(Captioner& model, const CaptionData& data, const Vocabulary& vocab) {
    if (data.size() == 0) throw std::invalid_argument("caption_accuracy: empty data");
    double sum = 0;
    for (std::int64_t s = 0; s < data.size(); s += 128) {
        const auto len = std::min<std::int64_t>(128, data.size() - s);
        const auto gen = generate(model, data.q.narrow(0, s, len), vocab);
        for (std::int64_t i = 0; i < len; ++i)
            sum += strata::caption_accuracy(gen[static_cast<std::size_t>(i)].text,
                                            data.captions[static_cast<std::size_t>(s + i)]);
    }
    return sum / static_cast<double>(data.size());
}

Captioner load_captioner(const Checkpoint& ckpt) {
    if (ckpt.kind() != "captioner") {
        throw std::runtime_error("expected a captioner checkpoint, got kind '" + ckpt.kind() + "'");
    }
    Captioner m(CaptionerConfig::read(ckpt));
    nn::import_module(*m, "model.", ckpt);
    m->eval();
    return m;
}

}  // namespace strata::cap
