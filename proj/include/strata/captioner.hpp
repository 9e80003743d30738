#pragma once

// Single-head encoder-decoder transformer from flattened code grids to caption tokens.

#include "strata/checkpoint.hpp"
#include "strata/datagen.hpp"
#include "strata/textvocab.hpp"
#include "strata/vqmodel.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace strata::cap {

struct CaptionerConfig {
    vq::Profile profile = vq::Profile::desk;
    int layers = 4;
    int heads = 1;
    int ff_dim = 16;
    int model_dim = 64;
    int image_vocab = 256;  // k of the VQ codebook
    int image_len = 64;     // h*w of the code grid
    int text_vocab = 250;
    double dropout = 0.1;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    int batch_size = 32;
    int max_epochs = 50;
    int max_caption_len = 48;  // tokens including [START] and [STOP]
    std::uint64_t seed = 5;

    static CaptionerConfig desk();
    static CaptionerConfig paper();
    static CaptionerConfig for_models(const vq::VQConfig& vq, const Vocabulary& vocab, vq::Profile profile);

    void validate() const;
    void set(const std::string& key, const std::string& value);
    std::vector<std::pair<std::string, std::string>> fields() const;
    void write(Checkpoint& ckpt, const std::string& prefix = "cap.") const;
    static CaptionerConfig read(const Checkpoint& ckpt, const std::string& prefix = "cap.");
};

/// Scaled dot-product attention with `heads` heads; optional additive mask [Tq,Tk].
struct AttentionImpl : torch::nn::Module {
    AttentionImpl(int dim, int heads);
    torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& kv, const torch::Tensor& mask = {});

    torch::nn::Linear wq{nullptr}, wk{nullptr}, wv{nullptr}, wo{nullptr};
    int heads;
};
TORCH_MODULE(Attention);

struct FeedForwardImpl : torch::nn::Module {
    FeedForwardImpl(int dim, int hidden);
    torch::Tensor forward(const torch::Tensor& x);
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

struct EncoderLayerImpl : torch::nn::Module {
    EncoderLayerImpl(const CaptionerConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x);
    torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
    Attention attn{nullptr};
    FeedForward ff{nullptr};
    torch::nn::Dropout drop{nullptr};
};
TORCH_MODULE(EncoderLayer);

struct DecoderLayerImpl : torch::nn::Module {
    DecoderLayerImpl(const CaptionerConfig& cfg);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& memory, const torch::Tensor& causal);
    torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr}, ln3{nullptr};
    Attention self_attn{nullptr}, cross_attn{nullptr};
    FeedForward ff{nullptr};
    torch::nn::Dropout drop{nullptr};
};
TORCH_MODULE(DecoderLayer);

struct CaptionerImpl : torch::nn::Module {
    explicit CaptionerImpl(const CaptionerConfig& cfg);

    /// q: [N,image_len] int64 code indices (row-major flattened grids) -> memory [N,image_len,model_dim].
    torch::Tensor encode(const torch::Tensor& q);
    /// tokens: [N,T] int64 -> logits [N,T,text_vocab]; position t sees tokens <= t only.
    torch::Tensor decode(const torch::Tensor& memory, const torch::Tensor& tokens);
    torch::Tensor forward(const torch::Tensor& q, const torch::Tensor& tokens) { return decode(encode(q), tokens); }

    const CaptionerConfig& config() const { return cfg_; }

    torch::nn::Embedding image_embed{nullptr}, text_embed{nullptr};
    torch::Tensor image_pos, text_pos;
    torch::nn::ModuleList enc_layers{nullptr}, dec_layers{nullptr};
    torch::nn::LayerNorm enc_norm{nullptr}, dec_norm{nullptr};
    torch::nn::Linear head{nullptr};
    torch::nn::Dropout drop{nullptr};

private:
    CaptionerConfig cfg_;
};
TORCH_MODULE(Captioner);

/// Mean cross-entropy of next-token predictions over non-[PAD] targets.
/// tokens: [N,T] wrapped in [START]/[STOP] and right-padded with [PAD].
torch::Tensor teacher_forced_loss(Captioner& model, const torch::Tensor& q, const torch::Tensor& tokens);

/// Right-pads token sequences with [PAD] to `length`; rejects longer sequences.
torch::Tensor pad_tokens(const std::vector<TokenSeq>& seqs, int length);

/// Row-major flattening of code grids into [N,h*w].
torch::Tensor flatten_codes(const torch::Tensor& indices);

struct GeneratedCaption {
    Caption text;
    TokenSeq tokens;  // includes [START], and [STOP] unless truncated
    bool truncated = false;
};

/// Greedy argmax decoding from [START] until [STOP] or max_caption_len tokens.
std::vector<GeneratedCaption> generate(Captioner& model, const torch::Tensor& q, const Vocabulary& vocab);

struct CaptionData {
    torch::Tensor q;       // [N,image_len] int64
    torch::Tensor tokens;  // [N,max_caption_len] int64
    std::vector<Caption> captions;
    std::int64_t size() const { return q.defined() ? q.size(0) : 0; }
};

/// Codes from the frozen VQ model and tokenized captions for one split.
CaptionData build_caption_data(const DatasetManifest& manifest, Split split, vq::VQModel& vq, const Vocabulary& vocab,
                               int max_caption_len);

struct TrainOptions {
    std::filesystem::path checkpoint_path;
    std::filesystem::path log_path;
    std::function<void(const std::string&)> progress;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochLog> log;
    int best_epoch = 0;
};

double mean_loss(Captioner& model, const CaptionData& data, int batch_size = 128);

TrainResult train_captioner_data(const CaptionData& train, const CaptionData& val, const CaptionerConfig& cfg,
                                 const TrainOptions& opts,
                                 const std::vector<std::pair<std::string, std::string>>& extra_meta = {});

TrainResult train_captioner(const DatasetManifest& manifest, const Checkpoint& vq_ckpt, const Vocabulary& vocab,
                            const CaptionerConfig& cfg, const TrainOptions& opts);

/// Mean strict word accuracy of greedy captions against the reference captions.
double caption_accuracy(Captioner& model, const CaptionData& data, const Vocabulary& vocab);

Checkpoint to_checkpoint(const Captioner& model);
Captioner load_captioner(const Checkpoint& ckpt);

}  // namespace strata::cap
