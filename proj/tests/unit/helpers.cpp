#include "helpers.hpp"

#include <atomic>
#include <unistd.h>

namespace strata::test {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("strata-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

vq::VQConfig tiny_vq_config() {
    auto c = vq::VQConfig::desk();
    c.image_size = 32;
    c.f = 3;
    c.d = 8;
    c.k = 16;
    c.filters = {8, 16, 16, 16};
    c.disc_filters = 8;
    c.featnet_channels = {4, 8, 8, 8};
    c.batch_size = 4;
    c.max_epochs = 1;
    return c;
}

fae::FAEConfig tiny_fae_config(const vq::VQConfig& v) {
    auto c = fae::FAEConfig::for_vq(v, vq::Profile::desk);
    c.D = 16;
    c.stage_channels = {16, 32};
    c.batch_size = 8;
    return c;
}

cap::CaptionerConfig tiny_cap_config(const vq::VQConfig& v, const Vocabulary& vocab) {
    auto c = cap::CaptionerConfig::for_models(v, vocab, vq::Profile::desk);
    c.layers = 1;
    c.model_dim = 32;
    c.ff_dim = 32;
    c.dropout = 0.0;
    return c;
}

const Vocabulary& grammar_vocab() {
    static const Vocabulary v = train_wordpiece(grammar_language(), 250);
    return v;
}

}  // namespace strata::test
