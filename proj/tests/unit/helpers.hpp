#pragma once

#include "strata/captioner.hpp"
#include "strata/featmap.hpp"
#include "strata/textvocab.hpp"
#include "strata/vqmodel.hpp"

#include <filesystem>
#include <string>

namespace strata::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

/// 32x32 images, 4x4 code grid, small enough for per-test construction.
vq::VQConfig tiny_vq_config();
fae::FAEConfig tiny_fae_config(const vq::VQConfig& v);
cap::CaptionerConfig tiny_cap_config(const vq::VQConfig& v, const Vocabulary& vocab);

/// Vocabulary trained on the whole grammar language.
const Vocabulary& grammar_vocab();

}  // namespace strata::test
