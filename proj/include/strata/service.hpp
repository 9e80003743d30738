#pragma once

// JSON-over-HTTP inference service over immutable, loaded checkpoints.

#include "strata/captioner.hpp"
#include "strata/concepts.hpp"
#include "strata/featmap.hpp"
#include "strata/vqmodel.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace strata::service {

struct ServiceConfig {
    std::filesystem::path vq_path;
    std::filesystem::path fae_path;
    std::filesystem::path captioner_path;
    std::filesystem::path vocab_path;
    std::filesystem::path concept_dir;  // *.concept files
    std::filesystem::path manifest_path;  // optional, feeds /gallery
    int gallery_limit = 64;
    std::function<void(const std::string&)> log;  // one kv line per request
};

struct Response {
    int status = 200;
    std::string body;  // JSON
};

class Session {
public:
    /// Loads every configured artifact; empty paths leave that part unloaded (endpoints
    /// needing it answer 503).
    static std::shared_ptr<const Session> load(const ServiceConfig& cfg);

    Response handle(const std::string& method, const std::string& path, const std::string& body) const;

    /// Artifact identifiers logged at startup.
    std::vector<std::pair<std::string, std::string>> artifact_ids() const { return ids_; }
    const std::vector<concepts::ConceptVector>& concept_list() const { return concepts_; }

    std::function<void(const std::string&)> log;

private:
    Session() = default;

    Response encode(const std::string& body) const;
    Response decode(const std::string& body) const;
    Response caption(const std::string& body) const;
    Response concept_step(const std::string& body) const;
    Response interpolate(const std::string& body) const;
    Response concepts() const;
    Response gallery() const;
    Response health() const;

    std::optional<vq::VQModel> vq_;
    std::optional<fae::FeatureAutoencoder> fae_;
    std::optional<cap::Captioner> cap_;
    std::optional<Vocabulary> vocab_;
    std::vector<concepts::ConceptVector> concepts_;
    std::vector<SampleRecord> gallery_;
    std::filesystem::path gallery_base_;
    std::vector<std::pair<std::string, std::string>> ids_;
    // libtorch modules are shared; requests run inference one at a time.
    mutable std::mutex infer_mu_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Blocking HTTP server; returns when stop() is called from another thread.
class Server {
public:
    explicit Server(std::shared_ptr<const Session> session);
    ~Server();
    /// Binds and serves until stop().
    bool listen(const std::string& host, int port);
    /// Binds only; port 0 picks a free port. Returns the bound port or -1.
    int bind(const std::string& host, int port);
    bool listen_after_bind();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace strata::service
