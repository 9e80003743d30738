#include "strata/service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace strata::service {

using nlohmann::json;

namespace {

struct HttpError : std::runtime_error {
    HttpError(int s, const std::string& m) : std::runtime_error(m), status(s) {}
    int status;
};

Response reply(const json& j, int status = 200) { return {status, j.dump()}; }

Response error(int status, const std::string& message) {
    return reply(json{{"code", status}, {"message", message}}, status);
}

json parse_body(const std::string& body) {
    try {
        auto j = json::parse(body);
        if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        throw HttpError(400, std::string("malformed JSON: ") + e.what());
    }
}

std::vector<double> get_vector(const json& j, const char* key, std::size_t D) {
    if (!j.contains(key) || !j[key].is_array()) throw HttpError(400, std::string("missing number array '") + key + "'");
    std::vector<double> v;
    for (const auto& x : j[key]) {
        if (!x.is_number()) throw HttpError(400, std::string("'") + key + "' must contain only numbers");
        v.push_back(x.get<double>());
        if (!std::isfinite(v.back())) throw HttpError(400, std::string("'") + key + "' contains non-finite values");
    }
    if (v.size() != D) {
        throw HttpError(400, std::string("'") + key + "' has dimension " + std::to_string(v.size()) + ", expected " +
                                 std::to_string(D));
    }
    return v;
}

std::string image_payload(const Image& img) { return base64_encode(encode_png(img)); }

}  // namespace

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    return httplib::detail::base64_encode(std::string(bytes.begin(), bytes.end()));
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
    static constexpr std::string_view alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    if (auto comma = text.find(','); text.rfind("data:", 0) == 0 && comma != std::string_view::npos) {
        text.remove_prefix(comma + 1);
    }
    std::vector<std::uint8_t> out;
    std::uint32_t acc = 0;
    int bits = 0;
    std::size_t pad = 0;
    for (char ch : text) {
        if (ch == '=') {
            ++pad;
            continue;
        }
        if (ch == '\n' || ch == '\r' || ch == ' ') continue;
        const auto pos = alphabet.find(ch);
        if (pos == std::string_view::npos || pad > 0) throw std::invalid_argument("invalid base64 payload");
        acc = (acc << 6) | static_cast<std::uint32_t>(pos);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
        }
    }
    if (pad > 2) throw std::invalid_argument("invalid base64 padding");
    return out;
}

std::shared_ptr<const Session> Session::load(const ServiceConfig& cfg) {
    std::shared_ptr<Session> s(new Session());
    s->log = cfg.log;
    if (!cfg.vq_path.empty()) {
        const auto c = Checkpoint::load(cfg.vq_path);
        s->vq_ = vq::load_vq(c);
        s->ids_.emplace_back("vq", c.id());
    }
    if (!cfg.fae_path.empty()) {
        const auto c = Checkpoint::load(cfg.fae_path);
        s->fae_ = fae::load_fae(c);
        s->ids_.emplace_back("fae", c.id());
    }
    if (!cfg.captioner_path.empty()) {
        const auto c = Checkpoint::load(cfg.captioner_path);
        s->cap_ = cap::load_captioner(c);
        s->ids_.emplace_back("captioner", c.id());
    }
    if (!cfg.vocab_path.empty()) {
        s->vocab_ = Vocabulary::load(cfg.vocab_path.string());
        s->ids_.emplace_back("vocab", s->vocab_->content_hash());
    }
    if (!cfg.concept_dir.empty()) {
        std::vector<std::filesystem::path> files;
        for (const auto& e : std::filesystem::directory_iterator(cfg.concept_dir))
            if (e.path().extension() == ".concept") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) s->concepts_.push_back(concepts::load_concept(f));
        s->ids_.emplace_back("concepts", std::to_string(s->concepts_.size()));
    }
    if (!cfg.manifest_path.empty()) {
        const auto m = load_manifest(cfg.manifest_path);
        s->gallery_ = load_split(m, Split::test);
        if (static_cast<int>(s->gallery_.size()) > cfg.gallery_limit) s->gallery_.resize(static_cast<std::size_t>(cfg.gallery_limit));
        s->gallery_base_ = m.base_dir;
    }
    if (s->vq_ && s->fae_) {
        if ((*s->vq_)->config().d != (*s->fae_)->config().in_channels ||
            (*s->vq_)->config().grid_size() != (*s->fae_)->config().grid) {
            throw std::runtime_error("feature autoencoder checkpoint does not match the VQ checkpoint");
        }
    }
    if (s->fae_) {
        for (const auto& c : s->concepts_) {
            if (static_cast<int>(c.dim()) != (*s->fae_)->config().D) {
                throw std::runtime_error("concept '" + c.name + "' dimension does not match the feature autoencoder");
            }
        }
    }
    return s;
}

Response Session::handle(const std::string& method, const std::string& path, const std::string& body) const {
    const auto t0 = std::chrono::steady_clock::now();
    Response r;
    try {
        if (method == "POST" && path == "/encode") r = encode(body);
        else if (method == "POST" && path == "/decode") r = decode(body);
        else if (method == "POST" && path == "/caption") r = caption(body);
        else if (method == "POST" && path == "/concept/step") r = concept_step(body);
        else if (method == "POST" && path == "/interpolate") r = interpolate(body);
        else if (method == "GET" && path == "/concepts") r = concepts();
        else if (method == "GET" && path == "/gallery") r = gallery();
        else if (method == "GET" && path == "/health") r = health();
        else r = error(404, "no route for " + method + " " + path);
    } catch (const HttpError& e) {
        r = error(e.status, e.what());
    } catch (const std::invalid_argument& e) {
        r = error(400, e.what());
    } catch (const std::exception& e) {
        r = error(500, e.what());
    }
    if (log) {
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        kv::Record rec;
        rec.set("method", method).set("path", path).set("status", r.status).set("latency_ms", ms);
        log(rec.to_line());
    }
    return r;
}

namespace {

Image read_image_field(const json& j, int expected_size) {
    if (!j.contains("image") || !j["image"].is_string()) throw HttpError(400, "missing base64 PNG string 'image'");
    Image img;
    try {
        img = decode_png(base64_decode(j["image"].get<std::string>()));
    } catch (const std::exception& e) {
        throw HttpError(400, std::string("image is not a decodable PNG: ") + e.what());
    }
    if (img.height() != expected_size || img.width() != expected_size) {
        throw HttpError(400, "image is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                                 ", expected " + std::to_string(expected_size) + "x" + std::to_string(expected_size));
    }
    return img;
}

json grid_json(const vq::CodeGrid& g) {
    return json{{"height", g.height}, {"width", g.width}, {"indices", g.indices}};
}

}  // namespace

Response Session::encode(const std::string& body) const {
    if (!vq_ || !fae_) return error(503, "VQ and feature autoencoder checkpoints are not loaded");
    const auto j = parse_body(body);
    auto vq = *vq_;
    auto fae = *fae_;
    const auto img = read_image_field(j, vq->config().image_size);
    std::lock_guard lock(infer_mu_);
    const auto w = fae::image_to_w(vq, fae, img);
    const auto q = vq::quantize_image(vq, img);
    return reply(json{{"w", w}, {"D", w.size()}, {"q", grid_json(q)}});
}

Response Session::decode(const std::string& body) const {
    if (!vq_ || !fae_) return error(503, "VQ and feature autoencoder checkpoints are not loaded");
    const auto j = parse_body(body);
    auto vq = *vq_;
    auto fae = *fae_;
    const auto w = get_vector(j, "w", static_cast<std::size_t>(fae->config().D));
    std::lock_guard lock(infer_mu_);
    const auto img = fae::w_to_image(vq, fae, w);
    auto wt = torch::tensor(w, torch::kFloat64).to(torch::kFloat32).unsqueeze(0);
    const auto q = vq::to_code_grids(fae::codes_from_w(vq, fae, wt))[0];
    return reply(json{{"image", image_payload(img)}, {"q", grid_json(q)}});
}

namespace {

std::pair<std::string, bool> caption_codes(cap::Captioner model, const Vocabulary& vocab, const torch::Tensor& codes) {
    const auto g = cap::generate(model, cap::flatten_codes(codes), vocab);
    return {g[0].text, g[0].truncated};
}

}  // namespace

Response Session::caption(const std::string& body) const {
    if (!vq_ || !cap_ || !vocab_) return error(503, "VQ, captioner and vocabulary are not loaded");
    const auto j = parse_body(body);
    auto vq = *vq_;
    torch::Tensor codes;
    if (j.contains("w")) {
        if (!fae_) return error(503, "feature autoencoder checkpoint is not loaded");
        auto fae = *fae_;
        const auto w = get_vector(j, "w", static_cast<std::size_t>(fae->config().D));
        std::lock_guard lock(infer_mu_);
        codes = fae::codes_from_w(vq, fae, torch::tensor(w, torch::kFloat64).to(torch::kFloat32).unsqueeze(0));
        const auto [text, truncated] = caption_codes(*cap_, *vocab_, codes);
        return reply(json{{"caption", text}, {"truncated", truncated}});
    }
    const auto img = read_image_field(j, vq->config().image_size);
    std::lock_guard lock(infer_mu_);
    const auto g = vq::quantize_image(vq, img);
    codes = vq::from_code_grids(std::span<const vq::CodeGrid>(&g, 1));
    const auto [text, truncated] = caption_codes(*cap_, *vocab_, codes);
    return reply(json{{"caption", text}, {"truncated", truncated}});
}

Response Session::concept_step(const std::string& body) const {
    if (!vq_ || !fae_ || !cap_ || !vocab_) return error(503, "checkpoints are not loaded");
    const auto j = parse_body(body);
    auto vq = *vq_;
    auto fae = *fae_;
    if (!j.contains("concept") || !j["concept"].is_string()) throw HttpError(400, "missing string 'concept'");
    if (!j.contains("alpha") || !j["alpha"].is_number()) throw HttpError(400, "missing number 'alpha'");
    const auto name = j["concept"].get<std::string>();
    const double alpha = j["alpha"].get<double>();
    if (!std::isfinite(alpha)) throw HttpError(400, "alpha must be finite");
    const auto it = std::find_if(concepts_.begin(), concepts_.end(), [&](const auto& c) { return c.name == name; });
    if (it == concepts_.end()) return error(404, "unknown concept '" + name + "'");
    const auto w = get_vector(j, "w", static_cast<std::size_t>(fae->config().D));
    const auto w2 = concepts::traverse(w, *it, {alpha})[0];
    std::lock_guard lock(infer_mu_);
    auto wt = torch::tensor(w2, torch::kFloat64).to(torch::kFloat32).unsqueeze(0);
    const auto img = nn::tensor_to_image(fae::decode_from_w(vq, fae, wt));
    const auto [text, truncated] = caption_codes(*cap_, *vocab_, fae::codes_from_w(vq, fae, wt));
    return reply(json{{"w", w2}, {"image", image_payload(img)}, {"caption", text}, {"truncated", truncated},
                      {"score", it->score(w2)}});
}

Response Session::interpolate(const std::string& body) const {
    if (!vq_ || !fae_ || !cap_ || !vocab_) return error(503, "checkpoints are not loaded");
    const auto j = parse_body(body);
    auto vq = *vq_;
    auto fae = *fae_;
    const auto D = static_cast<std::size_t>(fae->config().D);
    const auto wa = get_vector(j, "w_a", D);
    const auto wb = get_vector(j, "w_b", D);
    if (!j.contains("steps") || !j["steps"].is_number_integer()) throw HttpError(400, "missing integer 'steps'");
    const int steps = j["steps"].get<int>();
    if (steps < 2 || steps > 33) throw HttpError(400, "steps must lie in [2, 33]");
    const auto ws = concepts::interpolate(wa, wb, steps);
    json frames = json::array();
    std::lock_guard lock(infer_mu_);
    for (const auto& w : ws) {
        auto wt = torch::tensor(w, torch::kFloat64).to(torch::kFloat32).unsqueeze(0);
        const auto img = nn::tensor_to_image(fae::decode_from_w(vq, fae, wt));
        const auto [text, truncated] = caption_codes(*cap_, *vocab_, fae::codes_from_w(vq, fae, wt));
        frames.push_back(json{{"image", image_payload(img)}, {"caption", text}, {"truncated", truncated}});
    }
    return reply(json{{"frames", frames}});
}

Response Session::concepts() const {
    json list = json::array();
    for (const auto& c : concepts_) {
        json m = json::object();
        for (const auto& [split, pm] : c.metrics) {
            m[split] = json{{"n_pos", pm.n_pos}, {"n_neg", pm.n_neg}, {"accuracy", pm.accuracy},
                            {"sensitivity", pm.sensitivity}, {"specificity", pm.specificity}};
        }
        json entry{{"name", c.name}, {"bias", c.bias}, {"spread", c.spread}, {"D", c.dim()}, {"metrics", m}};
        for (const auto& rule : concept_rules()) {
            if (rule.name == c.name) {
                entry["positive"] = rule.positive;
                entry["negative"] = rule.negative;
            }
        }
        list.push_back(entry);
    }
    return reply(json{{"concepts", list}});
}

Response Session::gallery() const {
    json list = json::array();
    for (const auto& r : gallery_) {
        std::ifstream in(gallery_base_ / r.image_path, std::ios::binary);
        if (!in) return error(500, "gallery image missing: " + r.image_path);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        list.push_back(json{{"id", r.id}, {"caption", r.caption}, {"image", base64_encode(bytes)}});
    }
    return reply(json{{"samples", list}});
}

Response Session::health() const {
    json ids = json::object();
    for (const auto& [k, v] : ids_) ids[k] = v;
    const bool ready = vq_ && fae_ && cap_ && vocab_;
    return reply(json{{"status", ready ? "ok" : "degraded"}, {"artifacts", ids}});
}

struct Server::Impl {
    std::shared_ptr<const Session> session;
    httplib::Server http;
};

Server::Server(std::shared_ptr<const Session> session) : impl_(std::make_unique<Impl>()) {
    impl_->session = std::move(session);
    auto route = [s = impl_->session](const httplib::Request& req, httplib::Response& res) {
        const auto r = s->handle(req.method, req.path, req.body);
        res.status = r.status;
        res.set_content(r.body, "application/json");
    };
    for (const char* p : {"/encode", "/decode", "/caption", "/concept/step", "/interpolate"}) impl_->http.Post(p, route);
    for (const char* p : {"/concepts", "/gallery", "/health"}) impl_->http.Get(p, route);
    impl_->http.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return;
        json j{{"code", res.status}, {"message", "no route for " + req.method + " " + req.path}};
        res.set_content(j.dump(), "application/json");
    });
}

Server::~Server() = default;

bool Server::listen(const std::string& host, int port) { return impl_->http.listen(host, port); }

int Server::bind(const std::string& host, int port) {
    return port == 0 ? impl_->http.bind_to_any_port(host) : (impl_->http.bind_to_port(host, port) ? port : -1);
}

bool Server::listen_after_bind() { return impl_->http.listen_after_bind(); }

void Server::stop() { impl_->http.stop(); }

}  // namespace strata::service
