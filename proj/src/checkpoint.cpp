#include "strata/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace strata {

namespace {

constexpr char kMagic[4] = {'V', 'Q', 'S', 'C'};

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void floats(float* dst, std::size_t n) {
        need(n * sizeof(float));
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
        pos_ += n * sizeof(float);
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
    }
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::int64_t NamedTensor::numel() const {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
    if (key.find_first_of("=\n") != std::string::npos || value.find('\n') != std::string::npos) {
        throw std::invalid_argument("checkpoint metadata may not contain newlines or '=' in keys: " + key);
    }
    for (auto& [k, v] : metadata) {
        if (k == key) {
            v = value;
            return;
        }
    }
    metadata.emplace_back(key, value);
}

bool Checkpoint::has_meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
        if (k == key) return true;
    return false;
}

const std::string& Checkpoint::meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
        if (k == key) return v;
    throw std::out_of_range("checkpoint has no metadata field '" + key + "'");
}

std::string Checkpoint::meta_or(const std::string& key, std::string fallback) const {
    return has_meta(key) ? meta(key) : fallback;
}

int Checkpoint::epoch() const { return std::stoi(meta_or("epoch", "0")); }

double Checkpoint::val_loss() const { return std::stod(meta_or("val_loss", "nan")); }

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, format_version);
    std::string meta_text;
    for (const auto& [k, v] : metadata) meta_text += k + "=" + v + "\n";
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta_text.size()));
    out.insert(out.end(), meta_text.begin(), meta_text.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (static_cast<std::int64_t>(t.values.size()) != t.numel()) {
            throw std::invalid_argument("tensor '" + name + "' value count does not match its shape");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) put<std::int64_t>(out, d);
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.values.data());
        out.insert(out.end(), p, p + t.values.size() * sizeof(float));
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw std::runtime_error("not a checkpoint (bad magic)");
    }
    Reader r(bytes);
    r.str(4);
    Checkpoint c;
    c.format_version = r.get<std::uint32_t>();
    if (c.format_version != kFormatVersion) {
        throw std::runtime_error("unsupported checkpoint format_version " + std::to_string(c.format_version));
    }
    const auto meta_len = r.get<std::uint32_t>();
    std::istringstream meta(r.str(meta_len));
    std::string line;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("malformed checkpoint metadata line: " + line);
        c.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name = r.str(r.get<std::uint32_t>());
        NamedTensor t;
        const auto rank = r.get<std::uint32_t>();
        for (std::uint32_t d = 0; d < rank; ++d) {
            const auto dim = r.get<std::int64_t>();
            if (dim < 0) throw std::runtime_error("negative dimension in tensor '" + name + "'");
            t.shape.push_back(dim);
        }
        t.values.resize(static_cast<std::size_t>(t.numel()));
        r.floats(t.values.data(), t.values.size());
        c.tensors.emplace(name, std::move(t));
    }
    if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint tensors");
    return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
    const auto bytes = serialize();
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::string Checkpoint::id() const {
    const auto bytes = serialize();
    return fnv1a_hex(bytes.data(), bytes.size());
}

std::string fnv1a_hex(const std::uint8_t* data, std::size_t n) {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace strata
