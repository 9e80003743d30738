#include "strata/cli.hpp"

#include "strata/captioner.hpp"
#include "strata/concepts.hpp"
#include "strata/datagen.hpp"
#include "strata/evalkit.hpp"
#include "strata/featmap.hpp"
#include "strata/rng.hpp"
#include "strata/service.hpp"
#include "strata/textvocab.hpp"
#include "strata/vqmodel.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace strata::cli {

namespace fs = std::filesystem;

namespace {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string config_path;
    std::string profile = "desk";
    std::uint64_t seed = 7;
    std::vector<std::string> sets;
    std::map<std::string, std::string> file;  // config file entries
    bool seed_given = false;

    vq::Profile prof() const { return vq::parse_profile(profile); }

    std::string get(const std::string& key, const std::string& flag_value, const std::string& fallback = "") const {
        if (!flag_value.empty()) return flag_value;
        if (auto it = file.find(key); it != file.end()) return it->second;
        return fallback;
    }
    std::string need(const std::string& key, const std::string& flag_value) const {
        auto v = get(key, flag_value);
        if (v.empty()) throw ConfigError("missing required option --" + key);
        return v;
    }
    /// Module overrides: config file `prefix.key=value` entries, then --set.
    std::vector<std::pair<std::string, std::string>> overrides(const std::string& prefix) const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& [k, v] : file)
            if (k.rfind(prefix + ".", 0) == 0) out.emplace_back(k.substr(prefix.size() + 1), v);
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects module.key=value, got '" + s + "'");
            const auto k = s.substr(0, eq);
            if (k.rfind(prefix + ".", 0) == 0) out.emplace_back(k.substr(prefix.size() + 1), s.substr(eq + 1));
        }
        return out;
    }
};

std::string default_out_dir() {
    const char* env = std::getenv(kOutDirEnv);
    return env && *env ? env : ".";
}

template <class Cfg>
void apply_overrides(Cfg& cfg, const Common& c, const std::string& prefix) {
    for (const auto& [k, v] : c.overrides(prefix)) {
        try {
            cfg.set(k, v);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("invalid config: ") + e.what());
        }
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::vector<double> read_vector(const std::string& spec) {
    if (!spec.empty() && spec[0] == '@') {
        std::ifstream in(spec.substr(1));
        if (!in) throw ConfigError("cannot read vector file " + spec.substr(1));
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
        return kv::parse_doubles(text);
    }
    return kv::parse_doubles(spec);
}

Image load_image_checked(const std::string& path, int size) {
    auto img = read_png(path);
    if (img.height() != size || img.width() != size) {
        throw ConfigError("image " + path + " is " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                          ", the model expects " + std::to_string(size) + "x" + std::to_string(size));
    }
    return img;
}

std::string join_ints(const std::vector<std::int32_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

}  // namespace

const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> names{
        "dataset-build", "train-vq", "train-fae", "train-captioner", "vocab-train", "encode", "decode",
        "caption",       "concept-fit", "traverse", "interpolate",    "stats",       "fid",    "serve"};
    return names;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    auto usage = [&](std::ostream& os) {
        os << "usage: strata <subcommand> [options]\nsubcommands:";
        for (const auto& s : subcommands()) os << ' ' << s;
        os << "\nrun 'strata <subcommand> --help' for options\n";
    };
    if (args.empty()) {
        usage(err);
        return 2;
    }
    if (args[0] == "-h" || args[0] == "--help") {
        usage(out);
        return 0;
    }
    if (std::find(subcommands().begin(), subcommands().end(), args[0]) == subcommands().end()) {
        err << "unknown subcommand '" << args[0] << "'\n";
        usage(err);
        return 2;
    }

    CLI::App app{"strata: tissue-analog generative pipeline"};
    app.require_subcommand(1, 1);
    Common c;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", c.config_path, "key=value config file");
        sub->add_option("--profile", c.profile, "desk or paper");
        sub->add_option("--seed", c.seed, "random seed");
        sub->add_option("--set", c.sets, "module override, e.g. vq.lr=1e-4 (repeatable)");
    };

    std::string manifest, vq_path, fae_path, cap_path, vocab_path, out_path, log_path, image, image_b, w_spec,
        concept_arg, alphas = "-3,-2,-1,0,1,2,3", split = "train", host = "127.0.0.1", concept_dir;
    int n = 0, size = 64, steps = 9, max_size = 250, port = 8080;
    long long max_train = -1;

    auto* ds = app.add_subcommand("dataset-build", "render the synthetic dataset");
    ds->add_option("--n", n, "unique samples")->required();
    ds->add_option("--size", size, "image size");
    ds->add_option("--out", out_path, "output directory");

    auto* vt = app.add_subcommand("vocab-train", "learn the WordPiece vocabulary from training captions");
    vt->add_option("--manifest", manifest, "dataset manifest.txt");
    vt->add_option("--max-size", max_size, "vocabulary size limit");
    vt->add_option("--out", out_path, "output path");

    auto* tv = app.add_subcommand("train-vq", "train the vector-quantised autoencoder");
    tv->add_option("--manifest", manifest, "dataset manifest.txt");
    tv->add_option("--out", out_path, "output path");
    tv->add_option("--log", log_path, "training log path");
    tv->add_option("--max-train-images", max_train, "limit on training images");

    auto* tf = app.add_subcommand("train-fae", "train the feature autoencoder");
    tf->add_option("--manifest", manifest, "dataset manifest.txt");
    tf->add_option("--vq", vq_path, "VQ checkpoint");
    tf->add_option("--out", out_path, "output path");
    tf->add_option("--log", log_path, "training log path");

    auto* tc = app.add_subcommand("train-captioner", "train the captioner");
    tc->add_option("--manifest", manifest, "dataset manifest.txt");
    tc->add_option("--vq", vq_path, "VQ checkpoint");
    tc->add_option("--vocab", vocab_path, "vocabulary file");
    tc->add_option("--out", out_path, "output path");
    tc->add_option("--log", log_path, "training log path");

    auto* en = app.add_subcommand("encode", "image -> w and code grid");
    en->add_option("--image", image, "input PNG");
    en->add_option("--vq", vq_path, "VQ checkpoint");
    en->add_option("--fae", fae_path, "feature autoencoder checkpoint");
    en->add_option("--out", out_path, "write w to this file");

    auto* de = app.add_subcommand("decode", "w -> image");
    de->add_option("--w", w_spec, "comma-separated values or @file");
    de->add_option("--vq", vq_path, "VQ checkpoint");
    de->add_option("--fae", fae_path, "feature autoencoder checkpoint");
    de->add_option("--out", out_path, "output path");

    auto* ca = app.add_subcommand("caption", "caption an image");
    ca->add_option("--image", image, "input PNG");
    ca->add_option("--vq", vq_path, "VQ checkpoint");
    ca->add_option("--cap", cap_path, "captioner checkpoint");
    ca->add_option("--vocab", vocab_path, "vocabulary file");

    auto* cf = app.add_subcommand("concept-fit", "fit concept vectors on w");
    cf->add_option("--manifest", manifest, "dataset manifest.txt");
    cf->add_option("--vq", vq_path, "VQ checkpoint");
    cf->add_option("--fae", fae_path, "feature autoencoder checkpoint");
    cf->add_option("--concept", concept_arg, "one concept name (default: all)");
    cf->add_option("--out", out_path, "output directory");

    auto* tr = app.add_subcommand("traverse", "walk an image along a concept vector");
    tr->add_option("--image", image, "input PNG");
    tr->add_option("--vq", vq_path, "VQ checkpoint");
    tr->add_option("--fae", fae_path, "feature autoencoder checkpoint");
    tr->add_option("--concept", concept_arg, "concept file");
    tr->add_option("--alphas", alphas, "comma-separated alpha values");
    tr->add_option("--out", out_path, "output directory");

    auto* ip = app.add_subcommand("interpolate", "linear path between two images in w");
    ip->add_option("--image-a", image, "first PNG");
    ip->add_option("--image-b", image_b, "second PNG");
    ip->add_option("--steps", steps, "number of frames");
    ip->add_option("--vq", vq_path, "VQ checkpoint");
    ip->add_option("--fae", fae_path, "feature autoencoder checkpoint");
    ip->add_option("--out", out_path, "output directory");

    auto* st = app.add_subcommand("stats", "codebook utilisation census");
    st->add_option("--manifest", manifest, "dataset manifest.txt");
    st->add_option("--vq", vq_path, "VQ checkpoint");
    st->add_option("--split", split, "train, val or test");

    auto* fi = app.add_subcommand("fid", "Frechet distance of reconstructions");
    fi->add_option("--manifest", manifest, "dataset manifest.txt");
    fi->add_option("--vq", vq_path, "VQ checkpoint");
    fi->add_option("--fae", fae_path, "reconstruct through w when given");
    fi->add_option("--split", split, "train, val or test");

    auto* sv = app.add_subcommand("serve", "HTTP inference service");
    sv->add_option("--vq", vq_path, "VQ checkpoint");
    sv->add_option("--fae", fae_path, "feature autoencoder checkpoint");
    sv->add_option("--cap", cap_path, "captioner checkpoint");
    sv->add_option("--vocab", vocab_path, "vocabulary file");
    sv->add_option("--concepts", concept_dir, "directory of .concept files");
    sv->add_option("--manifest", manifest, "dataset manifest.txt");
    sv->add_option("--host", host, "bind address");
    sv->add_option("--port", port, "port (0 picks a free one)");

    for (auto* sub : app.get_subcommands({})) add_common(sub);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.get_subcommands().front()->help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "invalid arguments: " << e.what() << '\n';
        return 1;
    }

    auto* sub = app.get_subcommands().front();
    const std::string cmd = sub->get_name();
    try {
        if (!c.config_path.empty()) {
            try {
                c.file = kv::read_config_file(c.config_path);
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
        }
        c.seed_given = sub->count("--seed") > 0;
        if (!c.seed_given && c.file.count("seed")) c.seed = std::stoull(c.file.at("seed"));
        if (sub->count("--profile") == 0 && c.file.count("profile")) c.profile = c.file.at("profile");
        try {
            (void)c.prof();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("invalid config: ") + e.what());
        }
        const std::string outdir = c.get("out_dir", "", default_out_dir());

        if (cmd == "dataset-build") {
            const fs::path dir = c.get("out", out_path, (fs::path(outdir) / "data").string());
            if (n < 100) throw ConfigError("invalid config: n must be >= 100");
            const auto m = build_dataset(static_cast<std::size_t>(n), size, c.seed, dir);
            kv::Record r;
            r.set("command", cmd).set("manifest", (dir / "manifest.txt").string()).set("records", m.records.size())
                .set("unique", n).set("size", size).set("seed", static_cast<long long>(c.seed));
            out << r.to_line() << '\n';
        } else if (cmd == "vocab-train") {
            const auto m = load_manifest(c.need("manifest", manifest));
            std::vector<Caption> corpus;
            for (const auto& rec : m.records)
                if (rec.split == Split::train) corpus.push_back(rec.caption);
            const auto vocab = train_wordpiece(corpus, static_cast<std::size_t>(max_size));
            const fs::path path = c.get("out", out_path, m.resolve(m.vocabulary_path).string());
            ensure_parent(path);
            vocab.save(path.string());
            kv::Record r;
            r.set("command", cmd).set("vocab", path.string()).set("size", vocab.size()).set("hash", vocab.content_hash());
            out << r.to_line() << '\n';
        } else if (cmd == "train-vq") {
            const auto m = load_manifest(c.need("manifest", manifest));
            auto cfg = c.prof() == vq::Profile::paper ? vq::VQConfig::paper() : vq::VQConfig::desk();
            cfg.seed = c.seed;
            apply_overrides(cfg, c, "vq");
            vq::TrainOptions o;
            o.checkpoint_path = c.get("out", out_path, (fs::path(outdir) / "vq.ckpt").string());
            o.log_path = c.get("log", log_path, o.checkpoint_path.string() + ".log");
            o.max_train_images = max_train;
            o.progress = [&](const std::string& line) { err << line << '\n'; };
            ensure_parent(o.checkpoint_path);
            const auto res = vq::train_vq(m, cfg, o);
            kv::Record r;
            r.set("command", cmd).set("checkpoint", o.checkpoint_path.string()).set("log", o.log_path.string())
                .set("best_epoch", res.best_epoch).set("val_embedding", res.best.val_loss()).set("id", res.best.id());
            out << r.to_line() << '\n';
        } else if (cmd == "train-fae") {
            const auto m = load_manifest(c.need("manifest", manifest));
            const auto vq_ckpt = Checkpoint::load(c.need("vq", vq_path));
            auto cfg = fae::FAEConfig::for_vq(vq::VQConfig::read(vq_ckpt), c.prof());
            cfg.seed = c.seed;
            apply_overrides(cfg, c, "fae");
            fae::TrainOptions o;
            o.checkpoint_path = c.get("out", out_path, (fs::path(outdir) / "fae.ckpt").string());
            o.log_path = c.get("log", log_path, o.checkpoint_path.string() + ".log");
            o.progress = [&](const std::string& line) { err << line << '\n'; };
            ensure_parent(o.checkpoint_path);
            const auto res = fae::train_fae(m, vq_ckpt, cfg, o);
            kv::Record r;
            r.set("command", cmd).set("checkpoint", o.checkpoint_path.string()).set("best_epoch", res.best_epoch)
                .set("val_mse", res.best.val_loss()).set("feature_variance", res.feature_variance)
                .set("id", res.best.id());
            out << r.to_line() << '\n';
        } else if (cmd == "train-captioner") {
            const auto m = load_manifest(c.need("manifest", manifest));
            const auto vq_ckpt = Checkpoint::load(c.need("vq", vq_path));
            const auto vocab = Vocabulary::load(c.get("vocab", vocab_path, m.resolve(m.vocabulary_path).string()));
            auto cfg = cap::CaptionerConfig::for_models(vq::VQConfig::read(vq_ckpt), vocab, c.prof());
            cfg.seed = c.seed;
            apply_overrides(cfg, c, "cap");
            cap::TrainOptions o;
            o.checkpoint_path = c.get("out", out_path, (fs::path(outdir) / "cap.ckpt").string());
            o.log_path = c.get("log", log_path, o.checkpoint_path.string() + ".log");
            o.progress = [&](const std::string& line) { err << line << '\n'; };
            ensure_parent(o.checkpoint_path);
            const auto res = cap::train_captioner(m, vq_ckpt, vocab, cfg, o);
            kv::Record r;
            r.set("command", cmd).set("checkpoint", o.checkpoint_path.string()).set("best_epoch", res.best_epoch)
                .set("val_loss", res.best.val_loss()).set("id", res.best.id());
            out << r.to_line() << '\n';
        } else if (cmd == "encode") {
            auto vq = vq::load_vq(Checkpoint::load(c.need("vq", vq_path)));
            auto fae = fae::load_fae(Checkpoint::load(c.need("fae", fae_path)));
            const auto img = load_image_checked(c.need("image", image), vq->config().image_size);
            const auto w = fae::image_to_w(vq, fae, img);
            const auto q = vq::quantize_image(vq, img);
            if (!out_path.empty()) {
                ensure_parent(out_path);
                std::ofstream f(out_path);
                f << kv::join_doubles(w) << '\n';
            }
            kv::Record r;
            r.set("command", cmd).set("D", w.size()).set("w", kv::join_doubles(w))
                .set("grid", std::to_string(q.height) + "x" + std::to_string(q.width)).set("q", join_ints(q.indices));
            out << r.to_line() << '\n';
        } else if (cmd == "decode") {
            auto vq = vq::load_vq(Checkpoint::load(c.need("vq", vq_path)));
            auto fae = fae::load_fae(Checkpoint::load(c.need("fae", fae_path)));
            const auto w = read_vector(c.need("w", w_spec));
            if (static_cast<int>(w.size()) != fae->config().D) {
                throw ConfigError("invalid config: w has dimension " + std::to_string(w.size()) + ", expected " +
                                  std::to_string(fae->config().D));
            }
            const fs::path path = c.get("out", out_path, (fs::path(outdir) / "decoded.png").string());
            ensure_parent(path);
            write_png(path.string(), fae::w_to_image(vq, fae, w));
            kv::Record r;
            r.set("command", cmd).set("image", path.string());
            out << r.to_line() << '\n';
        } else if (cmd == "caption") {
            auto vq = vq::load_vq(Checkpoint::load(c.need("vq", vq_path)));
            const auto cap_ckpt = Checkpoint::load(c.need("cap", cap_path));
            auto model = cap::load_captioner(cap_ckpt);
            const auto vocab = Vocabulary::load(c.need("vocab", vocab_path));
            if (cap_ckpt.has_meta("vocab_hash") && cap_ckpt.meta("vocab_hash") != vocab.content_hash()) {
                throw ConfigError("vocabulary does not match the one the captioner was trained with");
            }
            const auto img = load_image_checked(c.need("image", image), vq->config().image_size);
            const auto g = vq::quantize_image(vq, img);
            const auto gen = cap::generate(model, cap::flatten_codes(vq::from_code_grids(std::span<const vq::CodeGrid>(&g, 1))), vocab);
            kv::Record r;
            r.set("command", cmd).set("caption", gen[0].text).set("truncated", gen[0].truncated);
            out << r.to_line() << '\n';
        } else if (cmd == "concept-fit") {
            const auto m = load_manifest(c.need("manifest", manifest));
            auto vq = vq::load_vq(Checkpoint::load(c.need("vq", vq_path)));
            auto fae = fae::load_fae(Checkpoint::load(c.need("fae", fae_path)));
            const fs::path dir = c.get("out", out_path, (fs::path(outdir) / "concepts").string());
            fs::create_directories(dir);
            concepts::FitOptions fo;
            for (const auto& [k, v] : c.overrides("concept")) {
                if (k == "C") fo.C = std::stod(v);
                else throw ConfigError("invalid config: concept." + k + " is not a known field");
            }
            const auto table = concepts::compute_latents(m, vq, fae);
            std::vector<concepts::ConceptVector> fitted;
            if (concept_arg.empty()) fitted = concepts::fit_all(table, fo);
            else fitted.push_back(concepts::fit_named(table, concept_arg, fo));
            for (const auto& cv : fitted) {
                const auto path = dir / (cv.name + ".concept");
                concepts::save_concept(cv, path);
                kv::Record r;
                r.set("command", cmd).set("concept", cv.name).set("file", path.string());
                for (const auto& [s, pm] : cv.metrics) {
                    r.set(s + "_accuracy", pm.accuracy).set(s + "_sensitivity", pm.sensitivity)
                        .set(s + "_specificity", pm.specificity);
                }
                out << r.to_line() << '\n';
            }
        } else if (cmd == "traverse") {
            auto vq = vq::load_vq(Checkpoint::load(c.need("vq", vq_path)));
            auto fae = fae::load_fae(Checkpoint::load(c.need("fae", fae_path)));
            const auto cv = concepts::load_concept(c.need("concept", concept_arg));
            const auto img = load_image_checked(c.need("image", image), vq->config().image_size);
            const auto al = kv::parse_doubles(alphas);
            const auto ws = concepts::traverse(fae::image_to_w(vq, fae, img), cv, al);
            const fs::path dir = c.get("out", out_path, (fs::path(outdir) / "traverse").string());
            fs::create_directories(dir);
            std::vector<double> scores, thick;
            for (std::size_t i = 0; i < ws.size(); ++i) {
                const auto frame = fae::w_to_image(vq, fae, ws[i]);
                write_png((dir / ("step_" + std::to_string(i) + ".png")).string(), frame);
                scores.push_back(cv.score(ws[i]));
                thick.push_back(measure_bands(frame).top_band_thickness);
            }
            kv::Record r;
            r.set("command", cmd).set("concept", cv.name).set("alphas", kv::join_doubles(al))
                .set("scores", kv::join_doubles(scores)).set("top_band_thickness", kv::join_doubles(thick))
                .set("out", dir.string());
            out << r.to_line() << '\n';
        } else if (cmd == "interpolate") {
            auto vq = vq::load_vq(Checkpoint::load(c.need("vq", vq_path)));
            auto fae = fae::load_fae(Checkpoint::load(c.need("fae", fae_path)));
            const int sz = vq->config().image_size;
            const auto a = load_image_checked(c.need("image-a", image), sz);
            const auto b = load_image_checked(c.need("image-b", image_b), sz);
            if (steps < 2) throw ConfigError("invalid config: steps must be >= 2");
            const auto ws = concepts::interpolate(fae::image_to_w(vq, fae, a), fae::image_to_w(vq, fae, b), steps);
            const fs::path dir = c.get("out", out_path, (fs::path(outdir) / "interpolate").string());
            fs::create_directories(dir);
            for (std::size_t i = 0; i < ws.size(); ++i)
                write_png((dir / ("frame_" + std::to_string(i) + ".png")).string(), fae::w_to_image(vq, fae, ws[i]));
            kv::Record r;
            r.set("command", cmd).set("frames", ws.size()).set("out", dir.string());
            out << r.to_line() << '\n';
        } else if (cmd == "stats") {
            const auto m = load_manifest(c.need("manifest", manifest));
            auto vq = vq::load_vq(Checkpoint::load(c.need("vq", vq_path)));
            Split sp;
            try {
                sp = parse_split(split);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("invalid config: split: ") + e.what());
            }
            const auto s = eval::codebook_stats(m, vq, sp);
            out << "utilized=" << s.utilized.size() << " of " << s.k << '\n';
            std::string top;
            for (const auto& [i, cnt] : s.top) top += (top.empty() ? "" : ",") + std::to_string(i) + ":" + std::to_string(cnt);
            kv::Record r;
            r.set("command", cmd).set("split", split).set("utilized", s.utilized.size()).set("k", s.k)
                .set("cells", static_cast<long long>(s.total_cells)).set("top", top);
            out << r.to_line() << '\n';
        } else if (cmd == "fid") {
            const auto m = load_manifest(c.need("manifest", manifest));
            const auto vq_ckpt = Checkpoint::load(c.need("vq", vq_path));
            auto vq = vq::load_vq(vq_ckpt);
            const auto vcfg = vq::VQConfig::read(vq_ckpt);
            auto featnet = vq::make_featnet(vcfg);
            Split sp;
            try {
                sp = parse_split(split);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(std::string("invalid config: split: ") + e.what());
            }
            const auto real = load_images(m, load_split(m, sp));
            std::vector<Image> recon, noise;
            const auto fae_spec = c.get("fae", fae_path);
            std::optional<fae::FeatureAutoencoder> fae;
            if (!fae_spec.empty()) fae = fae::load_fae(Checkpoint::load(fae_spec));
            Rng rng(c.seed);
            for (const auto& x : real) {
                if (fae) recon.push_back(nn::tensor_to_image(fae::roundtrip(vq, *fae, nn::image_to_tensor(x))));
                else recon.push_back(vq::reconstruct(vq, x));
                Image z(x.height(), x.width());
                for (auto& v : z.values()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
                noise.push_back(std::move(z));
            }
            const auto fr = eval::extract_features(real, featnet);
            const auto a = eval::frechet_distance(fr, eval::extract_features(recon, featnet), featnet->id());
            const auto b = eval::frechet_distance(fr, eval::extract_features(noise, featnet), featnet->id());
            kv::Record r;
            r.set("command", cmd).set("split", split).set("fid", a.value).set("noise_fid", b.value)
                .set("ratio", a.value / b.value).set("feature_net", a.feature_net_id).set("n", a.n_a)
                .set("path", fae ? "w" : "z");
            out << r.to_line() << '\n';
        } else if (cmd == "serve") {
            service::ServiceConfig sc;
            sc.vq_path = c.need("vq", vq_path);
            sc.fae_path = c.get("fae", fae_path);
            sc.captioner_path = c.get("cap", cap_path);
            sc.vocab_path = c.get("vocab", vocab_path);
            sc.concept_dir = c.get("concepts", concept_dir);
            sc.manifest_path = c.get("manifest", manifest);
            sc.log = [&](const std::string& line) { err << line << '\n'; };
            auto session = service::Session::load(sc);
            for (const auto& [k, v] : session->artifact_ids()) err << "artifact=" << k << "\tid=" << v << '\n';
            service::Server server(session);
            const int bound = server.bind(host, port);
            if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
            kv::Record r;
            r.set("command", cmd).set("host", host).set("port", bound);
            out << r.to_line() << std::endl;
            server.listen_after_bind();
        }
    } catch (const ConfigError& e) {
        err << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        err << "invalid config: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace strata::cli
