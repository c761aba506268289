#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msann/config.hpp"
#include "msann/heads.hpp"
#include "msann/metrics.hpp"
#include "msann/tag_branch.hpp"

namespace msann {

struct Sample {
    std::string id;
    Tensor image;                      // [C,H,W], values in [0,1]
    TagVector tags;                    // length = vocabulary size
    std::vector<std::int64_t> labels;  // sorted class indices, at least one
    std::int64_t quantity = 0;         // == labels.size()
};

// Synthetic generator parameters. The quantity distribution is categorical
// over 1..max; the default is heavy at one-to-three labels with a thin tail.
struct SynthConfig {
    std::int64_t num_classes = 8;
    std::int64_t image_size = 32;
    std::int64_t vocab_size = 64;
    std::int64_t n_train = 2000;
    std::int64_t n_test = 500;
    std::vector<double> quantity_dist = {0.36, 0.24, 0.16, 0.10, 0.08, 0.06};
    double q_emit = 0.9;    // per-label tag emission probability
    double q_noise = 0.02;  // spurious rate for every other tag
    std::uint64_t seed = 42;

    std::int64_t max_quantity() const { return static_cast<std::int64_t>(quantity_dist.size()); }

    void validate() const;

    void to_kv(KvConfig& kv) const {
        kv.set("num_classes", num_classes);
        kv.set("image_size", image_size);
        kv.set("vocab_size", vocab_size);
        kv.set("n_train", n_train);
        kv.set("n_test", n_test);
        std::string dist;
        for (std::size_t i = 0; i < quantity_dist.size(); ++i) {
            if (i) dist += ",";
            dist += fixed(quantity_dist[i], 6);
        }
        kv.set("quantity_dist", dist);
        kv.set("q_emit", q_emit);
        kv.set("q_noise", q_noise);
        kv.set("seed", static_cast<std::int64_t>(seed));
    }

    static SynthConfig from_kv(const KvConfig& kv) {
        SynthConfig cfg;
        cfg.num_classes = kv.get_int("num_classes", cfg.num_classes);
        cfg.image_size = kv.get_int("image_size", cfg.image_size);
        cfg.vocab_size = kv.get_int("vocab_size", cfg.vocab_size);
        cfg.n_train = kv.get_int("n_train", cfg.n_train);
        cfg.n_test = kv.get_int("n_test", cfg.n_test);
        if (kv.has("quantity_dist")) cfg.quantity_dist = kv.get_double_list("quantity_dist");
        cfg.q_emit = kv.get_double("q_emit", cfg.q_emit);
        cfg.q_noise = kv.get_double("q_noise", cfg.q_noise);
        cfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<std::int64_t>(cfg.seed)));
        cfg.validate();
        return cfg;
    }
};

struct DatasetManifest {
    std::vector<std::string> class_names;
    std::string vocab_file = "vocab.txt";
    std::int64_t image_channels = 3;
    std::int64_t image_size = 32;
    std::int64_t max_quantity = 6;
    std::vector<std::string> train_ids, test_ids;
    std::optional<SynthConfig> synth;  // present when generated
};

struct Dataset {
    DatasetManifest manifest;
    TagVocabulary vocab;
    std::vector<Sample> samples;
    std::map<std::string, std::size_t> by_id;

    std::int64_t num_classes() const {
        return static_cast<std::int64_t>(manifest.class_names.size());
    }

    const Sample& sample(const std::string& id) const {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw IoError("dataset has no sample with id '" + id + "'");
        return samples[it->second];
    }

    std::vector<const Sample*> split(const std::vector<std::string>& ids) const {
        std::vector<const Sample*> out;
        out.reserve(ids.size());
        for (const auto& id : ids) out.push_back(&sample(id));
        return out;
    }
    std::vector<const Sample*> train_samples() const { return split(manifest.train_ids); }
    std::vector<const Sample*> test_samples() const { return split(manifest.test_ids); }
};

// ---------------------------------------------------------------------------
// Motif rendering
// ---------------------------------------------------------------------------

namespace detail {

struct Motif {
    const char* name;
    double r, g, b;
};

// One deterministic visual family per class: filled shapes, stripes, lines,
// a ring, and fine textures. Two pairs deliberately share a colour (square
// and vertical stripe both red, circle and ring both green) so that shape,
// not colour alone, separates them; labels of that kind are where the tag
// channel carries information the pixels give up only grudgingly.
inline const std::vector<Motif>& motif_palette() {
    static const std::vector<Motif> palette = {
        {"red_square", 0.95, 0.15, 0.10},   {"green_circle", 0.10, 0.85, 0.15},
        {"blue_hstripe", 0.15, 0.25, 0.95}, {"yellow_dot", 0.95, 0.90, 0.10},
        {"magenta_diag", 0.90, 0.10, 0.85}, {"green_ring", 0.10, 0.85, 0.15},
        {"red_vstripe", 0.95, 0.15, 0.10},  {"white_checker", 0.92, 0.92, 0.92},
        {"teal_triangle", 0.10, 0.55, 0.50}, {"purple_cross", 0.55, 0.15, 0.85},
        {"olive_lshape", 0.55, 0.55, 0.10},  {"pink_dots", 0.95, 0.55, 0.70},
    };
    return palette;
}

inline void put_pixel(std::vector<double>& img, std::int64_t size, std::int64_t x, std::int64_t y,
                      double r, double g, double b) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    img[static_cast<std::size_t>(0 * size * size + y * size + x)] = r;
    img[static_cast<std::size_t>(1 * size * size + y * size + x)] = g;
    img[static_cast<std::size_t>(2 * size * size + y * size + x)] = b;
}

inline void render_motif(std::vector<double>& img, std::int64_t size, std::int64_t cls, Rng& rng) {
    const Motif& m = motif_palette()[static_cast<std::size_t>(cls)];
    // Per-instance colour jitter keeps colour informative but not trivial.
    const double jitter = rng.uniform(0.45, 1.0);
    const double r = m.r * jitter, g = m.g * jitter, b = m.b * jitter;
    const auto rnd = [&](std::int64_t lo, std::int64_t hi) { return rng.uniform_int(lo, hi); };

    switch (cls % 12) {
        case 0: {  // large filled square
            const std::int64_t s = rnd(8, 13), x0 = rnd(0, size - s), y0 = rnd(0, size - s);
            for (std::int64_t y = y0; y < y0 + s; ++y)
                for (std::int64_t x = x0; x < x0 + s; ++x) put_pixel(img, size, x, y, r, g, b);
            break;
        }
        case 1: {  // filled circle
            const std::int64_t rad = rnd(4, 7), cx = rnd(rad, size - 1 - rad), cy = rnd(rad, size - 1 - rad);
            for (std::int64_t y = cy - rad; y <= cy + rad; ++y)
                for (std::int64_t x = cx - rad; x <= cx + rad; ++x)
                    if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad)
                        put_pixel(img, size, x, y, r, g, b);
            break;
        }
        case 2: {  // full-width horizontal stripe
            const std::int64_t h = rnd(3, 5), y0 = rnd(0, size - h);
            for (std::int64_t y = y0; y < y0 + h; ++y)
                for (std::int64_t x = 0; x < size; ++x) put_pixel(img, size, x, y, r, g, b);
            break;
        }
        case 3: {  // small dot: fine detail, easily lost at coarse scales
            const std::int64_t s = rnd(2, 4), x0 = rnd(0, size - s), y0 = rnd(0, size - s);
            for (std::int64_t y = y0; y < y0 + s; ++y)
                for (std::int64_t x = x0; x < x0 + s; ++x) put_pixel(img, size, x, y, r, g, b);
            break;
        }
        case 4: {  // diagonal line
            const std::int64_t len = rnd(14, 22), x0 = rnd(0, size - 1 - len / 2), y0 = rnd(0, size - 1 - len / 2);
            for (std::int64_t t = 0; t < len; ++t) {
                put_pixel(img, size, x0 + t / 2 + t % 2, y0 + t / 2, r, g, b);
                put_pixel(img, size, x0 + t / 2, y0 + t / 2, r, g, b);
            }
            break;
        }
        case 5: {  // ring outline
            const std::int64_t rad = rnd(5, 8), cx = rnd(rad, size - 1 - rad), cy = rnd(rad, size - 1 - rad);
            for (std::int64_t y = cy - rad; y <= cy + rad; ++y)
                for (std::int64_t x = cx - rad; x <= cx + rad; ++x) {
                    const std::int64_t d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                    if (d2 <= rad * rad && d2 >= (rad - 2) * (rad - 2))
                        put_pixel(img, size, x, y, r, g, b);
                }
            break;
        }
        case 6: {  // full-height vertical stripe
            const std::int64_t w = rnd(3, 5), x0 = rnd(0, size - w);
            for (std::int64_t y = 0; y < size; ++y)
                for (std::int64_t x = x0; x < x0 + w; ++x) put_pixel(img, size, x, y, r, g, b);
            break;
        }
        case 7: {  // checkerboard texture patch
            const std::int64_t s = rnd(8, 12), x0 = rnd(0, size - s), y0 = rnd(0, size - s);
            for (std::int64_t y = y0; y < y0 + s; ++y)
                for (std::int64_t x = x0; x < x0 + s; ++x)
                    if (((x - x0) / 2 + (y - y0) / 2) % 2 == 0) put_pixel(img, size, x, y, r, g, b);
            break;
        }
        case 8: {  // filled right triangle
            const std::int64_t s = rnd(8, 13), x0 = rnd(0, size - s), y0 = rnd(0, size - s);
            for (std::int64_t y = 0; y < s; ++y)
                for (std::int64_t x = 0; x <= y; ++x) put_pixel(img, size, x0 + x, y0 + y, r, g, b);
            break;
        }
        case 9: {  // plus sign
            const std::int64_t s = rnd(8, 12), t = rnd(2, 3);
            const std::int64_t x0 = rnd(0, size - s), y0 = rnd(0, size - s);
            for (std::int64_t y = y0; y < y0 + s; ++y)
                for (std::int64_t x = x0 + s / 2 - t / 2; x < x0 + s / 2 + (t + 1) / 2; ++x)
                    put_pixel(img, size, x, y, r, g, b);
            for (std::int64_t x = x0; x < x0 + s; ++x)
                for (std::int64_t y = y0 + s / 2 - t / 2; y < y0 + s / 2 + (t + 1) / 2; ++y)
                    put_pixel(img, size, x, y, r, g, b);
            break;
        }
        case 10: {  // L shape
            const std::int64_t s = rnd(8, 12), t = rnd(2, 4);
            const std::int64_t x0 = rnd(0, size - s), y0 = rnd(0, size - s);
            for (std::int64_t y = y0; y < y0 + s; ++y)
                for (std::int64_t x = x0; x < x0 + t; ++x) put_pixel(img, size, x, y, r, g, b);
            for (std::int64_t x = x0; x < x0 + s; ++x)
                for (std::int64_t y = y0 + s - t; y < y0 + s; ++y) put_pixel(img, size, x, y, r, g, b);
            break;
        }
        default: {  // dotted grid patch
            const std::int64_t s = rnd(8, 12), x0 = rnd(0, size - s), y0 = rnd(0, size - s);
            for (std::int64_t y = y0; y < y0 + s; y += 3)
                for (std::int64_t x = x0; x < x0 + s; x += 3) put_pixel(img, size, x, y, r, g, b);
            break;
        }
    }
}

}  // namespace detail

inline void SynthConfig::validate() const {
    if (num_classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
    if (num_classes > static_cast<std::int64_t>(detail::motif_palette().size()))
        throw ConfigError("num_classes " + std::to_string(num_classes) +
                          " exceeds the motif palette of " +
                          std::to_string(detail::motif_palette().size()));
    if (image_size < 16) throw ConfigError("image_size must be at least 16");
    if (vocab_size < num_classes)
        throw ConfigError("vocab_size must be at least num_classes so every class has a tag");
    if (n_train < 1 || n_test < 1) throw ConfigError("empty train or test split");
    if (quantity_dist.empty()) throw ConfigError("quantity distribution is empty");
    if (max_quantity() > num_classes)
        throw ConfigError("max quantity exceeds the number of classes");
    double total = 0.0;
    for (double p : quantity_dist) {
        if (p < 0.0 || p > 1.0) throw ConfigError("quantity probabilities must lie in [0,1]");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("quantity distribution sums to " + std::to_string(total) + ", not 1");
    if (q_emit < 0.0 || q_emit > 1.0 || q_noise < 0.0 || q_noise > 1.0)
        throw ConfigError("tag probabilities must lie in [0,1]");
}

// Draws the label set and tag vector for one sample; rendering is separate
// so statistical tests can avoid the pixel work.
inline void draw_labels_and_tags(const SynthConfig& cfg, Rng& rng,
                                 std::vector<std::int64_t>& labels, TagVector& tags) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::int64_t m = cfg.max_quantity();
    for (std::size_t q = 0; q < cfg.quantity_dist.size(); ++q) {
        acc += cfg.quantity_dist[q];
        if (u < acc) {
            m = static_cast<std::int64_t>(q) + 1;
            break;
        }
    }
    std::vector<std::int64_t> pool;
    for (std::int64_t j = 0; j < cfg.num_classes; ++j) pool.push_back(j);
    rng.shuffle(pool);
    labels.assign(pool.begin(), pool.begin() + m);
    std::sort(labels.begin(), labels.end());

    tags.assign(static_cast<std::size_t>(cfg.vocab_size), 0);
    for (auto j : labels)
        if (rng.bernoulli(cfg.q_emit)) tags[static_cast<std::size_t>(j)] = 1;
    for (std::int64_t t = 0; t < cfg.vocab_size; ++t) {
        const bool is_true_tag =
            t < cfg.num_classes && std::binary_search(labels.begin(), labels.end(), t);
        if (!is_true_tag && rng.bernoulli(cfg.q_noise)) tags[static_cast<std::size_t>(t)] = 1;
    }
}

inline Tensor render_image(const SynthConfig& cfg, const std::vector<std::int64_t>& labels,
                           Rng& rng) {
    const std::int64_t size = cfg.image_size;
    std::vector<double> img(static_cast<std::size_t>(3 * size * size));
    for (auto& v : img) v = rng.uniform(0.0, 0.40);  // noise background
    // Achromatic clutter rectangles: distractors that share no colour with
    // the motif palette but break up the background statistics.
    const std::int64_t n_clutter = rng.uniform_int(2, 4);
    for (std::int64_t b = 0; b < n_clutter; ++b) {
        const double g = rng.uniform(0.25, 0.70);
        const std::int64_t s = rng.uniform_int(3, 8);
        const std::int64_t x0 = rng.uniform_int(0, size - s), y0 = rng.uniform_int(0, size - s);
        for (std::int64_t y = y0; y < y0 + s; ++y)
            for (std::int64_t x = x0; x < x0 + s; ++x) detail::put_pixel(img, size, x, y, g, g, g);
    }
    for (auto cls : labels) detail::render_motif(img, size, cls, rng);
    // Quantize to float32 precision, the storage format: a freshly generated
    // dataset and a saved-and-reloaded one are bit-identical.
    for (auto& v : img) v = static_cast<double>(static_cast<float>(v));
    return Tensor::from_data({3, size, size}, std::move(img));
}

inline Sample generate_sample(const SynthConfig& cfg, const std::string& id,
                              std::uint64_t global_index) {
    Rng rng(Rng::derive(cfg.seed, "sample", global_index));
    Sample s;
    s.id = id;
    draw_labels_and_tags(cfg, rng, s.labels, s.tags);
    s.quantity = static_cast<std::int64_t>(s.labels.size());
    s.image = render_image(cfg, s.labels, rng);
    return s;
}

inline Dataset generate(const SynthConfig& cfg) {
    cfg.validate();
    Dataset ds;
    std::vector<std::string> class_names, tag_names;
    for (std::int64_t j = 0; j < cfg.num_classes; ++j)
        class_names.push_back(detail::motif_palette()[static_cast<std::size_t>(j)].name);
    for (std::int64_t j = 0; j < cfg.num_classes; ++j) tag_names.push_back("tag_" + class_names[j]);
    for (std::int64_t t = cfg.num_classes; t < cfg.vocab_size; ++t)
        tag_names.push_back("noise_" + std::to_string(t - cfg.num_classes));

    ds.vocab = TagVocabulary(tag_names);
    ds.manifest.class_names = class_names;
    ds.manifest.image_channels = 3;
    ds.manifest.image_size = cfg.image_size;
    ds.manifest.max_quantity = cfg.max_quantity();
    ds.manifest.synth = cfg;

    char buf[32];
    for (std::int64_t i = 0; i < cfg.n_train; ++i) {
        std::snprintf(buf, sizeof(buf), "tr%05lld", static_cast<long long>(i));
        ds.manifest.train_ids.emplace_back(buf);
        ds.samples.push_back(generate_sample(cfg, buf, static_cast<std::uint64_t>(i)));
    }
    for (std::int64_t i = 0; i < cfg.n_test; ++i) {
        std::snprintf(buf, sizeof(buf), "te%05lld", static_cast<long long>(i));
        ds.manifest.test_ids.emplace_back(buf);
        ds.samples.push_back(
            generate_sample(cfg, buf, static_cast<std::uint64_t>(cfg.n_train + i)));
    }
    for (std::size_t i = 0; i < ds.samples.size(); ++i) ds.by_id[ds.samples[i].id] = i;
    return ds;
}

// ---------------------------------------------------------------------------
// On-disk format: manifest.txt, vocab.txt, records.tsv, images/<id>.bin
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr char kImageMagic[6] = {'M', 'S', 'I', 'M', 'G', '1'};

inline std::uint64_t fnv1a(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::vector<float> image_payload(const Tensor& image) {
    std::vector<float> payload(image.data().size());
    for (std::size_t i = 0; i < payload.size(); ++i)
        payload[i] = static_cast<float>(image.data()[i]);
    return payload;
}

}  // namespace detail

// images/<id>.bin: 16-byte header: magic "MSIMG1", dtype code (1 = float32),
// one reserved byte, three u16 extents (C,H,W), two reserved bytes; then the
// row-major little-endian float32 payload.
inline void save_image_bin(const std::string& path, const Tensor& image) {
    const Shape& s = image.shape();
    if (s.size() != 3) throw DimensionError("image must be [C,H,W], got " + shape_str(s));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image file: " + path);
    unsigned char header[16] = {};
    std::memcpy(header, detail::kImageMagic, 6);
    header[6] = 1;
    for (int d = 0; d < 3; ++d) {
        const auto e = static_cast<std::uint16_t>(s[static_cast<std::size_t>(d)]);
        header[8 + 2 * d] = static_cast<unsigned char>(e & 0xff);
        header[9 + 2 * d] = static_cast<unsigned char>(e >> 8);
    }
    out.write(reinterpret_cast<const char*>(header), 16);
    const auto payload = detail::image_payload(image);
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) throw IoError("failed writing image file: " + path);
}

inline Tensor load_image_bin(const std::string& path, const std::string& sample_id) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("missing image file for sample '" + sample_id + "': " + path);
    unsigned char header[16];
    in.read(reinterpret_cast<char*>(header), 16);
    if (in.gcount() != 16 || std::memcmp(header, detail::kImageMagic, 6) != 0)
        throw IoError("corrupt image header for sample '" + sample_id + "': " + path);
    if (header[6] != 1)
        throw IoError("unsupported image dtype code " + std::to_string(header[6]) + " for sample '" +
                      sample_id + "'");
    Shape shape(3);
    for (int d = 0; d < 3; ++d)
        shape[static_cast<std::size_t>(d)] =
            static_cast<std::int64_t>(header[8 + 2 * d]) | (static_cast<std::int64_t>(header[9 + 2 * d]) << 8);
    const auto n = static_cast<std::size_t>(shape_numel(shape));
    std::vector<float> payload(n);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != n * sizeof(float))
        throw IoError("truncated image payload for sample '" + sample_id + "': " + path);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<double>(payload[i]);
    return Tensor::from_data(std::move(shape), std::move(data));
}

inline void save(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(dir) / "images");

    ds.vocab.save((fs::path(dir) / ds.manifest.vocab_file).string());

    std::ofstream manifest((fs::path(dir) / "manifest.txt").string());
    if (!manifest) throw IoError("cannot write manifest in " + dir);
    manifest << "MSANN-DATA-1\n";
    KvConfig kv;
    std::string classes;
    for (std::size_t i = 0; i < ds.manifest.class_names.size(); ++i) {
        if (i) classes += ",";
        classes += ds.manifest.class_names[i];
    }
    kv.set("classes", classes);
    kv.set("image_channels", ds.manifest.image_channels);
    kv.set("image_size", ds.manifest.image_size);
    kv.set("max_quantity", ds.manifest.max_quantity);
    kv.set("vocab", ds.manifest.vocab_file);
    if (ds.manifest.synth) ds.manifest.synth->to_kv(kv);
    manifest << kv.serialize();
    manifest << "split train " << ds.manifest.train_ids.size() << "\n";
    for (const auto& id : ds.manifest.train_ids) manifest << id << "\n";
    manifest << "split test " << ds.manifest.test_ids.size() << "\n";
    for (const auto& id : ds.manifest.test_ids) manifest << id << "\n";

    std::ofstream records((fs::path(dir) / "records.tsv").string());
    if (!records) throw IoError("cannot write records.tsv in " + dir);
    for (const auto& s : ds.samples) {
        save_image_bin((fs::path(dir) / "images" / (s.id + ".bin")).string(), s.image);
        const auto payload = detail::image_payload(s.image);
        const std::uint64_t checksum =
            detail::fnv1a(payload.data(), payload.size() * sizeof(float));
        std::vector<std::int64_t> tag_indices;
        for (std::size_t t = 0; t < s.tags.size(); ++t)
            if (s.tags[t]) tag_indices.push_back(static_cast<std::int64_t>(t));
        char hex[32];
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(checksum));
        records << s.id << "\t" << format_label_list(s.labels) << "\t"
                << format_label_list(tag_indices) << "\t" << hex << "\n";
    }
}

inline Dataset load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream manifest((fs::path(dir) / "manifest.txt").string());
    if (!manifest) throw IoError("cannot open manifest.txt in " + dir);
    std::string line;
    std::getline(manifest, line);
    if (line != "MSANN-DATA-1")
        throw IoError("bad dataset manifest header in " + dir + ": '" + line + "'");

    std::string kv_text;
    std::vector<std::pair<std::string, std::int64_t>> splits;
    Dataset ds;
    while (std::getline(manifest, line)) {
        if (line.rfind("split ", 0) == 0) {
            std::istringstream ss(line);
            std::string word, name;
            std::int64_t count = 0;
            ss >> word >> name >> count;
            for (std::int64_t i = 0; i < count; ++i) {
                std::string id;
                if (!std::getline(manifest, id))
                    throw IoError("manifest split '" + name + "' truncated in " + dir);
                if (name == "train")
                    ds.manifest.train_ids.push_back(id);
                else if (name == "test")
                    ds.manifest.test_ids.push_back(id);
                else
                    throw IoError("unknown split '" + name + "' in " + dir);
            }
        } else {
            kv_text += line + "\n";
        }
    }
    KvConfig kv = KvConfig::parse_text(kv_text);
    {
        std::istringstream ss(kv.get_string("classes"));
        std::string item;
        while (std::getline(ss, item, ',')) ds.manifest.class_names.push_back(item);
    }
    ds.manifest.image_channels = kv.get_int("image_channels");
    ds.manifest.image_size = kv.get_int("image_size");
    ds.manifest.max_quantity = kv.get_int("max_quantity");
    ds.manifest.vocab_file = kv.get_string("vocab");
    if (kv.has("num_classes")) ds.manifest.synth = SynthConfig::from_kv(kv);

    ds.vocab = TagVocabulary::load((fs::path(dir) / ds.manifest.vocab_file).string());

    std::ifstream records((fs::path(dir) / "records.tsv").string());
    if (!records) throw IoError("cannot open records.tsv in " + dir);
    while (std::getline(records, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ss(line);
        std::string field;
        while (std::getline(ss, field, '\t')) fields.push_back(field);
        if (fields.size() != 4)
            throw IoError("records.tsv line with " + std::to_string(fields.size()) +
                          " fields in " + dir);
        Sample s;
        s.id = fields[0];
        s.labels = parse_label_list(fields[1]);
        s.quantity = static_cast<std::int64_t>(s.labels.size());
        s.image = load_image_bin((fs::path(dir) / "images" / (s.id + ".bin")).string(), s.id);

        const auto payload = detail::image_payload(s.image);
        const std::uint64_t checksum = detail::fnv1a(payload.data(), payload.size() * sizeof(float));
        char hex[32];
        std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(checksum));
        if (fields[3] != hex)
            throw IoError("checksum mismatch for sample '" + s.id + "': manifest has " + fields[3] +
                          ", payload hashes to " + hex);

        s.tags.assign(static_cast<std::size_t>(ds.vocab.size()), 0);
        for (auto t : parse_label_list(fields[2])) {
            if (t < 0 || t >= ds.vocab.size())
                throw IoError("tag index " + std::to_string(t) + " out of range for sample '" +
                              s.id + "'");
            s.tags[static_cast<std::size_t>(t)] = 1;
        }
        ds.by_id[s.id] = ds.samples.size();
        ds.samples.push_back(std::move(s));
    }

    std::vector<std::string> missing;
    for (const auto& id : ds.manifest.train_ids)
        if (!ds.by_id.count(id)) missing.push_back(id);
    for (const auto& id : ds.manifest.test_ids)
        if (!ds.by_id.count(id)) missing.push_back(id);
    if (!missing.empty()) {
        std::string names;
        for (const auto& id : missing) names += (names.empty() ? "" : ", ") + id;
        throw IoError("manifest references absent samples: " + names);
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

struct Batch {
    Tensor images;  // [N,C,H,W]
    Tensor tags;    // [N,T]
    LabelMatrix labels;
    std::vector<const Sample*> samples;
};

inline Batch assemble_batch(const std::vector<const Sample*>& samples, std::int64_t num_classes) {
    if (samples.empty()) throw ContractError("cannot assemble an empty batch");
    const Shape& img_shape = samples.front()->image.shape();
    const auto per_image = static_cast<std::size_t>(shape_numel(img_shape));
    const auto vocab = static_cast<std::int64_t>(samples.front()->tags.size());
    const auto n = static_cast<std::int64_t>(samples.size());

    std::vector<double> images;
    images.reserve(static_cast<std::size_t>(n) * per_image);
    std::vector<double> tags;
    tags.reserve(static_cast<std::size_t>(n * vocab));
    std::vector<std::vector<std::int64_t>> label_sets;
    label_sets.reserve(samples.size());
    for (const Sample* s : samples) {
        if (s->image.shape() != img_shape)
            throw DimensionError("batch mixes image shapes " + shape_str(img_shape) + " and " +
                                 shape_str(s->image.shape()));
        images.insert(images.end(), s->image.data().begin(), s->image.data().end());
        for (auto b : s->tags) tags.push_back(static_cast<double>(b));
        label_sets.push_back(s->labels);
    }
    Batch batch{
        Tensor::from_data({n, img_shape[0], img_shape[1], img_shape[2]}, std::move(images)),
        Tensor::from_data({n, vocab}, std::move(tags)),
        LabelMatrix::from_sets(label_sets, num_classes),
        samples,
    };
    return batch;
}

// Deterministic epoch iterator: the shuffle permutation is derived from
// (seed, epoch); the final partial batch is kept.
class BatchIterator {
public:
    BatchIterator(std::vector<const Sample*> samples, std::int64_t num_classes,
                  std::int64_t batch_size, std::uint64_t seed, std::uint64_t epoch, bool shuffle)
        : samples_(std::move(samples)), num_classes_(num_classes), batch_size_(batch_size) {
        if (batch_size_ < 1) throw ConfigError("batch_size must be >= 1");
        order_.resize(samples_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        if (shuffle) {
            Rng rng(Rng::derive(seed, "shuffle", epoch));
            rng.shuffle(order_);
        }
    }

    std::optional<Batch> next() {
        if (cursor_ >= order_.size()) return std::nullopt;
        std::vector<const Sample*> group;
        while (cursor_ < order_.size() && static_cast<std::int64_t>(group.size()) < batch_size_)
            group.push_back(samples_[order_[cursor_++]]);
        return assemble_batch(group, num_classes_);
    }

private:
    std::vector<const Sample*> samples_;
    std::int64_t num_classes_;
    std::int64_t batch_size_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

}  // namespace msann
