#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "msann/layers.hpp"

namespace msann {

// Binary indicator over the tag vocabulary; entry j is 1 iff the image
// carries tag j.
using TagVector = std::vector<std::uint8_t>;

class TagVocabulary {
public:
    TagVocabulary() = default;

    explicit TagVocabulary(std::vector<std::string> tags) : tags_(std::move(tags)) {
        for (std::size_t i = 0; i < tags_.size(); ++i) {
            if (index_.count(tags_[i]))
                throw ConfigError("duplicate tag '" + tags_[i] + "' in vocabulary");
            index_[tags_[i]] = static_cast<std::int64_t>(i);
        }
    }

    std::int64_t size() const { return static_cast<std::int64_t>(tags_.size()); }
    const std::vector<std::string>& tags() const { return tags_; }
    const std::string& tag(std::int64_t i) const { return tags_[static_cast<std::size_t>(i)]; }

    // -1 for out-of-vocabulary tags; unknown tags at inference are dropped.
    std::int64_t index_of(const std::string& tag) const {
        auto it = index_.find(tag);
        return it == index_.end() ? -1 : it->second;
    }

    TagVector encode(const std::vector<std::string>& image_tags) const {
        TagVector v(tags_.size(), 0);
        for (const auto& t : image_tags) {
            const auto i = index_of(t);
            if (i >= 0) v[static_cast<std::size_t>(i)] = 1;
        }
        return v;
    }

    // One tag per line, index = line number, UTF-8.
    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw IoError("cannot write vocabulary file: " + path);
        for (const auto& t : tags_) out << t << "\n";
    }

    static TagVocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open vocabulary file: " + path);
        std::vector<std::string> tags;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) tags.push_back(line);
        }
        return TagVocabulary(std::move(tags));
    }

private:
    std::vector<std::string> tags_;
    std::map<std::string, std::int64_t> index_;
};

// Selects the T most frequent tags over the corpus; ties break
// lexicographically. A corpus with fewer distinct tags than requested yields
// a smaller vocabulary (with a warning) rather than an error.
inline TagVocabulary build_vocabulary(const std::vector<std::vector<std::string>>& tag_lists,
                                      std::int64_t requested) {
    if (requested < 1) throw ConfigError("vocabulary size must be >= 1");
    std::map<std::string, std::int64_t> counts;
    for (const auto& list : tag_lists)
        for (const auto& t : list) ++counts[t];
    if (counts.empty()) throw ConfigError("cannot build a vocabulary from an empty tag corpus");

    std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (static_cast<std::int64_t>(ranked.size()) < requested)
        std::cerr << "warning: corpus has only " << ranked.size() << " distinct tags, requested "
                  << requested << "\n";
    std::vector<std::string> tags;
    for (std::int64_t i = 0; i < requested && i < static_cast<std::int64_t>(ranked.size()); ++i)
        tags.push_back(ranked[static_cast<std::size_t>(i)].first);
    return TagVocabulary(std::move(tags));
}

// Two hidden ReLU layers of equal width; the output dimension matches the
// visual feature so both modalities carry equal weight in the joint vector.
struct TextualMLP {
    std::int64_t vocab_size = 0, hidden = 0, out_dim = 0;
    LinearLayer fc1, fc2, fc3;

    TextualMLP() = default;

    TextualMLP(std::int64_t vocab, std::int64_t hidden_width, std::int64_t feature_dim, Rng& rng)
        : vocab_size(vocab),
          hidden(hidden_width),
          out_dim(feature_dim),
          fc1(vocab, hidden_width, rng),
          fc2(hidden_width, hidden_width, rng),
          fc3(hidden_width, feature_dim, rng) {}

    Tensor forward(const Tensor& t) const {
        if (t.shape().size() != 2 || t.dim(1) != vocab_size)
            throw DimensionError("encode_tags: tag batch " + shape_str(t.shape()) +
                                 " does not match vocabulary size " + std::to_string(vocab_size));
        return fc3.forward(relu(fc2.forward(relu(fc1.forward(t)))));
    }

    void params(const std::string& prefix, std::vector<ParamRef>& out) {
        fc1.params(prefix + ".fc1", out);
        fc2.params(prefix + ".fc2", out);
        fc3.params(prefix + ".fc3", out);
    }
    void state(const std::string& prefix, StateDict& out) const {
        fc1.state(prefix + ".fc1", out);
        fc2.state(prefix + ".fc2", out);
        fc3.state(prefix + ".fc3", out);
    }
    void load(const std::string& prefix, StateLookup& in) {
        fc1.load(prefix + ".fc1", in);
        fc2.load(prefix + ".fc2", in);
        fc3.load(prefix + ".fc3", in);
    }
};

inline Tensor tag_batch_tensor(const std::vector<TagVector>& batch, std::int64_t vocab_size) {
    const auto n = static_cast<std::int64_t>(batch.size());
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(n * vocab_size));
    for (const auto& v : batch) {
        if (static_cast<std::int64_t>(v.size()) != vocab_size)
            throw DimensionError("tag vector length " + std::to_string(v.size()) +
                                 " does not match vocabulary size " + std::to_string(vocab_size));
        for (auto b : v) data.push_back(static_cast<double>(b));
    }
    return Tensor::from_data({n, vocab_size}, std::move(data));
}

inline Tensor encode_tags(const TextualMLP& mlp, const Tensor& tag_batch) {
    return mlp.forward(tag_batch);
}

// f = [f_v, f_t], visual half first.
inline Tensor joint_feature(const Tensor& f_v, const Tensor& f_t) {
    if (f_v.shape().size() != 2 || f_t.shape().size() != 2 || f_v.dim(0) != f_t.dim(0) ||
        f_v.dim(1) != f_t.dim(1))
        throw DimensionError("joint_feature: expected matching [N,D] features, got " +
                             shape_str(f_v.shape()) + " and " + shape_str(f_t.shape()));
    return concat(f_v, f_t);
}

}  // namespace msann
