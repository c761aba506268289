#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "msann/layers.hpp"

namespace msann {

// Checkpoint container: a text manifest (version header, entry count, one
// "name ndim extents..." line per entry) followed by an "@@DATA" marker and
// the raw little-endian 64-bit float payloads in manifest order.
inline constexpr const char* kCheckpointMagic = "MSANN-CKPT-1";

inline void save_checkpoint(const std::string& path, const StateDict& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
    out << kCheckpointMagic << "\n" << state.size() << "\n";
    for (const auto& e : state) {
        out << e.name << " " << e.shape.size();
        for (auto d : e.shape) out << " " << d;
        out << "\n";
    }
    out << "@@DATA\n";
    for (const auto& e : state)
        out.write(reinterpret_cast<const char*>(e.values.data()),
                  static_cast<std::streamsize>(e.values.size() * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline StateDict load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint file: " + path);
    std::string magic;
    std::getline(in, magic);
    if (magic != kCheckpointMagic)
        throw IoError("bad checkpoint header in " + path + ": expected '" + kCheckpointMagic +
                      "', got '" + magic + "'");
    std::size_t count = 0;
    in >> count;
    StateDict state;
    state.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        StateEntry e;
        std::size_t ndim = 0;
        in >> e.name >> ndim;
        e.shape.resize(ndim);
        for (auto& d : e.shape) in >> d;
        if (!in) throw IoError("malformed checkpoint manifest in " + path);
        state.push_back(std::move(e));
    }
    std::string line;
    std::getline(in, line);  // rest of the last manifest line
    std::getline(in, line);
    if (line != "@@DATA") throw IoError("missing @@DATA marker in " + path);
    for (auto& e : state) {
        const auto n = static_cast<std::size_t>(shape_numel(e.shape));
        e.values.resize(n);
        in.read(reinterpret_cast<char*>(e.values.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != n * sizeof(double))
            throw IoError("truncated checkpoint payload in " + path + " at entry '" + e.name + "'");
    }
    return state;
}

}  // namespace msann
