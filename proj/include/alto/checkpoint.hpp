#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "alto/errors.hpp"
#include "alto/networks.hpp"
#include "alto/optim.hpp"

namespace alto {

// Single-archive checkpoint: 8-byte magic, little-endian u64 header length,
// JSON header (format version, scalar type, step counter, config echo, and
// a tensor index), then the raw tensor payload in index order.
inline constexpr char kCheckpointMagic[8] = {'A', 'L', 'T', 'O', 'C', 'K', 'P', 'T'};
inline constexpr int kCheckpointVersion = 1;

namespace detail {

template <typename S>
const char* scalar_tag() {
    return sizeof(S) == 4 ? "f32" : "f64";
}

template <typename S>
void index_tensor(nlohmann::ordered_json& index, std::vector<const Tensor<S>*>& payload,
                  const std::string& name, const Tensor<S>& t) {
    nlohmann::ordered_json e;
    e["name"] = name;
    std::vector<int64_t> dims(t.shape.dim.begin(), t.shape.dim.begin() + t.shape.rank);
    e["shape"] = dims;
    index.push_back(e);
    payload.push_back(&t);
}

} // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, Model<S>& model, const AdamW<S>* opt_theta,
                     const AdamW<S>* opt_repr, int64_t step,
                     const nlohmann::ordered_json& config_echo) {
    nlohmann::ordered_json header;
    header["format_version"] = kCheckpointVersion;
    header["scalar"] = detail::scalar_tag<S>();
    header["step"] = step;
    header["config"] = config_echo;

    nlohmann::ordered_json index = nlohmann::ordered_json::array();
    std::vector<const Tensor<S>*> payload;
    for (Param<S>* p : model.all_params())
        detail::index_tensor(index, payload, p->name, p->value);
    auto add_optimizer = [&](const char* tag, const AdamW<S>* opt) {
        if (!opt) return;
        header[std::string(tag) + "_steps"] = opt->step_count();
        AdamW<S>* o = const_cast<AdamW<S>*>(opt);
        for (size_t k = 0; k < o->params().size(); ++k) {
            detail::index_tensor(index, payload, std::string(tag) + ".m." + o->params()[k]->name,
                                 o->moment1(k));
            detail::index_tensor(index, payload, std::string(tag) + ".v." + o->params()[k]->name,
                                 o->moment2(k));
        }
    };
    add_optimizer("opt_theta", opt_theta);
    add_optimizer("opt_repr", opt_repr);
    header["tensors"] = index;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path);
    const std::string hs = header.dump();
    const uint64_t hlen = hs.size();
    out.write(kCheckpointMagic, 8);
    out.write(reinterpret_cast<const char*>(&hlen), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const Tensor<S>* t : payload)
        out.write(reinterpret_cast<const char*>(t->data()),
                  static_cast<std::streamsize>(t->numel() * static_cast<int64_t>(sizeof(S))));
    if (!out) throw DataError("failed writing checkpoint " + path);
}

// Header without the payload; used for config echo and report metadata.
inline nlohmann::json checkpoint_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    char magic[8];
    uint64_t hlen = 0;
    in.read(magic, 8).read(reinterpret_cast<char*>(&hlen), 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw DataError("truncated checkpoint header in " + path);
    try {
        nlohmann::json h = nlohmann::json::parse(hs);
        if (h.value("format_version", -1) != kCheckpointVersion)
            throw DataError("checkpoint format version mismatch in " + path + " (want " +
                            std::to_string(kCheckpointVersion) + ")");
        return h;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed checkpoint header in " + path + ": " + e.what());
    }
}

// Restores parameters (and optimizer moments when the optimizers are given)
// in place; returns the stored step counter. Every model parameter must be
// present with a matching shape.
template <typename S>
int64_t load_checkpoint(const std::string& path, Model<S>& model, AdamW<S>* opt_theta = nullptr,
                        AdamW<S>* opt_repr = nullptr) {
    const nlohmann::json header = checkpoint_header(path);
    if (header.value("scalar", "") != detail::scalar_tag<S>())
        throw DataError("checkpoint scalar type mismatch in " + path);

    // Rebuild the payload offsets from the index.
    struct Entry {
        uint64_t offset, count;
    };
    std::map<std::string, Entry> entries;
    uint64_t pos = 0;
    for (const auto& e : header.at("tensors")) {
        uint64_t n = 1;
        for (const auto& d : e.at("shape")) n *= d.get<uint64_t>();
        entries[e.at("name").get<std::string>()] = {pos, n};
        pos += n;
    }

    std::ifstream in(path, std::ios::binary);
    char magic[8];
    uint64_t hlen = 0;
    in.read(magic, 8).read(reinterpret_cast<char*>(&hlen), 8);
    in.seekg(static_cast<std::streamoff>(16 + hlen));
    const std::streamoff payload_base = in.tellg();

    auto read_into = [&](const std::string& name, Tensor<S>& t, bool required) {
        auto it = entries.find(name);
        if (it == entries.end()) {
            if (required) throw DataError("checkpoint " + path + " lacks tensor '" + name + "'");
            return;
        }
        if (it->second.count != static_cast<uint64_t>(t.numel()))
            throw DataError("checkpoint tensor '" + name + "' has wrong size in " + path);
        in.seekg(payload_base +
                 static_cast<std::streamoff>(it->second.offset * sizeof(S)));
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(S))));
        if (!in) throw DataError("truncated checkpoint payload in " + path);
    };

    for (Param<S>* p : model.all_params()) read_into(p->name, p->value, /*required=*/true);
    auto load_optimizer = [&](const char* tag, AdamW<S>* opt) {
        if (!opt) return;
        for (size_t k = 0; k < opt->params().size(); ++k) {
            read_into(std::string(tag) + ".m." + opt->params()[k]->name, opt->moment1(k), false);
            read_into(std::string(tag) + ".v." + opt->params()[k]->name, opt->moment2(k), false);
        }
        if (header.contains(std::string(tag) + "_steps"))
            opt->set_step_count(header[std::string(tag) + "_steps"].get<int64_t>());
    };
    load_optimizer("opt_theta", opt_theta);
    load_optimizer("opt_repr", opt_repr);
    return header.value("step", int64_t{0});
}

} // namespace alto
