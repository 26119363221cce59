#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "alto/data.hpp"
#include "alto/networks.hpp"
#include "alto/trainer.hpp"

namespace alto {

// A run description: nested documents whose keys mirror the config struct
// fields one-to-one. Every section is optional (defaults apply); unknown
// keys anywhere are errors.
struct RunConfig {
    NetworkConfig network;
    TrainConfig train;
    GenerationConfig generation;
};

namespace detail {

// Typed field extraction with unknown-key detection. Each get() marks its
// key consumed; finish() rejects anything left over.
class FieldReader {
public:
    FieldReader(const nlohmann::json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
    }

    void get(const char* key, int64_t& out) {
        if (const nlohmann::json* v = take(key)) {
            if (!v->is_number_integer()) throw ConfigError(where_ + "." + key + " must be an integer");
            out = v->get<int64_t>();
        }
    }
    void get(const char* key, int& out) {
        int64_t wide = out;
        get(key, wide);
        out = static_cast<int>(wide);
    }
    void get(const char* key, uint64_t& out) {
        if (const nlohmann::json* v = take(key)) {
            if (!v->is_number_integer() ||
                (!v->is_number_unsigned() && v->get<int64_t>() < 0))
                throw ConfigError(where_ + "." + key + " must be a non-negative integer");
            out = v->get<uint64_t>();
        }
    }
    void get(const char* key, double& out) {
        if (const nlohmann::json* v = take(key)) {
            if (!v->is_number()) throw ConfigError(where_ + "." + key + " must be a number");
            out = v->get<double>();
        }
    }
    void get(const char* key, bool& out) {
        if (const nlohmann::json* v = take(key)) {
            if (!v->is_boolean()) throw ConfigError(where_ + "." + key + " must be a boolean");
            out = v->get<bool>();
        }
    }
    void get(const char* key, std::string& out) {
        if (const nlohmann::json* v = take(key)) {
            if (!v->is_string()) throw ConfigError(where_ + "." + key + " must be a string");
            out = v->get<std::string>();
        }
    }
    void get(const char* key, std::vector<int>& out) {
        if (const nlohmann::json* v = take(key)) {
            if (!v->is_array()) throw ConfigError(where_ + "." + key + " must be an array");
            out.clear();
            for (const nlohmann::json& e : *v) {
                if (!e.is_number_integer())
                    throw ConfigError(where_ + "." + key + " must hold integers");
                out.push_back(e.get<int>());
            }
        }
    }

    // Returns the subdocument for a section, or nullptr when absent.
    const nlohmann::json* section(const char* key) { return take(key); }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key()))
                throw ConfigError("unknown key '" + item.key() + "' in " + where_);
    }

private:
    const nlohmann::json* take(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    const nlohmann::json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

inline RegistrationKind parse_registration_kind(const std::string& s) {
    if (s == "one_shot") return RegistrationKind::one_shot;
    if (s == "iterative") return RegistrationKind::iterative;
    throw ConfigError("registration_kind must be 'one_shot' or 'iterative'");
}

inline const char* registration_kind_name(RegistrationKind k) {
    return k == RegistrationKind::one_shot ? "one_shot" : "iterative";
}

} // namespace detail

inline NetworkConfig parse_network_config(const nlohmann::json& j) {
    NetworkConfig c;
    detail::FieldReader r(j, "network");
    r.get("input_channels", c.input_channels);
    r.get("base_width", c.base_width);
    r.get("encoder_stages", c.encoder_stages);
    r.get("projector_stages", c.projector_stages);
    r.get("include_stage4", c.include_stage4);
    r.get("blocks_per_stage", c.blocks_per_stage);
    std::string kind = detail::registration_kind_name(c.registration_kind);
    r.get("registration_kind", kind);
    c.registration_kind = detail::parse_registration_kind(kind);
    r.get("iterations", c.iterations);
    r.get("image_h", c.image_h);
    r.get("image_w", c.image_w);
    r.finish();
    c.validate();
    return c;
}

inline TrainConfig parse_train_config(const nlohmann::json& j) {
    TrainConfig c;
    detail::FieldReader r(j, "train");
    r.get("epochs", c.epochs);
    r.get("batch_size", c.batch_size);
    r.get("max_lr", c.max_lr);
    r.get("weight_decay", c.weight_decay);
    r.get("lambda", c.lambda);
    r.get("geometry_grad_clip", c.geometry_grad_clip);
    r.get("optimizer", c.optimizer);
    r.get("schedule", c.schedule);
    r.get("loss_geometry", c.loss_geometry);
    r.get("modality_pooling", c.modality_pooling);
    r.get("no_alternating", c.no_alternating);
    r.get("seed", c.seed);
    r.get("eval_fraction", c.eval_fraction);
    r.get("eval_every_epochs", c.eval_every_epochs);
    r.get("checkpoint_every_epochs", c.checkpoint_every_epochs);
    r.finish();
    c.validate();
    return c;
}

inline GenerationConfig parse_generation_config(const nlohmann::json& j) {
    GenerationConfig c;
    detail::FieldReader r(j, "generation");
    r.get("patch_size", c.patch_size);
    r.get("rho", c.rho);
    r.get("modality_a", c.modality_a);
    r.get("modality_b", c.modality_b);
    r.get("seed", c.seed);
    r.get("count", c.count);
    r.get("source_size", c.source_size);
    r.get("source_count", c.source_count);
    r.finish();
    c.validate();
    return c;
}

inline RunConfig parse_run_config(const nlohmann::json& doc) {
    RunConfig rc;
    detail::FieldReader r(doc, "config");
    if (const nlohmann::json* s = r.section("network")) rc.network = parse_network_config(*s);
    if (const nlohmann::json* s = r.section("train")) rc.train = parse_train_config(*s);
    if (const nlohmann::json* s = r.section("generation"))
        rc.generation = parse_generation_config(*s);
    r.finish();
    return rc;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("malformed config " + path + ": " + e.what());
    }
    return parse_run_config(doc);
}

// Full round-trip of the effective settings, for reports and checkpoints.
inline nlohmann::ordered_json echo_config(const RunConfig& rc) {
    nlohmann::ordered_json n;
    n["input_channels"] = rc.network.input_channels;
    n["base_width"] = rc.network.base_width;
    n["encoder_stages"] = rc.network.encoder_stages;
    n["projector_stages"] = rc.network.projector_stages;
    n["include_stage4"] = rc.network.include_stage4;
    n["blocks_per_stage"] = rc.network.blocks_per_stage;
    n["registration_kind"] = detail::registration_kind_name(rc.network.registration_kind);
    n["iterations"] = rc.network.iterations;
    n["image_h"] = rc.network.image_h;
    n["image_w"] = rc.network.image_w;

    nlohmann::ordered_json t;
    t["epochs"] = rc.train.epochs;
    t["batch_size"] = rc.train.batch_size;
    t["max_lr"] = rc.train.max_lr;
    t["weight_decay"] = rc.train.weight_decay;
    t["lambda"] = rc.train.lambda;
    t["geometry_grad_clip"] = rc.train.geometry_grad_clip;
    t["optimizer"] = rc.train.optimizer;
    t["schedule"] = rc.train.schedule;
    t["loss_geometry"] = rc.train.loss_geometry;
    t["modality_pooling"] = rc.train.modality_pooling;
    t["no_alternating"] = rc.train.no_alternating;
    t["seed"] = rc.train.seed;
    t["eval_fraction"] = rc.train.eval_fraction;
    t["eval_every_epochs"] = rc.train.eval_every_epochs;
    t["checkpoint_every_epochs"] = rc.train.checkpoint_every_epochs;

    nlohmann::ordered_json gje;
    gje["patch_size"] = rc.generation.patch_size;
    gje["rho"] = rc.generation.rho;
    gje["modality_a"] = rc.generation.modality_a;
    gje["modality_b"] = rc.generation.modality_b;
    gje["seed"] = rc.generation.seed;
    gje["count"] = rc.generation.count;
    gje["source_size"] = rc.generation.source_size;
    gje["source_count"] = rc.generation.source_count;

    nlohmann::ordered_json out;
    out["network"] = n;
    out["train"] = t;
    out["generation"] = gje;
    return out;
}

} // namespace alto
