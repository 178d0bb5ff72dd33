#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gme/data.hpp"
#include "gme/network.hpp"
#include "gme/optimizer.hpp"

namespace gme {

using nlohmann::json;

// Default training recipe: SGD momentum 0.9, lr 0.1 decayed x0.4 every 20
// epochs, batch 64, 100 epochs, lambda_kd 5, initial width 32.
inline json default_config() {
    return json{
        {"schema_version", 1},
        {"seed", 0},
        {"output_dir", "runs/default"},
        {"precision", 64},
        {"network",
         {{"initial_channels", 32},
          {"stage_widths", {32, 64, 128, 256}},
          {"blocks_per_stage", {3, 4, 6, 3}},
          {"num_classes", 7},
          {"reduction_ratio", 16},
          {"input_size", {112, 112}},
          {"use_dbam", true},
          {"use_cbam", false},
          {"use_global_branch", true},
          {"use_norm", true},
          {"mcb_residual_from_input", false}}},
        {"schedule",
         {{"lr0", 0.1},
          {"decay", 0.4},
          {"decay_every", 20},
          {"momentum", 0.9},
          {"weight_decay", 1e-4},
          {"batch", 64},
          {"epochs", 100}}},
        {"distill", {{"lambda_kd", 5.0}, {"teacher_checkpoint", ""}}},
        {"data",
         {{"source_dir", ""},
          {"lr_dir", ""},
          {"manifest", ""},
          {"target_size", 14},
          {"blur_kernel", 3},
          {"blur_sigma", 1.0},
          {"synthetic", false},
          {"synthetic_per_class", 100},
          {"synthetic_hr_size", 112},
          {"augment_flip", true},
          {"fail_fast", true}}},
        {"eval", {{"input", "lr"}, {"batch", 32}}}};
}

inline void deep_merge(json& base, const json& over) {
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
            deep_merge(base[it.key()], *it);
        else
            base[it.key()] = *it;
    }
}

inline json load_config(const std::string& path) {
    json cfg = default_config();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw std::invalid_argument("config: cannot open " + path);
        json file = json::parse(in);
        deep_merge(cfg, file);
    }
    return cfg;
}

// Applies one `--set key.path=value` override; the value is parsed as JSON
// when possible and treated as a string otherwise.
inline void apply_override(json& cfg, const std::string& kv) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (...) {
        value = raw;
    }
    json* node = &cfg;
    size_t from = 0;
    while (true) {
        const size_t dot = key.find('.', from);
        const std::string part = key.substr(from, dot == std::string::npos ? dot : dot - from);
        if (part.empty()) throw std::invalid_argument("--set: empty key component in " + key);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        from = dot + 1;
    }
}

inline NetworkConfig network_config_from_json(const json& n) {
    NetworkConfig c;
    c.initial_channels = n.at("initial_channels").get<int>();
    c.stage_widths = n.at("stage_widths").get<std::vector<int>>();
    c.blocks_per_stage = n.at("blocks_per_stage").get<std::vector<int>>();
    c.num_classes = n.at("num_classes").get<int>();
    c.reduction_ratio = n.at("reduction_ratio").get<int>();
    c.input_h = n.at("input_size").at(0).get<int>();
    c.input_w = n.at("input_size").at(1).get<int>();
    c.use_dbam = n.at("use_dbam").get<bool>();
    c.use_cbam = n.at("use_cbam").get<bool>();
    c.use_global_branch = n.at("use_global_branch").get<bool>();
    c.use_norm = n.at("use_norm").get<bool>();
    c.mcb_residual_from_input = n.at("mcb_residual_from_input").get<bool>();
    c.validate();
    return c;
}

inline LrSchedule schedule_from_json(const json& s) {
    LrSchedule sc;
    sc.lr0 = s.at("lr0").get<double>();
    sc.decay = s.at("decay").get<double>();
    sc.decay_every = s.at("decay_every").get<int>();
    if (sc.decay_every < 1) throw std::invalid_argument("schedule: decay_every < 1");
    return sc;
}

inline DegradationSpec degradation_spec_from_json(const json& d) {
    DegradationSpec spec;
    spec.target_size = d.at("target_size").get<int>();
    spec.blur_kernel = d.at("blur_kernel").get<int>();
    spec.blur_sigma = d.at("blur_sigma").get<double>();
    spec.validate();
    return spec;
}

}  // namespace gme
