#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gme/checkpoint.hpp"
#include "gme/config.hpp"
#include "gme/data.hpp"
#include "gme/network.hpp"
#include "gme/trainer.hpp"

namespace gme {

namespace fs = std::filesystem;

inline void write_provenance(const json& cfg, const std::string& out_dir,
                             const std::string& command) {
    fs::create_directories(out_dir);
    json prov = {{"schema_version", 1}, {"command", command}, {"config", cfg}};
    std::ofstream out(fs::path(out_dir) / "provenance.json", std::ios::trunc);
    out << prov.dump(2) << "\n";
}

inline std::string manifest_path(const json& cfg) {
    std::string p = cfg.at("data").at("manifest").get<std::string>();
    if (p.empty())
        p = (fs::path(cfg.at("output_dir").get<std::string>()) / "manifest.txt").string();
    return p;
}

// --- prepare-data -----------------------------------------------------------

inline Manifest cmd_prepare_data(const json& cfg) {
    const json& d = cfg.at("data");
    const uint64_t seed = cfg.at("seed").get<uint64_t>();
    std::string src = d.at("source_dir").get<std::string>();
    if (src.empty())
        throw std::invalid_argument("prepare-data: data.source_dir is required");
    if (d.at("synthetic").get<bool>() && !fs::is_directory(src))
        generate_toy_dataset(src, d.at("synthetic_per_class").get<int>(),
                             d.at("synthetic_hr_size").get<int>(), seed);
    if (!fs::is_directory(src))
        throw std::invalid_argument("prepare-data: source directory not found: " + src);

    const DegradationSpec spec = degradation_spec_from_json(d);
    GenerationResult res =
        generate_lr_dataset(src, spec, d.at("lr_dir").get<std::string>(), seed);
    for (const auto& e : res.errors) std::cerr << "prepare-data: skipped: " << e << "\n";

    const std::string out_dir = cfg.at("output_dir").get<std::string>();
    fs::create_directories(out_dir);
    write_manifest(manifest_path(cfg), res.manifest);
    write_provenance(cfg, out_dir, "prepare-data");
    return res.manifest;
}

// --- training commands ------------------------------------------------------

template <typename T>
PairedLoader<T> make_loader(const json& cfg, const Manifest& m) {
    LoaderOptions lo;
    lo.batch = cfg.at("schedule").at("batch").get<int>();
    lo.seed = cfg.at("seed").get<uint64_t>();
    lo.augment_flip = cfg.at("data").at("augment_flip").get<bool>();
    lo.fail_fast = cfg.at("data").at("fail_fast").get<bool>();
    lo.input_h = cfg.at("network").at("input_size").at(0).get<int>();
    lo.input_w = cfg.at("network").at("input_size").at(1).get<int>();
    return PairedLoader<T>(m, lo);
}

inline TrainOptions train_options_from_json(const json& cfg) {
    TrainOptions to;
    const json& s = cfg.at("schedule");
    to.epochs = s.at("epochs").get<int>();
    to.schedule = schedule_from_json(s);
    to.momentum = s.at("momentum").get<double>();
    to.weight_decay = s.at("weight_decay").get<double>();
    to.lambda_kd = cfg.at("distill").at("lambda_kd").get<double>();
    to.eval_batch = cfg.at("eval").at("batch").get<int>();
    return to;
}

template <typename T>
void save_run_checkpoints(const json& cfg, Network<T>& net, const TrainResult<T>& result,
                          const std::string& stem, int epochs) {
    const std::string out_dir = cfg.at("output_dir").get<std::string>();
    json meta = {{"schema_version", 1},
                 {"config", cfg},
                 {"seed", cfg.at("seed")},
                 {"epoch", epochs},
                 {"best_epoch", result.best_epoch},
                 {"best_accuracy", result.best_accuracy}};
    save_checkpoint<T>((fs::path(out_dir) / (stem + "_last.ckpt")).string(), meta,
                       net.parameters());
    if (!result.best_state.empty()) {
        std::vector<Param<T>*> params = net.parameters();
        std::vector<Tensor<T>> backup;
        for (Param<T>* p : params) backup.push_back(p->value);
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = result.best_state[i];
        meta["epoch"] = result.best_epoch;
        save_checkpoint<T>((fs::path(out_dir) / (stem + "_best.ckpt")).string(), meta,
                           params);
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = backup[i];
    }
}

template <typename T>
TrainResult<T> cmd_train_teacher(const json& cfg, std::ostream* log = &std::cout) {
    const Manifest m = read_manifest(manifest_path(cfg));
    const uint64_t seed = cfg.at("seed").get<uint64_t>();
    Network<T> net(network_config_from_json(cfg.at("network")), seed);
    PairedLoader<T> loader = make_loader<T>(cfg, m);
    const std::string out_dir = cfg.at("output_dir").get<std::string>();
    fs::create_directories(out_dir);
    std::ofstream metrics(fs::path(out_dir) / "teacher_metrics.ndjson", std::ios::trunc);
    TrainOptions to = train_options_from_json(cfg);
    to.metrics = &metrics;
    to.log = log;
    TrainResult<T> result = train_teacher<T>(net, loader, to);
    save_run_checkpoints<T>(cfg, net, result, "teacher", to.epochs);
    write_provenance(cfg, out_dir, "train-teacher");
    return result;
}

// Refuses to distill from a checkpoint whose network section differs from the
// requested one; the diff names every divergent key.
inline void require_same_network(const json& ckpt_cfg, const json& cfg) {
    const json& a = ckpt_cfg.at("network");
    const json& b = cfg.at("network");
    if (a == b) return;
    std::ostringstream diff;
    for (auto it = b.begin(); it != b.end(); ++it)
        if (!a.contains(it.key()) || a.at(it.key()) != *it)
            diff << "  " << it.key() << ": checkpoint "
                 << (a.contains(it.key()) ? a.at(it.key()).dump() : "<missing>")
                 << " vs requested " << it->dump() << "\n";
    throw std::invalid_argument("distill: checkpoint/config architecture mismatch:\n" +
                                diff.str());
}

template <typename T>
TrainResult<T> cmd_distill_student(const json& cfg, std::ostream* log = &std::cout) {
    const Manifest m = read_manifest(manifest_path(cfg));
    const uint64_t seed = cfg.at("seed").get<uint64_t>();
    const std::string out_dir = cfg.at("output_dir").get<std::string>();
    std::string tpath = cfg.at("distill").at("teacher_checkpoint").get<std::string>();
    if (tpath.empty()) tpath = (fs::path(out_dir) / "teacher_best.ckpt").string();

    Network<T> teacher(network_config_from_json(cfg.at("network")), seed);
    const json tmeta = load_checkpoint<T>(tpath, teacher.parameters());
    require_same_network(tmeta.at("config"), cfg);
    teacher.set_training(false);

    Network<T> student(network_config_from_json(cfg.at("network")), seed + 1);
    PairedLoader<T> loader = make_loader<T>(cfg, m);
    fs::create_directories(out_dir);
    std::ofstream metrics(fs::path(out_dir) / "student_metrics.ndjson", std::ios::trunc);
    TrainOptions to = train_options_from_json(cfg);
    to.metrics = &metrics;
    to.log = log;
    TrainResult<T> result = train_student<T>(student, teacher, loader, to);
    save_run_checkpoints<T>(cfg, student, result, "student", to.epochs);
    write_provenance(cfg, out_dir, "distill");
    return result;
}

// --- evaluate ----------------------------------------------------------------

template <typename T>
EvaluationReport cmd_evaluate(const json& cfg, const std::string& ckpt_path,
                              const std::string& manifest_file) {
    const Manifest m = read_manifest(manifest_file.empty() ? manifest_path(cfg)
                                                           : manifest_file);
    // The checkpoint's own config echo defines the architecture.
    std::ifstream probe(ckpt_path, std::ios::binary);
    if (!probe) throw std::invalid_argument("evaluate: cannot open checkpoint " + ckpt_path);
    probe.close();
    // First load the header with a scratch parse to get the config.
    json meta;
    {
        std::ifstream in(ckpt_path, std::ios::binary);
        char magic[8];
        in.read(magic, 8);
        uint64_t jlen = 0;
        in.read(reinterpret_cast<char*>(&jlen), sizeof(jlen));
        std::string js(jlen, '\0');
        in.read(js.data(), static_cast<std::streamsize>(jlen));
        if (!in) throw std::runtime_error("evaluate: truncated checkpoint " + ckpt_path);
        meta = json::parse(js);
    }
    const NetworkConfig nc = network_config_from_json(meta.at("config").at("network"));
    if (nc.num_classes != static_cast<int>(m.class_names.size()))
        throw std::invalid_argument("evaluate: checkpoint has " +
                                    std::to_string(nc.num_classes) +
                                    " classes but manifest has " +
                                    std::to_string(m.class_names.size()));
    Network<T> net(nc, 0);
    load_checkpoint<T>(ckpt_path, net.parameters());
    net.set_training(false);

    json mcfg = meta.at("config");
    PairedLoader<T> loader = make_loader<T>(mcfg, m);
    const EvalInput input =
        cfg.at("eval").at("input").get<std::string>() == "hr" ? EvalInput::hr : EvalInput::lr;
    EvaluationReport rep = evaluate<T>(net, loader, loader.test_indices(), input,
                                       cfg.at("eval").at("batch").get<int>());
    const std::string out_dir = cfg.at("output_dir").get<std::string>();
    fs::create_directories(out_dir);
    json doc = rep.to_json();
    doc["config"] = cfg;
    doc["checkpoint"] = ckpt_path;
    std::ofstream out(fs::path(out_dir) / "eval_report.json", std::ios::trunc);
    out << doc.dump(2) << "\n";
    write_provenance(cfg, out_dir, "evaluate");
    return rep;
}

// --- ablation ----------------------------------------------------------------

struct AblationRow {
    std::string name;
    bool use_cbam = false, use_dbam = false, use_global = false, use_kd = false;
};

inline std::vector<AblationRow> ablation_rows() {
    return {{"Baseline", false, false, false, false},
            {"Baseline+CBAM", true, false, false, false},
            {"Baseline+DBAM", false, true, false, false},
            {"Baseline+Global Module", false, false, true, false},
            {"Baseline+DBAM+GM(without kd)", false, true, true, false},
            {"Baseline+DBAM+GM(GME-Net)", false, true, true, true}};
}

struct AblationRowResult {
    std::string name;
    bool ok = false;
    std::string error;
    size_t param_count = 0;
    double accuracy = 0.0;
    double l_kd_first = 0.0, l_kd_last = 0.0;  // kd row only
};

// Runs the six-variant matrix with a shared seed. Rows without kd are plain
// supervised training on the student inputs; the kd row first trains a
// teacher of the same architecture on HR inputs. A failing row is reported
// and does not abort the matrix.
template <typename T>
std::vector<AblationRowResult> cmd_ablation(const json& cfg, std::ostream* log = &std::cout) {
    const Manifest m = read_manifest(manifest_path(cfg));
    std::vector<AblationRowResult> results;
    for (const AblationRow& row : ablation_rows()) {
        AblationRowResult r;
        r.name = row.name;
        try {
            json rcfg = cfg;
            rcfg["network"]["use_cbam"] = row.use_cbam;
            rcfg["network"]["use_dbam"] = row.use_dbam;
            rcfg["network"]["use_global_branch"] = row.use_global;
            const uint64_t seed = cfg.at("seed").get<uint64_t>();
            const NetworkConfig nc = network_config_from_json(rcfg.at("network"));
            PairedLoader<T> loader = make_loader<T>(rcfg, m);
            TrainOptions to = train_options_from_json(rcfg);
            to.log = nullptr;
            TrainResult<T> result;
            Network<T> net(nc, seed + 1);
            r.param_count = net.count_parameters();
            if (row.use_kd) {
                Network<T> teacher(nc, seed);
                TrainOptions tto = to;
                tto.train_on_hr = true;
                tto.lambda_kd = 0.0;
                TrainResult<T> tres = train_network<T>(teacher, nullptr, loader, tto);
                if (!tres.best_state.empty()) {
                    std::vector<Param<T>*> tp = teacher.parameters();
                    for (size_t i = 0; i < tp.size(); ++i) tp[i]->value = tres.best_state[i];
                }
                result = train_student<T>(net, teacher, loader, to);
                if (!result.steps.empty()) {
                    r.l_kd_first = result.steps.front().l_kd;
                    r.l_kd_last = result.steps.back().l_kd;
                }
            } else {
                to.lambda_kd = 0.0;
                result = train_network<T>(net, nullptr, loader, to);
            }
            r.accuracy = result.best_accuracy;
            r.ok = true;
        } catch (const std::exception& e) {
            r.error = e.what();
        }
        if (log)
            *log << std::left << std::setw(32) << r.name << " "
                 << (r.ok ? "acc " + std::to_string(r.accuracy) : "FAILED: " + r.error)
                 << " (params " << r.param_count << ")\n";
        results.push_back(r);
    }
    const std::string out_dir = cfg.at("output_dir").get<std::string>();
    fs::create_directories(out_dir);
    json doc = json::array();
    for (const auto& r : results)
        doc.push_back({{"name", r.name},
                       {"ok", r.ok},
                       {"error", r.error},
                       {"param_count", r.param_count},
                       {"accuracy", r.accuracy},
                       {"l_kd_first", r.l_kd_first},
                       {"l_kd_last", r.l_kd_last}});
    std::ofstream out(fs::path(out_dir) / "ablation.json", std::ios::trunc);
    out << json({{"schema_version", 1}, {"rows", doc}, {"config", cfg}}).dump(2) << "\n";
    write_provenance(cfg, out_dir, "ablation");
    return results;
}

}  // namespace gme
