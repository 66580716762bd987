#include "config.hpp"

#include <fstream>
#include <set>

using nlohmann::json;

namespace comodal {

namespace {

[[noreturn]] void config_fail(const std::string& path, const std::string& message) {
    fail(ErrorCode::config, "config error at " + path + ": " + message);
}

const json& member(const json& j, const std::string& path, const char* key) {
    if (!j.is_object()) config_fail(path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) config_fail(path + "." + key, "missing required key");
    return *it;
}

void reject_unknown(const json& j, const std::string& path, std::set<std::string> allowed) {
    if (!j.is_object()) config_fail(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key())) config_fail(path + "." + it.key(), "unknown key");
}

int get_int(const json& j, const std::string& path, const char* key) {
    const json& v = member(j, path, key);
    if (!v.is_number_integer()) config_fail(path + "." + key, "expected an integer");
    return v.get<int>();
}

uint64_t get_u64(const json& j, const std::string& path, const char* key) {
    const json& v = member(j, path, key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<int64_t>() < 0 &&
                                   !v.is_number_unsigned()))
        config_fail(path + "." + key, "expected a nonnegative integer");
    return v.get<uint64_t>();
}

double get_double(const json& j, const std::string& path, const char* key) {
    const json& v = member(j, path, key);
    if (!v.is_number()) config_fail(path + "." + key, "expected a number");
    return v.get<double>();
}

bool get_bool(const json& j, const std::string& path, const char* key) {
    const json& v = member(j, path, key);
    if (!v.is_boolean()) config_fail(path + "." + key, "expected a boolean");
    return v.get<bool>();
}

std::string get_string(const json& j, const std::string& path, const char* key) {
    const json& v = member(j, path, key);
    if (!v.is_string()) config_fail(path + "." + key, "expected a string");
    return v.get<std::string>();
}

std::array<int, 3> get_int3(const json& j, const std::string& path, const char* key) {
    const json& v = member(j, path, key);
    if (!v.is_array() || v.size() != 3) config_fail(path + "." + key, "expected 3 integers");
    std::array<int, 3> out{};
    for (int i = 0; i < 3; ++i) {
        if (!v[i].is_number_integer()) config_fail(path + "." + key, "expected 3 integers");
        out[static_cast<size_t>(i)] = v[i].get<int>();
    }
    return out;
}

ModelConfig model_from_json(const json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"patch_size", "embed_dim", "num_blocks", "num_heads", "adapter_dim",
                    "num_classes", "input_shape", "decoder_channels", "mlp_ratio",
                    "adapters_enabled", "mia_enabled", "decoder_skip"});
    ModelConfig c;
    c.patch_size = get_int(j, path, "patch_size");
    c.embed_dim = get_int(j, path, "embed_dim");
    c.num_blocks = get_int(j, path, "num_blocks");
    c.num_heads = get_int(j, path, "num_heads");
    c.adapter_dim = get_int(j, path, "adapter_dim");
    c.num_classes = get_int(j, path, "num_classes");
    c.input_shape = get_int3(j, path, "input_shape");
    const json& dc = member(j, path, "decoder_channels");
    if (!dc.is_array() || dc.empty()) config_fail(path + ".decoder_channels", "expected a list");
    c.decoder_channels.clear();
    for (const auto& v : dc) {
        if (!v.is_number_integer()) config_fail(path + ".decoder_channels", "expected integers");
        c.decoder_channels.push_back(v.get<int>());
    }
    c.mlp_ratio = get_int(j, path, "mlp_ratio");
    c.adapters_enabled = get_bool(j, path, "adapters_enabled");
    c.mia_enabled = get_bool(j, path, "mia_enabled");
    c.decoder_skip = get_bool(j, path, "decoder_skip");
    return c;
}

ModalityAppearance appearance_from_json(const json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"class_intensity", "noise_sigma", "bias_field_amplitude", "contrast_gamma"});
    ModalityAppearance a;
    const json& ci = member(j, path, "class_intensity");
    if (!ci.is_array()) config_fail(path + ".class_intensity", "expected a list of numbers");
    for (const auto& v : ci) {
        if (!v.is_number()) config_fail(path + ".class_intensity", "expected numbers");
        a.class_intensity.push_back(v.get<double>());
    }
    a.noise_sigma = get_double(j, path, "noise_sigma");
    a.bias_field_amplitude = get_double(j, path, "bias_field_amplitude");
    a.contrast_gamma = get_double(j, path, "contrast_gamma");
    return a;
}

json appearance_to_json(const ModalityAppearance& a) {
    return json{{"class_intensity", a.class_intensity},
                {"noise_sigma", a.noise_sigma},
                {"bias_field_amplitude", a.bias_field_amplitude},
                {"contrast_gamma", a.contrast_gamma}};
}

DataConfig data_from_json(const json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"dir", "paired", "n_train", "n_val", "n_test", "seed", "phantom",
                    "appearance_a", "appearance_b", "misalignment"});
    DataConfig d;
    d.dir = get_string(j, path, "dir");
    d.paired = get_bool(j, path, "paired");
    d.n_train = get_int(j, path, "n_train");
    d.n_val = get_int(j, path, "n_val");
    d.n_test = get_int(j, path, "n_test");
    d.seed = get_u64(j, path, "seed");
    const json& ph = member(j, path, "phantom");
    reject_unknown(ph, path + ".phantom",
                   {"grid_shape", "num_classes", "organs_per_class", "size_range"});
    d.phantom.grid_shape = get_int3(ph, path + ".phantom", "grid_shape");
    d.phantom.num_classes = get_int(ph, path + ".phantom", "num_classes");
    d.phantom.organs_per_class = get_int(ph, path + ".phantom", "organs_per_class");
    const json& sr = member(ph, path + ".phantom", "size_range");
    if (!sr.is_array() || sr.size() != 2 || !sr[0].is_number() || !sr[1].is_number())
        config_fail(path + ".phantom.size_range", "expected [min, max]");
    d.phantom.size_range = {sr[0].get<double>(), sr[1].get<double>()};
    d.appearance_a = appearance_from_json(member(j, path, "appearance_a"), path + ".appearance_a");
    d.appearance_b = appearance_from_json(member(j, path, "appearance_b"), path + ".appearance_b");
    const json& mis = member(j, path, "misalignment");
    reject_unknown(mis, path + ".misalignment",
                   {"enabled", "max_rotation_deg", "max_translation_vox"});
    d.misalignment.enabled = get_bool(mis, path + ".misalignment", "enabled");
    d.misalignment.max_rotation_deg = get_double(mis, path + ".misalignment", "max_rotation_deg");
    d.misalignment.max_translation_vox =
        get_double(mis, path + ".misalignment", "max_translation_vox");
    return d;
}

TrainOptions train_from_json(const json& j, const std::string& path) {
    reject_unknown(j, path,
                   {"epochs", "batch_size_labeled", "batch_size_unlabeled", "learning_rate",
                    "seed", "labeled_fraction", "deterministic", "eval_every", "ablation", "loss",
                    "ramp"});
    TrainOptions t;
    t.epochs = get_int(j, path, "epochs");
    t.batch_size_labeled = get_int(j, path, "batch_size_labeled");
    t.batch_size_unlabeled = get_int(j, path, "batch_size_unlabeled");
    t.learning_rate = get_double(j, path, "learning_rate");
    t.seed = get_u64(j, path, "seed");
    t.labeled_fraction = get_double(j, path, "labeled_fraction");
    t.deterministic = get_bool(j, path, "deterministic");
    t.eval_every = get_int(j, path, "eval_every");
    const json& ab = member(j, path, "ablation");
    reject_unknown(ab, path + ".ablation",
                   {"modality_specific_encoder", "cmc_strategy", "ccl_module"});
    t.ablation.modality_specific_encoder =
        get_bool(ab, path + ".ablation", "modality_specific_encoder");
    t.ablation.cmc_strategy = get_bool(ab, path + ".ablation", "cmc_strategy");
    t.ablation.ccl_module = get_bool(ab, path + ".ablation", "ccl_module");
    const json& lo = member(j, path, "loss");
    reject_unknown(lo, path + ".loss",
                   {"supervised_mode", "contrastive_denominator", "csc_labeled_only"});
    std::string sm = get_string(lo, path + ".loss", "supervised_mode");
    if (sm == "symmetric")
        t.loss.supervised_mode = SupervisedMode::symmetric;
    else if (sm == "literal")
        t.loss.supervised_mode = SupervisedMode::literal;
    else
        config_fail(path + ".loss.supervised_mode", "must be \"symmetric\" or \"literal\"");
    std::string cd = get_string(lo, path + ".loss", "contrastive_denominator");
    if (cd == "literal")
        t.loss.contrastive_denominator = ContrastiveDenominator::literal;
    else if (cd == "full")
        t.loss.contrastive_denominator = ContrastiveDenominator::full;
    else
        config_fail(path + ".loss.contrastive_denominator", "must be \"literal\" or \"full\"");
    t.loss.csc_labeled_only = get_bool(lo, path + ".loss", "csc_labeled_only");
    const json& ramp = member(j, path, "ramp");
    reject_unknown(ramp, path + ".ramp", {"base_weight", "steepness"});
    t.ramp_base_weight = get_double(ramp, path + ".ramp", "base_weight");
    t.ramp_steepness = get_double(ramp, path + ".ramp", "steepness");
    return t;
}

}  // namespace

void TrainConfig::validate() const {
    model.validate();
    try {
        data.phantom.validate();
        data.appearance_a.validate(data.phantom.num_classes);
        data.appearance_b.validate(data.phantom.num_classes);
        data.misalignment.validate();
    } catch (const Error& e) {
        fail(ErrorCode::config, std::string("config error in data section: ") + e.what());
    }
    require(data.n_train >= 1 && data.n_val >= 0 && data.n_test >= 0, ErrorCode::config,
            "config error at data: sample counts must be nonnegative with n_train >= 1");
    require(model.num_classes == data.phantom.num_classes, ErrorCode::config,
            "config error: model.num_classes must equal data.phantom.num_classes");
    require(model.input_shape == data.phantom.grid_shape, ErrorCode::config,
            "config error: model.input_shape must equal data.phantom.grid_shape");
    require(train.epochs >= 1, ErrorCode::config, "config error at train.epochs: must be >= 1");
    require(train.batch_size_labeled >= 1 && train.batch_size_unlabeled >= 1, ErrorCode::config,
            "config error at train: batch sizes must be >= 1");
    // learning_rate 0 is allowed: it is the documented no-op-step mode used
    // by determinism checks.
    require(train.learning_rate >= 0.0, ErrorCode::config,
            "config error at train.learning_rate: must be >= 0");
    require(train.labeled_fraction > 0.0 && train.labeled_fraction <= 1.0, ErrorCode::config,
            "config error at train.labeled_fraction: must lie in (0, 1]");
    require(train.eval_every >= 1, ErrorCode::config,
            "config error at train.eval_every: must be >= 1");
    require(train.ramp_base_weight > 0.0 && train.ramp_steepness >= 0.0, ErrorCode::config,
            "config error at train.ramp: base_weight > 0 and steepness >= 0 required");
}

TrainConfig config_from_json(const json& j) {
    reject_unknown(j, "$", {"model", "data", "train", "out_dir"});
    TrainConfig cfg;
    cfg.model = model_from_json(member(j, "$", "model"), "$.model");
    cfg.data = data_from_json(member(j, "$", "data"), "$.data");
    cfg.train = train_from_json(member(j, "$", "train"), "$.train");
    if (j.contains("out_dir")) cfg.out_dir = get_string(j, "$", "out_dir");
    cfg.validate();
    return cfg;
}

json config_to_json(const TrainConfig& cfg) {
    json j;
    j["model"] = json{{"patch_size", cfg.model.patch_size},
                      {"embed_dim", cfg.model.embed_dim},
                      {"num_blocks", cfg.model.num_blocks},
                      {"num_heads", cfg.model.num_heads},
                      {"adapter_dim", cfg.model.adapter_dim},
                      {"num_classes", cfg.model.num_classes},
                      {"input_shape", cfg.model.input_shape},
                      {"decoder_channels", cfg.model.decoder_channels},
                      {"mlp_ratio", cfg.model.mlp_ratio},
                      {"adapters_enabled", cfg.model.adapters_enabled},
                      {"mia_enabled", cfg.model.mia_enabled},
                      {"decoder_skip", cfg.model.decoder_skip}};
    j["data"] = json{{"dir", cfg.data.dir},
                     {"paired", cfg.data.paired},
                     {"n_train", cfg.data.n_train},
                     {"n_val", cfg.data.n_val},
                     {"n_test", cfg.data.n_test},
                     {"seed", cfg.data.seed},
                     {"phantom", json{{"grid_shape", cfg.data.phantom.grid_shape},
                                      {"num_classes", cfg.data.phantom.num_classes},
                                      {"organs_per_class", cfg.data.phantom.organs_per_class},
                                      {"size_range", cfg.data.phantom.size_range}}},
                     {"appearance_a", appearance_to_json(cfg.data.appearance_a)},
                     {"appearance_b", appearance_to_json(cfg.data.appearance_b)},
                     {"misalignment",
                      json{{"enabled", cfg.data.misalignment.enabled},
                           {"max_rotation_deg", cfg.data.misalignment.max_rotation_deg},
                           {"max_translation_vox", cfg.data.misalignment.max_translation_vox}}}};
    j["train"] =
        json{{"epochs", cfg.train.epochs},
             {"batch_size_labeled", cfg.train.batch_size_labeled},
             {"batch_size_unlabeled", cfg.train.batch_size_unlabeled},
             {"learning_rate", cfg.train.learning_rate},
             {"seed", cfg.train.seed},
             {"labeled_fraction", cfg.train.labeled_fraction},
             {"deterministic", cfg.train.deterministic},
             {"eval_every", cfg.train.eval_every},
             {"ablation",
              json{{"modality_specific_encoder", cfg.train.ablation.modality_specific_encoder},
                   {"cmc_strategy", cfg.train.ablation.cmc_strategy},
                   {"ccl_module", cfg.train.ablation.ccl_module}}},
             {"loss", json{{"supervised_mode", supervised_mode_name(cfg.train.loss.supervised_mode)},
                           {"contrastive_denominator",
                            contrastive_denominator_name(cfg.train.loss.contrastive_denominator)},
                           {"csc_labeled_only", cfg.train.loss.csc_labeled_only}}},
             {"ramp", json{{"base_weight", cfg.train.ramp_base_weight},
                           {"steepness", cfg.train.ramp_steepness}}}};
    j["out_dir"] = cfg.out_dir;
    return j;
}

TrainConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::not_found, path + ": cannot open config file");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::config, path + ": invalid JSON: " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const Error& e) {
        fail(e.code(), path + ": " + e.what());
    }
}

void apply_ablation_preset(TrainConfig& cfg, const std::string& preset) {
    AblationFlags f;
    if (preset == "baseline") {
        f = {false, false, false};
    } else if (preset == "encoder") {
        f = {true, false, false};
    } else if (preset == "cmc") {
        f = {true, true, false};
    } else if (preset == "full") {
        f = {true, true, true};
    } else {
        fail(ErrorCode::invalid_argument,
             "unknown ablation preset \"" + preset + "\" (expected baseline|encoder|cmc|full)");
    }
    cfg.train.ablation = f;
}

void apply_overrides(TrainConfig& cfg, const ConfigOverrides& o, bool seed_targets_data) {
    if (o.seed) {
        if (seed_targets_data)
            cfg.data.seed = *o.seed;
        else
            cfg.train.seed = *o.seed;
    }
    if (o.out_dir) cfg.out_dir = *o.out_dir;
    if (o.deterministic) cfg.train.deterministic = *o.deterministic;
    if (o.labeled_fraction) {
        cfg.train.labeled_fraction = *o.labeled_fraction;
        require(cfg.train.labeled_fraction > 0.0 && cfg.train.labeled_fraction <= 1.0,
                ErrorCode::invalid_argument, "--labeled-fraction must lie in (0, 1]");
    }
    if (o.ablation_preset) apply_ablation_preset(cfg, *o.ablation_preset);
}

const char* supervised_mode_name(SupervisedMode m) {
    return m == SupervisedMode::symmetric ? "symmetric" : "literal";
}

const char* contrastive_denominator_name(ContrastiveDenominator d) {
    return d == ContrastiveDenominator::literal ? "literal" : "full";
}

}  // namespace comodal
