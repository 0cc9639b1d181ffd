#pragma once

#include <sstream>
#include <string>

#include "ncdlab/datagen.hpp"
#include "ncdlab/trainer.hpp"

namespace ncdlab {

/// Everything one experiment needs: the training recipe and the dataset
/// recipe. Serialized as flat key=value text ('#' starts a comment).
struct RunConfig {
    TrainConfig train = TrainConfig::desk_preset();
    SyntheticSpec data;

    void validate() const {
        train.validate();
        data.validate();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream is(value);
    T out;
    is >> out;
    if (is.fail() || !is.eof())
        throw config_error("config key '" + key + "': cannot parse value '" + value + "'");
    return out;
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto f = [&] { return detail::parse_number<float>(key, value); };
    auto i = [&] { return detail::parse_number<int>(key, value); };
    auto u = [&] { return detail::parse_number<std::uint64_t>(key, value); };

    if (key == "epochs") cfg.train.epochs = i();
    else if (key == "batch_size") cfg.train.batch_size = i();
    else if (key == "lr0") cfg.train.lr0 = f();
    else if (key == "lr_min") cfg.train.lr_min = f();
    else if (key == "momentum") cfg.train.momentum = f();
    else if (key == "weight_decay") cfg.train.weight_decay = f();
    else if (key == "num_seeds") cfg.train.num_seeds = i();
    else if (key == "base_seed") cfg.train.base_seed = u();
    else if (key == "jobs") cfg.train.jobs = i();
    else if (key == "tau_u") cfg.train.loss.tau_u = f();
    else if (key == "tau_c") cfg.train.loss.tau_c = f();
    else if (key == "tau_s") cfg.train.loss.tau_s = f();
    else if (key == "tau_t") cfg.train.loss.tau_t = f();
    else if (key == "lambda") cfg.train.loss.lambda = f();
    else if (key == "eps_reg") cfg.train.loss.eps_reg = f();
    else if (key == "w") cfg.train.loss.w = f();
    else if (key == "lambda_a") cfg.train.loss.lambda_a = f();
    else if (key == "lambda_b") cfg.train.loss.lambda_b = f();
    else if (key == "lambda_c") cfg.train.loss.lambda_c = f();
    else if (key == "mlp_hidden") cfg.train.dims.mlp_hidden = i();
    else if (key == "d_h") cfg.train.dims.d_h = i();
    else if (key == "d_r") cfg.train.dims.d_r = i();
    else if (key == "conv1_channels") cfg.train.dims.conv1_channels = i();
    else if (key == "conv2_channels") cfg.train.dims.conv2_channels = i();
    else if (key == "image_size") cfg.data.image_size = i();
    else if (key == "num_classes") cfg.data.num_classes = i();
    else if (key == "samples_per_class") cfg.data.samples_per_class = i();
    else if (key == "corruption") cfg.data.corruption = corruption_from_string(value);
    else if (key == "severity") cfg.data.severity = i();
    else if (key == "shift_mode") cfg.data.shift_mode = shift_from_string(value);
    else if (key == "data_seed") cfg.data.seed = u();
    else throw config_error("unknown config key: '" + key + "'");
}

inline RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw config_error("config line " + std::to_string(lineno) + ": expected key=value");
        apply_config_entry(cfg, detail::trim(line.substr(0, eq)),
                           detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "# training\n"
       << "epochs = " << cfg.train.epochs << "\n"
       << "batch_size = " << cfg.train.batch_size << "\n"
       << "lr0 = " << cfg.train.lr0 << "\n"
       << "lr_min = " << cfg.train.lr_min << "\n"
       << "momentum = " << cfg.train.momentum << "\n"
       << "weight_decay = " << cfg.train.weight_decay << "\n"
       << "num_seeds = " << cfg.train.num_seeds << "\n"
       << "base_seed = " << cfg.train.base_seed << "\n"
       << "jobs = " << cfg.train.jobs << "\n"
       << "# objective\n"
       << "tau_u = " << cfg.train.loss.tau_u << "\n"
       << "tau_c = " << cfg.train.loss.tau_c << "\n"
       << "tau_s = " << cfg.train.loss.tau_s << "\n"
       << "tau_t = " << cfg.train.loss.tau_t << "\n"
       << "lambda = " << cfg.train.loss.lambda << "\n"
       << "eps_reg = " << cfg.train.loss.eps_reg << "\n"
       << "w = " << cfg.train.loss.w << "\n"
       << "lambda_a = " << cfg.train.loss.lambda_a << "\n"
       << "lambda_b = " << cfg.train.loss.lambda_b << "\n"
       << "lambda_c = " << cfg.train.loss.lambda_c << "\n"
       << "# model\n"
       << "mlp_hidden = " << cfg.train.dims.mlp_hidden << "\n"
       << "d_h = " << cfg.train.dims.d_h << "\n"
       << "d_r = " << cfg.train.dims.d_r << "\n"
       << "conv1_channels = " << cfg.train.dims.conv1_channels << "\n"
       << "conv2_channels = " << cfg.train.dims.conv2_channels << "\n"
       << "# dataset\n"
       << "image_size = " << cfg.data.image_size << "\n"
       << "num_classes = " << cfg.data.num_classes << "\n"
       << "samples_per_class = " << cfg.data.samples_per_class << "\n"
       << "corruption = " << to_string(cfg.data.corruption) << "\n"
       << "severity = " << cfg.data.severity << "\n"
       << "shift_mode = " << to_string(cfg.data.shift_mode) << "\n"
       << "data_seed = " << cfg.data.seed << "\n";
    return os.str();
}

}  // namespace ncdlab
