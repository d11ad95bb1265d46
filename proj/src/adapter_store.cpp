// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/adapter_store.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "cba/error.hpp"
#include "cba/safetensors.hpp"

namespace cba::adapter {

namespace fs = std::filesystem;

int LoraConfig::module_index(const std::string& name) const {
    const auto it = std::find(target_modules.begin(), target_modules.end(), name);
    return it == target_modules.end() ? -1 : static_cast<int>(it - target_modules.begin());
}

void LoraConfig::validate() const {
    if (rank < 1) throw ValueError("LoRA rank must be >= 1");
    if (!(alpha > 0.0)) throw ValueError("LoRA alpha must be > 0");
    if (target_modules.empty()) throw ValueError("target_modules must not be empty");
    if (num_layers < 1) throw ValueError("num_layers must be >= 1");
    std::set<std::string> unique(target_modules.begin(), target_modules.end());
    if (unique.size() != target_modules.size()) throw ValueError("target_modules contains duplicates");
}

nlohmann::json to_json(const LoraConfig& config) {
    return {{"r", config.rank},
            {"alpha", config.alpha},
            {"target_modules", config.target_modules},
            {"num_layers", config.num_layers},
            {"base_model_id", config.base_model_id},
            {"dtype", dtype_name(config.dtype)},
            {"use_scaling", config.use_scaling}};
}

LoraConfig config_from_json(const nlohmann::json& j) {
    LoraConfig c;
    try {
        c.rank = j.at("r").get<int>();
        c.alpha = j.at("alpha").get<double>();
        c.target_modules = j.at("target_modules").get<std::vector<std::string>>();
        c.num_layers = j.at("num_layers").get<int>();
        c.base_model_id = j.value("base_model_id", std::string{});
        c.dtype = parse_dtype(j.value("dtype", std::string{"float32"}));
        c.use_scaling = j.value("use_scaling", true);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed adapter config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t inline_neuron_count(const LoraConfig& config) {
    return static_cast<std::size_t>(config.rank) * config.target_modules.size() *
           static_cast<std::size_t>(config.num_layers);
}

std::size_t AdapterSet::inline_neuron_count() const {
    return adapter::inline_neuron_count(config);
}

std::size_t AdapterSet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& m : modules) n += static_cast<std::size_t>(m.A.size() + m.B.size());
    return n;
}

const AdapterModule* AdapterSet::find(int layer, const std::string& module_name) const {
    for (const auto& m : modules) {
        if (m.layer_index == layer && m.module_name == module_name) return &m;
    }
    return nullptr;
}

AdapterModule* AdapterSet::find(int layer, const std::string& module_name) {
    return const_cast<AdapterModule*>(std::as_const(*this).find(layer, module_name));
}

std::size_t AdapterSet::slot_of(int layer, const std::string& module_name) const {
    for (std::size_t i = 0; i < modules.size(); ++i) {
        if (modules[i].layer_index == layer && modules[i].module_name == module_name) return i;
    }
    throw ValueError("no adapter module at layer " + std::to_string(layer) + " named '" + module_name + "'");
}

std::vector<NeuronId> AdapterSet::neurons() const {
    std::vector<NeuronId> out;
    out.reserve(inline_neuron_count());
    for (const auto& m : modules) {
        for (int j = 0; j < config.rank; ++j) out.push_back({m.layer_index, m.module_name, j});
    }
    return out;
}

void AdapterSet::validate() const {
    config.validate();
    if (modules.empty()) throw ValueError("adapter set has no modules");
    const auto expected = static_cast<std::size_t>(config.num_layers) * config.target_modules.size();
    if (modules.size() != expected) {
        throw ShapeError("adapter set has " + std::to_string(modules.size()) + " modules, config implies " +
                         std::to_string(expected));
    }
    std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> widths;
    std::set<std::pair<int, std::string>> seen;
    for (const auto& m : modules) {
        const std::string where = "layers." + std::to_string(m.layer_index) + "." + m.module_name;
        if (m.layer_index < 0 || m.layer_index >= config.num_layers) {
            throw ShapeError(where + ": layer index out of range");
        }
        if (config.module_index(m.module_name) < 0) {
            throw ShapeError(where + ": module not in target_modules");
        }
        if (!seen.insert({m.layer_index, m.module_name}).second) {
            throw ShapeError(where + ": duplicate module");
        }
        if (m.A.rows() != config.rank || m.B.rows() != config.rank) {
            throw ShapeError(where + ": A has " + std::to_string(m.A.rows()) + " rows and B has " +
                             std::to_string(m.B.rows()) + ", expected r=" + std::to_string(config.rank));
        }
        const auto [it, fresh] = widths.emplace(m.module_name, std::make_pair(m.A.cols(), m.B.cols()));
        if (!fresh && it->second != std::make_pair(m.A.cols(), m.B.cols())) {
            throw ShapeError(where + ": shape differs from other '" + m.module_name + "' modules");
        }
    }
}

void AdapterSet::round_to_storage() {
    for (auto& m : modules) {
        round_to_dtype(m.A, config.dtype);
        round_to_dtype(m.B, config.dtype);
    }
}

AdapterSet make_zero_adapter(const LoraConfig& config, int in_dim, int out_dim) {
    config.validate();
    AdapterSet set;
    set.config = config;
    for (int l = 0; l < config.num_layers; ++l) {
        for (const auto& name : config.target_modules) {
            set.modules.push_back({l, name, Matrix::Zero(config.rank, in_dim), Matrix::Zero(config.rank, out_dim)});
        }
    }
    return set;
}

Matrix merged_delta(const AdapterModule& module, const LoraConfig& config) {
    if (module.A.rows() != module.B.rows()) {
        throw ShapeError("A and B row counts differ");
    }
    return config.scaling() * (module.B.transpose() * module.A);
}

std::string tensor_name(int layer, const std::string& module_name, char which) {
    return "layers." + std::to_string(layer) + "." + module_name + ".lora_" + std::string(1, which) + ".weight";
}

namespace {

fs::path weights_path(const fs::path& path) {
    return fs::is_directory(path) ? path / kWeightsFile : path;
}

fs::path config_path(const fs::path& path) {
    return fs::is_directory(path) ? path / kConfigFile : path.parent_path() / kConfigFile;
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const AdapterSet& set) {
    set.validate();
    std::vector<const AdapterModule*> order;
    for (const auto& m : set.modules) order.push_back(&m);
    std::sort(order.begin(), order.end(), [](const AdapterModule* a, const AdapterModule* b) {
        return std::tie(a->layer_index, a->module_name) < std::tie(b->layer_index, b->module_name);
    });
    safetensors::File file;
    // Provenance lives in the config file so the weights depend on the tensors alone.
    file.metadata = {{"format", "pt"}};
    for (const auto* m : order) {
        for (const char which : {'A', 'B'}) {
            const Matrix& w = which == 'A' ? m->A : m->B;
            file.tensors.push_back({tensor_name(m->layer_index, m->module_name, which), set.config.dtype,
                                    {w.rows(), w.cols()}, encode_matrix(w, set.config.dtype)});
        }
    }
    return safetensors::serialize(file);
}

AdapterSet parse_adapter(std::span<const std::uint8_t> weights, const nlohmann::json& config_json) {
    AdapterSet set;
    set.config = config_from_json(config_json);
    const auto file = safetensors::parse(weights);
    set.provenance = file.metadata.value("provenance", std::string{"clean"});
    set.provenance = config_json.value("provenance", set.provenance);

    std::set<std::string> used;
    for (int l = 0; l < set.config.num_layers; ++l) {
        for (const auto& name : set.config.target_modules) {
            AdapterModule m{l, name, {}, {}};
            for (const char which : {'A', 'B'}) {
                const auto tname = tensor_name(l, name, which);
                const auto* t = file.find(tname);
                if (t == nullptr) throw FormatError("missing tensor '" + tname + "'");
                if (t->shape.size() != 2) throw ShapeError("tensor '" + tname + "' is not 2-D");
                if (t->dtype != set.config.dtype) {
                    throw FormatError("tensor '" + tname + "' dtype differs from config dtype");
                }
                (which == 'A' ? m.A : m.B) = decode_matrix(t->data, t->dtype, t->shape[0], t->shape[1]);
                used.insert(tname);
            }
            set.modules.push_back(std::move(m));
        }
    }
    for (const auto& t : file.tensors) {
        if (!used.count(t.name)) throw FormatError("unexpected tensor '" + t.name + "'");
    }
    set.validate();
    return set;
}

AdapterSet load_adapter(const fs::path& path) {
    const auto cfg_file = config_path(path);
    std::ifstream in(cfg_file);
    if (!in) throw IoError("cannot open adapter config '" + cfg_file.string() + "'");
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("malformed adapter config '" + cfg_file.string() + "': " + e.what());
    }
    return parse_adapter(safetensors::read_bytes(weights_path(path)), cfg);
}

void save_adapter(const AdapterSet& set, const fs::path& dir) {
    const auto bytes = serialize_weights(set);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create adapter directory '" + dir.string() + "'");
    safetensors::write_bytes(dir / kWeightsFile, bytes);

    auto cfg = to_json(set.config);
    cfg["provenance"] = set.provenance;
    std::ofstream out(dir / kConfigFile, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + (dir / kConfigFile).string() + "'");
    out << cfg.dump(2) << '\n';
}

bool same_architecture(const AdapterSet& lhs, const AdapterSet& rhs) {
    if (lhs.config.rank != rhs.config.rank || lhs.config.target_modules != rhs.config.target_modules ||
        lhs.config.num_layers != rhs.config.num_layers || lhs.modules.size() != rhs.modules.size()) {
        return false;
    }
    for (std::size_t i = 0; i < lhs.modules.size(); ++i) {
        const auto& a = lhs.modules[i];
        const auto& b = rhs.modules[i];
        if (a.layer_index != b.layer_index || a.module_name != b.module_name || a.A.rows() != b.A.rows() ||
            a.A.cols() != b.A.cols() || a.B.rows() != b.B.rows() || a.B.cols() != b.B.cols()) {
            return false;
        }
    }
    return true;
}

}  // namespace cba::adapter
