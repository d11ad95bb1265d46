// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/model_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cba/error.hpp"
#include "cba/rng.hpp"
#include "cba/safetensors.hpp"

namespace cba::model {

namespace fs = std::filesystem;

namespace {

std::string_view activation_name(Activation a) {
    return a == Activation::kTanh ? "tanh" : "identity";
}

Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::kTanh;
    if (s == "identity") return Activation::kIdentity;
    throw FormatError("unknown activation '" + s + "'");
}

}  // namespace

void Topology::validate() const {
    if (vocab_size < 1 || embed_dim < 1 || num_layers < 1 || num_outputs < 1) {
        throw ShapeError("topology dimensions must be positive");
    }
    if (slot_names.empty()) throw ShapeError("topology needs at least one slot per layer");
    std::set<std::string> unique(slot_names.begin(), slot_names.end());
    if (unique.size() != slot_names.size()) throw ShapeError("slot names must be unique per layer");
    if (head_mode == HeadMode::kGenerate && num_outputs != vocab_size) {
        throw ShapeError("generation head must have vocab_size outputs");
    }
    if (!output_labels.empty() && static_cast<int>(output_labels.size()) != num_outputs) {
        throw ShapeError("output_labels size differs from num_outputs");
    }
    if (!vocab.empty() && static_cast<int>(vocab.size()) != vocab_size) {
        throw ShapeError("vocab word list size differs from vocab_size");
    }
}

nlohmann::json to_json(const Topology& t) {
    return {{"model_id", t.model_id},
            {"vocab_size", t.vocab_size},
            {"embed_dim", t.embed_dim},
            {"num_layers", t.num_layers},
            {"slots", t.slot_names},
            {"activation", activation_name(t.activation)},
            {"residual", t.residual},
            {"head_mode", t.head_mode == HeadMode::kClassify ? "classify" : "generate"},
            {"num_outputs", t.num_outputs},
            {"output_labels", t.output_labels},
            {"vocab", t.vocab}};
}

Topology topology_from_json(const nlohmann::json& j) {
    Topology t;
    try {
        t.model_id = j.value("model_id", t.model_id);
        t.vocab_size = j.at("vocab_size").get<int>();
        t.embed_dim = j.at("embed_dim").get<int>();
        t.num_layers = j.at("num_layers").get<int>();
        t.slot_names = j.at("slots").get<std::vector<std::string>>();
        t.activation = parse_activation(j.value("activation", std::string{"tanh"}));
        t.residual = j.value("residual", true);
        const auto mode = j.value("head_mode", std::string{"classify"});
        if (mode != "classify" && mode != "generate") throw FormatError("unknown head_mode '" + mode + "'");
        t.head_mode = mode == "classify" ? HeadMode::kClassify : HeadMode::kGenerate;
        t.num_outputs = j.at("num_outputs").get<int>();
        t.output_labels = j.value("output_labels", std::vector<std::string>{});
        t.vocab = j.value("vocab", std::vector<std::string>{});
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed topology: ") + e.what());
    }
    t.validate();
    return t;
}

int BaseModel::slot_index(const std::string& name) const {
    const auto& names = topology.slot_names;
    const auto it = std::find(names.begin(), names.end(), name);
    return it == names.end() ? -1 : static_cast<int>(it - names.begin());
}

void BaseModel::validate() const {
    topology.validate();
    const int m = topology.embed_dim;
    if (embedding.rows() != topology.vocab_size || embedding.cols() != m) throw ShapeError("embedding shape");
    if (static_cast<int>(layers.size()) != topology.num_layers) throw ShapeError("layer count");
    for (const auto& layer : layers) {
        if (layer.size() != topology.slot_names.size()) throw ShapeError("slot count");
        for (const auto& a : layer) {
            if (a.W.rows() != m || a.W.cols() != m || a.bias.size() != m) throw ShapeError("slot affine shape");
        }
    }
    if (head.rows() != topology.num_outputs || head.cols() != m || head_bias.size() != topology.num_outputs) {
        throw ShapeError("head shape");
    }
}

bool BaseModel::operator==(const BaseModel& o) const {
    if (to_json(topology) != to_json(o.topology) || embedding != o.embedding || head != o.head ||
        head_bias != o.head_bias || layers.size() != o.layers.size()) {
        return false;
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t s = 0; s < layers[l].size(); ++s) {
            if (layers[l][s].W != o.layers[l][s].W || layers[l][s].bias != o.layers[l][s].bias) return false;
        }
    }
    return true;
}

BaseModel make_random_base(const Topology& topology, std::uint64_t seed, const InitScales& scales) {
    topology.validate();
    Rng rng(seed);
    const int m = topology.embed_dim;
    const double inv = 1.0 / std::sqrt(static_cast<double>(m));
    // Uniform(-a, a) with a = sqrt(3) * std so the scales read as standard deviations.
    auto fill = [&](Matrix& w, double std_dev) {
        const double a = std::sqrt(3.0) * std_dev;
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = round_to_dtype(rng.uniform(-a, a), DType::kFloat32);
    };
    BaseModel base;
    base.topology = topology;
    base.embedding.resize(topology.vocab_size, m);
    fill(base.embedding, scales.embedding);
    for (int l = 0; l < topology.num_layers; ++l) {
        std::vector<Affine> slots;
        for (std::size_t s = 0; s < topology.slot_names.size(); ++s) {
            Affine a{Matrix(m, m), Vector(m)};
            fill(a.W, scales.weight * inv);
            Matrix b(m, 1);
            fill(b, scales.bias);
            a.bias = b.col(0);
            slots.push_back(std::move(a));
        }
        base.layers.push_back(std::move(slots));
    }
    base.head.resize(topology.num_outputs, m);
    fill(base.head, scales.head * inv);
    base.head_bias = Vector::Zero(topology.num_outputs);
    return base;
}

void save_base(const BaseModel& base, const fs::path& dir) {
    base.validate();
    safetensors::File file;
    file.metadata = {{"format", "pt"}, {"model_id", base.topology.model_id}};
    auto add = [&](const std::string& name, const Matrix& w) {
        file.tensors.push_back({name, DType::kFloat32, {w.rows(), w.cols()}, encode_matrix(w, DType::kFloat32)});
    };
    auto add_vec = [&](const std::string& name, const Vector& v) {
        const Matrix row = v.transpose();
        file.tensors.push_back({name, DType::kFloat32, {v.size()}, encode_matrix(row, DType::kFloat32)});
    };
    add("embed.weight", base.embedding);
    for (int l = 0; l < base.topology.num_layers; ++l) {
        for (std::size_t s = 0; s < base.topology.slot_names.size(); ++s) {
            const auto prefix = "layers." + std::to_string(l) + "." + base.topology.slot_names[s];
            add(prefix + ".weight", base.layers[l][s].W);
            add_vec(prefix + ".bias", base.layers[l][s].bias);
        }
    }
    add("head.weight", base.head);
    add_vec("head.bias", base.head_bias);

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create base model directory '" + dir.string() + "'");
    safetensors::write_file(dir / kBaseWeightsFile, file);
    std::ofstream out(dir / kTopologyFile, std::ios::trunc);
    if (!out) throw IoError("cannot write topology under '" + dir.string() + "'");
    out << to_json(base.topology).dump(2) << '\n';
}

BaseModel load_base(const fs::path& dir) {
    std::ifstream in(dir / kTopologyFile);
    if (!in) throw IoError("cannot open '" + (dir / kTopologyFile).string() + "'");
    nlohmann::json tj;
    try {
        tj = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("malformed topology: ") + e.what());
    }
    BaseModel base;
    base.topology = topology_from_json(tj);
    const auto file = safetensors::read_file(dir / kBaseWeightsFile);
    auto get = [&](const std::string& name) -> Matrix {
        const auto* t = file.find(name);
        if (t == nullptr) throw FormatError("base model is missing tensor '" + name + "'");
        const auto rows = t->shape.size() == 1 ? 1 : t->shape.at(0);
        const auto cols = t->shape.size() == 1 ? t->shape[0] : t->shape.at(1);
        return decode_matrix(t->data, t->dtype, rows, cols);
    };
    base.embedding = get("embed.weight");
    for (int l = 0; l < base.topology.num_layers; ++l) {
        std::vector<Affine> slots;
        for (const auto& name : base.topology.slot_names) {
            const auto prefix = "layers." + std::to_string(l) + "." + name;
            slots.push_back({get(prefix + ".weight"), get(prefix + ".bias").row(0).transpose()});
        }
        base.layers.push_back(std::move(slots));
    }
    base.head = get("head.weight");
    base.head_bias = get("head.bias").row(0).transpose();
    base.validate();
    return base;
}

void check_compatible(const BaseModel& base, const adapter::AdapterSet& adapters) {
    const auto& cfg = adapters.config;
    if (cfg.num_layers != base.topology.num_layers) {
        throw ShapeError("adapter has " + std::to_string(cfg.num_layers) + " layers, base has " +
                         std::to_string(base.topology.num_layers));
    }
    for (const auto& name : cfg.target_modules) {
        if (base.slot_index(name) < 0) throw ShapeError("base model has no slot '" + name + "'");
    }
    const auto m = base.topology.embed_dim;
    for (const auto& mod : adapters.modules) {
        if (mod.A.cols() != m || mod.B.cols() != m || mod.A.rows() != cfg.rank || mod.B.rows() != cfg.rank) {
            throw ShapeError("adapter module layers." + std::to_string(mod.layer_index) + "." + mod.module_name +
                             " does not fit embed_dim " + std::to_string(m));
        }
    }
}

void NeuronScalingMap::set(const adapter::NeuronId& id, double factor) {
    if (id.neuron < 0) throw ValueError("neuron index must be non-negative");
    factors_[id] = factor;
}

double NeuronScalingMap::get(const adapter::NeuronId& id) const {
    const auto it = factors_.find(id);
    return it == factors_.end() ? 1.0 : it->second;
}

namespace {

Vector pooled_embedding(const BaseModel& base, const Tokens& tokens) {
    if (tokens.empty()) throw ValueError("empty token sequence");
    Vector x = Vector::Zero(base.topology.embed_dim);
    for (const int t : tokens) {
        if (t < 0 || t >= base.topology.vocab_size) {
            throw ValueError("token " + std::to_string(t) + " outside vocab of size " +
                             std::to_string(base.topology.vocab_size));
        }
        x += base.embedding.row(t).transpose();
    }
    return x / static_cast<double>(tokens.size());
}

struct RunOptions {
    const NeuronScalingMap* scaling = nullptr;
    InlineActivationTrace* trace = nullptr;
    ForwardCache* cache = nullptr;
};

// Single forward implementation so traced/scaled/cached variants are bit-identical.
Vector run(const ModelView& view, const Tokens& tokens, const RunOptions& opt) {
    if (view.base == nullptr) throw ValueError("model view has no base model");
    const BaseModel& base = *view.base;
    const adapter::AdapterSet* ad = view.adapters;
    if (ad != nullptr) check_compatible(base, *ad);
    if (opt.scaling != nullptr && ad != nullptr) {
        for (const auto& [id, f] : opt.scaling->factors()) {
            if (id.neuron >= ad->config.rank || ad->find(id.layer, id.module) == nullptr) {
                throw ValueError("scaling map names neuron " + std::to_string(id.neuron) + " of layers." +
                                 std::to_string(id.layer) + "." + id.module + ", which is not attached");
            }
        }
    }
    const double scale = ad != nullptr ? ad->config.scaling() : 0.0;
    const bool tanh_act = base.topology.activation == Activation::kTanh;

    Vector x = pooled_embedding(base, tokens);
    if (opt.cache != nullptr) opt.cache->steps.clear();

    for (int l = 0; l < base.topology.num_layers; ++l) {
        for (std::size_t s = 0; s < base.topology.slot_names.size(); ++s) {
            const auto& name = base.topology.slot_names[s];
            const Affine& aff = base.layers[l][s];
            Vector z = aff.W * x + aff.bias;
            const adapter::AdapterModule* mod = ad != nullptr ? ad->find(l, name) : nullptr;
            Vector v;
            if (mod != nullptr) {
                v = mod->A * x;
                if (opt.trace != nullptr) opt.trace->entries.push_back({l, name, v});
                Vector scaled = v;
                if (opt.scaling != nullptr && !opt.scaling->empty()) {
                    for (int j = 0; j < scaled.size(); ++j) scaled[j] *= opt.scaling->get({l, name, j});
                }
                z += scale * (mod->B.transpose() * scaled);
            }
            Vector act = tanh_act ? Vector(z.array().tanh()) : z;
            if (opt.cache != nullptr) {
                SlotCache sc;
                sc.input = x;
                sc.inline_act = v;
                sc.pre_act = z;
                sc.module = mod;
                if (mod != nullptr) sc.adapter_slot = ad->slot_of(l, name);
                opt.cache->steps.push_back(std::move(sc));
            }
            x = base.topology.residual ? Vector(x + act) : act;
        }
    }
    Vector logits = base.head * x + base.head_bias;
    if (opt.cache != nullptr) {
        opt.cache->final_state = x;
        opt.cache->logits = logits;
    }
    return logits;
}

}  // namespace

Vector forward(const ModelView& view, const Tokens& tokens) {
    return run(view, tokens, {});
}

TracedOutput forward_traced(const ModelView& view, const Tokens& tokens) {
    TracedOutput out;
    out.logits = run(view, tokens, {.trace = &out.trace});
    return out;
}

Vector forward_scaled(const ModelView& view, const Tokens& tokens, const NeuronScalingMap& scaling) {
    return run(view, tokens, {.scaling = &scaling});
}

Vector forward_cached(const ModelView& view, const Tokens& tokens, ForwardCache& cache) {
    return run(view, tokens, {.cache = &cache});
}

int argmax(const Vector& logits) {
    int best = 0;
    for (int i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) best = i;
    }
    return best;
}

Vector softmax(const Vector& logits) {
    const double mx = logits.maxCoeff();
    Vector e = (logits.array() - mx).exp();
    return e / e.sum();
}

Tokens decode_greedy(const ModelView& view, const Tokens& prompt, int max_new_tokens) {
    if (view.base->topology.head_mode != HeadMode::kGenerate) {
        throw ValueError("decode_greedy needs a generation-mode head");
    }
    Tokens context = prompt;
    Tokens produced;
    for (int i = 0; i < max_new_tokens; ++i) {
        const int next = argmax(forward(view, context));
        produced.push_back(next);
        context.push_back(next);
    }
    return produced;
}

BaseModel merge_into_base(const BaseModel& base, const adapter::AdapterSet& adapters) {
    check_compatible(base, adapters);
    BaseModel merged = base;
    for (const auto& mod : adapters.modules) {
        const int s = merged.slot_index(mod.module_name);
        merged.layers[mod.layer_index][s].W += adapter::merged_delta(mod, adapters.config);
    }
    return merged;
}

Tokens tokenize(const Topology& topology, const std::string& text) {
    if (topology.vocab.empty()) throw ValueError("topology has no vocabulary word list");
    Tokens out;
    std::istringstream words(text);
    std::string w;
    while (words >> w) {
        const auto it = std::find(topology.vocab.begin(), topology.vocab.end(), w);
        if (it == topology.vocab.end()) throw ValueError("word '" + w + "' is not in the vocabulary");
        out.push_back(static_cast<int>(it - topology.vocab.begin()));
    }
    return out;
}

std::string detokenize(const Topology& topology, const Tokens& tokens) {
    std::string out;
    for (const int t : tokens) {
        if (t < 0 || t >= static_cast<int>(topology.vocab.size())) throw ValueError("token outside vocabulary");
        if (!out.empty()) out.push_back(' ');
        out += topology.vocab[t];
    }
    return out;
}

AdapterGradient AdapterGradient::zeros_like(const adapter::AdapterSet& set) {
    AdapterGradient g;
    for (const auto& m : set.modules) {
        g.dA.push_back(Matrix::Zero(m.A.rows(), m.A.cols()));
        g.dB.push_back(Matrix::Zero(m.B.rows(), m.B.cols()));
    }
    return g;
}

void AdapterGradient::add(const AdapterGradient& other, double weight) {
    for (std::size_t i = 0; i < dA.size(); ++i) {
        dA[i] += weight * other.dA[i];
        dB[i] += weight * other.dB[i];
    }
}

void AdapterGradient::scale(double factor) {
    for (std::size_t i = 0; i < dA.size(); ++i) {
        dA[i] *= factor;
        dB[i] *= factor;
    }
}

void backward(const ModelView& view, const ForwardCache& cache, const Vector& grad_logits, AdapterGradient& grad) {
    const BaseModel& base = *view.base;
    const double scale = view.adapters != nullptr ? view.adapters->config.scaling() : 0.0;
    const bool tanh_act = base.topology.activation == Activation::kTanh;
    const std::size_t slots = base.topology.slot_names.size();

    Vector g = base.head.transpose() * grad_logits;  // d loss / d final state
    for (std::size_t step = cache.steps.size(); step-- > 0;) {
        const SlotCache& sc = cache.steps[step];
        const Affine& aff = base.layers[step / slots][step % slots];
        Vector gz = g;
        if (tanh_act) gz = gz.array() * (1.0 - sc.pre_act.array().tanh().square());
        Vector gu = aff.W.transpose() * gz;
        if (sc.module != nullptr) {
            // z += s * B^T v  =>  dB = s * v gz^T,  dv = s * B gz,  dA = dv u^T
            grad.dB[sc.adapter_slot].noalias() += scale * sc.inline_act * gz.transpose();
            const Vector gv = scale * (sc.module->B * gz);
            grad.dA[sc.adapter_slot].noalias() += gv * sc.input.transpose();
            gu += sc.module->A.transpose() * gv;
        }
        g = base.topology.residual ? Vector(g + gu) : gu;
    }
}

}  // namespace cba::model
