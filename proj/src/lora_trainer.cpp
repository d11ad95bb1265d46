// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include "cba/lora_trainer.hpp"

#include <cmath>
#include <numeric>

#include "cba/error.hpp"
#include "cba/rng.hpp"

namespace cba::train {

void TrainConfig::validate() const {
    if (learning_rate < 0.0 || !std::isfinite(learning_rate)) throw ValueError("learning_rate must be >= 0");
    if (epochs < 1) throw ValueError("epochs must be >= 1");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (momentum < 0.0 || momentum >= 1.0) throw ValueError("momentum must lie in [0, 1)");
}

nlohmann::json to_json(const TrainConfig& cfg) {
    return {{"learning_rate", cfg.learning_rate},
            {"epochs", cfg.epochs},
            {"batch_size", cfg.batch_size},
            {"seed", cfg.seed},
            {"momentum", cfg.momentum},
            {"loss", "cross_entropy"}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.momentum = j.value("momentum", c.momentum);
    if (j.value("loss", std::string{"cross_entropy"}) != "cross_entropy") {
        throw ValueError("only cross_entropy loss is supported");
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const TrainReport& r) {
    nlohmann::json j = {{"initial_loss", r.initial_loss},
                        {"epoch_losses", r.epoch_losses},
                        {"final_accuracy", r.final_accuracy}};
    if (r.grad_check_max_rel_error) j["grad_check_max_rel_error"] = *r.grad_check_max_rel_error;
    return j;
}

adapter::AdapterSet fresh_adapter(const adapter::LoraConfig& config, int embed_dim, std::uint64_t seed) {
    auto set = adapter::make_zero_adapter(config, embed_dim, embed_dim);
    Rng rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(embed_dim));
    for (auto& m : set.modules) {
        for (Eigen::Index i = 0; i < m.A.size(); ++i) m.A.data()[i] = rng.uniform(-bound, bound);
    }
    set.round_to_storage();
    set.provenance = "trained";
    return set;
}

namespace {

void check_label(const model::ModelView& view, const LabeledSample& s) {
    if (s.label < 0 || s.label >= view.base->topology.num_outputs) {
        throw ValueError("label " + std::to_string(s.label) + " outside the model's outputs");
    }
}

double cross_entropy(const Vector& logits, int label) {
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return lse - logits[label];
}

}  // namespace

double sample_loss(const model::ModelView& view, const LabeledSample& sample) {
    check_label(view, sample);
    return cross_entropy(model::forward(view, sample.tokens), sample.label);
}

double mean_loss(const model::ModelView& view, std::span<const LabeledSample> corpus) {
    if (corpus.empty()) throw ValueError("empty corpus");
    double total = 0.0;
    for (const auto& s : corpus) total += sample_loss(view, s);
    return total / static_cast<double>(corpus.size());
}

double accuracy(const model::ModelView& view, std::span<const LabeledSample> corpus) {
    if (corpus.empty()) throw ValueError("empty corpus");
    std::size_t hits = 0;
    for (const auto& s : corpus) hits += model::argmax(model::forward(view, s.tokens)) == s.label;
    return static_cast<double>(hits) / static_cast<double>(corpus.size());
}

model::AdapterGradient analytic_gradient(const model::ModelView& view, const LabeledSample& sample) {
    check_label(view, sample);
    auto grad = model::AdapterGradient::zeros_like(*view.adapters);
    model::ForwardCache cache;
    const Vector logits = model::forward_cached(view, sample.tokens, cache);
    Vector g = model::softmax(logits);
    g[sample.label] -= 1.0;
    model::backward(view, cache, g, grad);
    return grad;
}

TrainResult train(const model::BaseModel& base, const adapter::AdapterSet& init,
                  std::span<const LabeledSample> corpus, const TrainConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) throw ValueError("training corpus is empty");
    model::check_compatible(base, init);

    TrainResult result{init, {}};
    adapter::AdapterSet& params = result.adapter;
    const model::ModelView view{&base, &params};
    for (const auto& s : corpus) check_label(view, s);

    result.report.initial_loss = mean_loss(view, corpus);
    if (!std::isfinite(result.report.initial_loss)) throw DivergenceError("initial loss is not finite");

    auto velocity = model::AdapterGradient::zeros_like(params);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            auto grad = model::AdapterGradient::zeros_like(params);
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = corpus[order[i]];
                model::ForwardCache cache;
                const Vector logits = model::forward_cached(view, s.tokens, cache);
                const double loss = cross_entropy(logits, s.label);
                if (!std::isfinite(loss)) {
                    throw DivergenceError("loss diverged at epoch " + std::to_string(epoch));
                }
                epoch_loss += loss;
                Vector g = model::softmax(logits);
                g[s.label] -= 1.0;
                model::backward(view, cache, g, grad);
            }
            grad.scale(1.0 / static_cast<double>(end - start));
            velocity.scale(cfg.momentum);
            velocity.add(grad);
            for (std::size_t m = 0; m < params.modules.size(); ++m) {
                params.modules[m].A -= cfg.learning_rate * velocity.dA[m];
                params.modules[m].B -= cfg.learning_rate * velocity.dB[m];
            }
        }
        result.report.epoch_losses.push_back(epoch_loss / static_cast<double>(corpus.size()));
    }
    params.round_to_storage();
    for (const auto& m : params.modules) {
        if (!m.A.allFinite() || !m.B.allFinite()) throw DivergenceError("adapter parameters became non-finite");
    }
    params.provenance = "trained";
    result.report.final_accuracy = accuracy(view, corpus);
    return result;
}

std::string adaptive_init_name(AdaptiveInit init) {
    return init == AdaptiveInit::kTargetA ? "target_a" : "random";
}

AdaptiveInit parse_adaptive_init(const std::string& name) {
    if (name == "target_a") return AdaptiveInit::kTargetA;
    if (name == "random") return AdaptiveInit::kRandom;
    throw ValueError("unknown adaptive init '" + name + "'");
}

TrainResult adaptive_train(const model::BaseModel& base, const adapter::AdapterSet& target,
                           std::span<const LabeledSample> poison_corpus, const TrainConfig& cfg, AdaptiveInit init) {
    const model::BaseModel merged = model::merge_into_base(base, target);
    adapter::AdapterSet start = fresh_adapter(target.config, base.topology.embed_dim, mix_seed(cfg.seed, 0xada9));
    if (init == AdaptiveInit::kTargetA) {
        for (auto& m : start.modules) m.A = target.find(m.layer_index, m.module_name)->A;
    }
    auto result = train(merged, start, poison_corpus, cfg);
    result.adapter.provenance = "poisoned";
    return result;
}

model::AdapterGradient numeric_gradient(const model::BaseModel& base, const adapter::AdapterSet& adapters,
                                        const LabeledSample& sample, double epsilon) {
    adapter::AdapterSet probe = adapters;
    const model::ModelView view{&base, &probe};
    auto grad = model::AdapterGradient::zeros_like(adapters);
    auto central = [&](double& param) {
        const double saved = param;
        param = saved + epsilon;
        const double up = sample_loss(view, sample);
        param = saved - epsilon;
        const double down = sample_loss(view, sample);
        param = saved;
        return (up - down) / (2.0 * epsilon);
    };
    for (std::size_t m = 0; m < probe.modules.size(); ++m) {
        auto& mod = probe.modules[m];
        for (Eigen::Index i = 0; i < mod.A.size(); ++i) grad.dA[m].data()[i] = central(mod.A.data()[i]);
        for (Eigen::Index i = 0; i < mod.B.size(); ++i) grad.dB[m].data()[i] = central(mod.B.data()[i]);
    }
    return grad;
}

GradCheckResult compare_gradients(const model::AdapterGradient& analytic, const model::AdapterGradient& numeric,
                                  double floor) {
    if (analytic.dA.size() != numeric.dA.size()) throw ShapeError("gradient layouts differ");
    GradCheckResult r;
    auto visit = [&](const Matrix& a, const Matrix& n) {
        if (a.rows() != n.rows() || a.cols() != n.cols()) throw ShapeError("gradient layouts differ");
        for (Eigen::Index i = 0; i < a.size(); ++i) {
            const double x = a.data()[i];
            const double y = n.data()[i];
            r.max_abs_analytic = std::max(r.max_abs_analytic, std::abs(x));
            r.max_abs_numeric = std::max(r.max_abs_numeric, std::abs(y));
            const double denom = std::max({std::abs(x), std::abs(y), floor});
            r.max_rel_error = std::max(r.max_rel_error, std::abs(x - y) / denom);
        }
    };
    for (std::size_t m = 0; m < analytic.dA.size(); ++m) {
        visit(analytic.dA[m], numeric.dA[m]);
        visit(analytic.dB[m], numeric.dB[m]);
    }
    return r;
}

GradCheckResult grad_check(const model::BaseModel& base, const adapter::AdapterSet& adapters,
                           const LabeledSample& sample, double epsilon) {
    if (!(epsilon > 0.0) || epsilon > 1e-2) throw ValueError("epsilon must lie in (0, 1e-2]");
    const model::ModelView view{&base, &adapters};
    return compare_gradients(analytic_gradient(view, sample), numeric_gradient(base, adapters, sample, epsilon));
}

}  // namespace cba::train
