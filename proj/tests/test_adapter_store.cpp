// Copyright (c) 2026, The CBA-LoRA Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "cba/adapter_store.hpp"
#include "cba/error.hpp"
#include "cba/model_engine.hpp"
#include "cba/safetensors.hpp"
#include "test_support.hpp"

namespace cba::adapter {
namespace {

using cba::testing::TempDir;

LoraConfig config(int r, double alpha, std::vector<std::string> modules, int layers) {
    LoraConfig c;
    c.rank = r;
    c.alpha = alpha;
    c.target_modules = std::move(modules);
    c.num_layers = layers;
    c.base_model_id = "test";
    return c;
}

AdapterSet random_set(const LoraConfig& c, int m, std::uint64_t seed) {
    AdapterSet s = make_zero_adapter(c, m, m);
    std::mt19937_64 gen(seed);
    for (auto& mod : s.modules) {
        mod.A = cba::testing::random_matrix(c.rank, m, gen);
        mod.B = cba::testing::random_matrix(c.rank, m, gen);
    }
    s.round_to_storage();
    return s;
}

TEST(AdapterStore, InlineNeuronCountForLargeAdapter) {
    EXPECT_EQ(inline_neuron_count(config(8, 32, {"q", "v"}, 32)), 512u);
    const AdapterSet s = make_zero_adapter(config(8, 32, {"q", "v"}, 32), 4, 4);
    EXPECT_EQ(s.inline_neuron_count(), 512u);
    EXPECT_EQ(s.neurons().size(), 512u);
}

TEST(AdapterStore, InlineNeuronCountFormula) {
    for (int r : {1, 4, 16, 64}) {
        for (int mods : {1, 2, 4}) {
            for (int l : {1, 24, 32}) {
                std::vector<std::string> names;
                for (int i = 0; i < mods; ++i) names.push_back("m" + std::to_string(i));
                EXPECT_EQ(inline_neuron_count(config(r, 1, names, l)), static_cast<std::size_t>(r * mods * l));
            }
        }
    }
}

TEST(AdapterStore, ConfigValidation) {
    EXPECT_THROW(config(0, 1, {"q"}, 1).validate(), ValueError);
    EXPECT_THROW(config(1, 0, {"q"}, 1).validate(), ValueError);
    EXPECT_THROW(config(1, 1, {}, 1).validate(), ValueError);
    EXPECT_THROW(config(1, 1, {"q"}, 0).validate(), ValueError);
    EXPECT_THROW(config(1, 1, {"q", "q"}, 1).validate(), ValueError);
    EXPECT_NO_THROW(config(1, 1, {"q"}, 1).validate());
}

TEST(AdapterStore, TensorName) {
    EXPECT_EQ(tensor_name(3, "q", 'A'), "layers.3.q.lora_A.weight");
    EXPECT_EQ(tensor_name(0, "v", 'B'), "layers.0.v.lora_B.weight");
}

TEST(AdapterStore, RoundTripFloat32) {
    TempDir dir;
    const AdapterSet s = random_set(config(4, 8, {"q", "v"}, 3), 6, 1);
    save_adapter(s, dir.path());
    const AdapterSet t = load_adapter(dir.path());
    ASSERT_EQ(t.modules.size(), s.modules.size());
    for (std::size_t i = 0; i < s.modules.size(); ++i) {
        EXPECT_EQ(t.modules[i].layer_index, s.modules[i].layer_index);
        EXPECT_EQ(t.modules[i].module_name, s.modules[i].module_name);
        EXPECT_TRUE(t.modules[i].A == s.modules[i].A);
        EXPECT_TRUE(t.modules[i].B == s.modules[i].B);
    }
    EXPECT_EQ(t.config.alpha, 8);
    EXPECT_EQ(t.config.base_model_id, "test");
    EXPECT_EQ(t.provenance, s.provenance);
    // The weights file path is accepted too.
    EXPECT_TRUE(load_adapter(dir / kWeightsFile).modules[0].A == s.modules[0].A);
}

TEST(AdapterStore, RoundTripFloat16) {
    TempDir dir;
    auto c = config(2, 4, {"q"}, 2);
    c.dtype = DType::kFloat16;
    const AdapterSet s = random_set(c, 5, 2);
    save_adapter(s, dir.path());
    const AdapterSet t = load_adapter(dir.path());
    for (std::size_t i = 0; i < s.modules.size(); ++i) {
        EXPECT_TRUE(t.modules[i].A == s.modules[i].A);
        EXPECT_TRUE(t.modules[i].B == s.modules[i].B);
    }
}

TEST(AdapterStore, Float16PayloadWidth) {
    auto c = config(3, 4, {"q", "v"}, 2);
    c.dtype = DType::kFloat16;
    const AdapterSet s = random_set(c, 5, 3);
    const auto file = safetensors::parse(serialize_weights(s));
    std::size_t payload = 0;
    for (const auto& t : file.tensors) {
        EXPECT_EQ(t.dtype, DType::kFloat16);
        EXPECT_EQ(t.data.size(), 2u * static_cast<std::size_t>(t.element_count()));
        payload += t.data.size();
    }
    EXPECT_EQ(payload, 2u * s.parameter_count());
}

TEST(AdapterStore, SaveTwiceIsByteIdentical) {
    TempDir d1("a1"), d2("a2");
    const AdapterSet s = random_set(config(4, 8, {"q", "v"}, 2), 6, 4);
    save_adapter(s, d1.path());
    save_adapter(s, d2.path());
    EXPECT_EQ(safetensors::read_bytes(d1 / kWeightsFile), safetensors::read_bytes(d2 / kWeightsFile));
    EXPECT_EQ(safetensors::read_bytes(d1 / kConfigFile), safetensors::read_bytes(d2 / kConfigFile));
}

TEST(AdapterStore, TensorOrderIsSorted) {
    const AdapterSet s = random_set(config(2, 2, {"v", "q"}, 2), 3, 5);
    const auto file = safetensors::parse(serialize_weights(s));
    std::vector<std::string> names;
    for (const auto& t : file.tensors) names.push_back(t.name);
    const std::vector<std::string> want{"layers.0.q.lora_A.weight", "layers.0.q.lora_B.weight",
                                        "layers.0.v.lora_A.weight", "layers.0.v.lora_B.weight",
                                        "layers.1.q.lora_A.weight", "layers.1.q.lora_B.weight",
                                        "layers.1.v.lora_A.weight", "layers.1.v.lora_B.weight"};
    EXPECT_EQ(names, want);
}

TEST(AdapterStore, EmptyModulesRejected) {
    TempDir dir;
    AdapterSet s = random_set(config(2, 2, {"q"}, 1), 3, 6);
    s.modules.clear();
    EXPECT_THROW(save_adapter(s, dir.path()), ValueError);
}

TEST(AdapterStore, RowCountMismatchIsShapeError) {
    auto c = config(8, 16, {"q"}, 1);
    AdapterSet s = random_set(c, 4, 7);
    const auto weights = serialize_weights(s);
    auto file = safetensors::parse(weights);
    Matrix a7 = Matrix::Zero(7, 4);
    for (auto& t : file.tensors) {
        if (t.name == "layers.0.q.lora_A.weight") {
            t.shape = {7, 4};
            t.data = encode_matrix(a7, DType::kFloat32);
        }
    }
    EXPECT_THROW(parse_adapter(safetensors::serialize(file), to_json(c)), ShapeError);
}

TEST(AdapterStore, MissingAndUnexpectedTensors) {
    auto c = config(2, 2, {"q"}, 1);
    AdapterSet s = random_set(c, 3, 8);
    auto file = safetensors::parse(serialize_weights(s));
    auto renamed = file;
    renamed.tensors[0].name = "layers.0.k.lora_A.weight";
    EXPECT_THROW(parse_adapter(safetensors::serialize(renamed), to_json(c)), FormatError);
    auto missing = file;
    missing.tensors.pop_back();
    EXPECT_THROW(parse_adapter(safetensors::serialize(missing), to_json(c)), FormatError);
}

TEST(AdapterStore, InconsistentModuleShapes) {
    AdapterSet s = random_set(config(2, 2, {"q"}, 2), 3, 9);
    s.modules[1].A = Matrix::Zero(2, 4);
    s.modules[1].B = Matrix::Zero(2, 4);
    EXPECT_THROW(s.validate(), ShapeError);
}

TEST(AdapterStore, MissingConfigIsIoError) {
    TempDir dir;
    EXPECT_THROW(load_adapter(dir.path()), IoError);
}

TEST(AdapterStore, ConfigJsonKeys) {
    const auto j = to_json(config(8, 32, {"q", "v"}, 32));
    for (const char* key : {"r", "alpha", "target_modules", "num_layers", "base_model_id", "dtype"}) {
        EXPECT_TRUE(j.contains(key)) << key;
    }
    const LoraConfig back = config_from_json(j);
    EXPECT_EQ(back.rank, 8);
    EXPECT_EQ(back.target_modules, (std::vector<std::string>{"q", "v"}));
}

TEST(MergedDelta, ZeroA) {
    auto c = config(2, 4, {"q"}, 1);
    AdapterSet s = random_set(c, 3, 10);
    s.modules[0].A.setZero();
    EXPECT_TRUE(merged_delta(s.modules[0], c).isZero(0));
}

TEST(MergedDelta, ScalarExamples) {
    AdapterModule m;
    m.A = Matrix::Constant(1, 1, 2.0);
    m.B = Matrix::Constant(1, 1, 3.0);
    EXPECT_EQ(merged_delta(m, config(1, 1, {"q"}, 1))(0, 0), 6.0);
    EXPECT_EQ(merged_delta(m, config(1, 2, {"q"}, 1))(0, 0), 12.0);
    auto unscaled = config(1, 2, {"q"}, 1);
    unscaled.use_scaling = false;
    EXPECT_EQ(merged_delta(m, unscaled)(0, 0), 6.0);
}

TEST(MergedDelta, MatchesComposition) {
    auto c = config(3, 6, {"q"}, 1);
    const AdapterSet s = random_set(c, 5, 11);
    const Matrix d = merged_delta(s.modules[0], c);
    ASSERT_EQ(d.rows(), 5);
    ASSERT_EQ(d.cols(), 5);
    std::mt19937_64 gen(12);
    for (int t = 0; t < 20; ++t) {
        const Vector x = cba::testing::random_matrix(5, 1, gen).col(0);
        const Vector want = c.scaling() * (s.modules[0].B.transpose() * (s.modules[0].A * x));
        EXPECT_LE((d * x - want).norm(), 1e-12 * (1 + want.norm()));
    }
}

TEST(MergedDelta, ConsistentWithForward) {
    // Identity activation, no residual, head = I: logits are exactly the slot output.
    const auto base = cba::testing::linear_model(5, 7, 13);
    const auto adapters = cba::testing::random_adapter(base.topology, 3, 6.0, 14);
    const Matrix delta = merged_delta(adapters.modules[0], adapters.config);
    for (int tok = 0; tok < 7; ++tok) {
        const Vector x = base.embedding.row(tok).transpose();
        const Vector with = model::forward({&base, &adapters}, {tok});
        const Vector without = model::forward({&base, nullptr}, {tok});
        const Vector want = delta * x;
        EXPECT_LE((with - without - want).norm(), 1e-6 * std::max(1.0, want.norm()));
    }
}

}  // namespace
}  // namespace cba::adapter
