#include "kglm/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "kglm/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "weights.bin is little-endian; big-endian hosts need byte swapping");

namespace kglm {

namespace {

nlohmann::json config_json(const EncoderConfig& c) {
    return {{"layers", c.layers},
            {"dim", c.dim},
            {"heads", c.heads},
            {"ffn_dim", c.ffn_dim},
            {"max_positions", c.max_positions},
            {"vocab_size", c.vocab_size},
            {"use_adapter", c.use_adapter},
            {"dropout", c.dropout}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.layers = j.at("layers").get<int>();
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.max_positions = j.at("max_positions").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.use_adapter = j.at("use_adapter").get<bool>();
    c.dropout = j.at("dropout").get<double>();
    return c;
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const std::string& dir, const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["config"] = config_json(model.config());
    manifest["dtype"] = "float32";
    manifest["step"] = meta.step;
    manifest["lesson"] = meta.lesson;
    manifest["variant"] = meta.variant;
    manifest["label"] = meta.label;
    manifest["seed"] = meta.seed;
    manifest["parent"] = meta.parent;

    nlohmann::json table = nlohmann::json::array();
    int64_t offset = 0;
    std::ofstream blob(std::filesystem::path(dir) / "weights.bin", std::ios::binary);
    if (!blob) throw Error("cannot write weights under '" + dir + "'");
    for (const Parameter<T>& p : model.params()) {
        table.push_back({{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}});
        for (T v : p.value.data) {
            const float f = static_cast<float>(v);
            blob.write(reinterpret_cast<const char*>(&f), sizeof(float));
        }
        offset += p.value.numel();
    }
    manifest["params"] = std::move(table);
    std::ofstream mf(std::filesystem::path(dir) / "manifest.json");
    if (!mf) throw Error("cannot write manifest under '" + dir + "'");
    mf << manifest.dump(2) << '\n';
}

template <typename T>
Model<T> load_checkpoint(const std::string& dir, CheckpointMeta* meta) {
    std::ifstream mf(std::filesystem::path(dir) / "manifest.json");
    if (!mf) throw ParseError("cannot open manifest under '" + dir + "'");
    nlohmann::json manifest = nlohmann::json::parse(mf);
    EncoderConfig cfg = config_from_json(manifest.at("config"));
    if (meta) {
        meta->step = manifest.value("step", int64_t(0));
        meta->lesson = manifest.value("lesson", 0);
        meta->variant = manifest.value("variant", "");
        meta->label = manifest.value("label", "");
        meta->seed = manifest.value("seed", uint64_t(0));
        meta->parent = manifest.value("parent", "");
    }

    Model<T> model(cfg, /*seed=*/0);
    std::ifstream blob(std::filesystem::path(dir) / "weights.bin", std::ios::binary);
    if (!blob) throw ParseError("cannot open weights under '" + dir + "'");

    size_t entries = 0;
    for (const auto& entry : manifest.at("params")) {
        ++entries;
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int64_t> shape = entry.at("shape").get<std::vector<int64_t>>();
        const int64_t offset = entry.at("offset").get<int64_t>();
        Parameter<T>* p = nullptr;
        try {
            p = &model.param(name);
        } catch (const LookupError&) {
            throw IntegrityError("checkpoint tensor '" + name +
                                 "' does not exist in the rebuilt model");
        }
        if (p->value.shape != shape) {
            throw IntegrityError("tensor '" + name + "' has shape " + shape_str(shape) +
                                 " in the manifest but " + shape_str(p->value.shape) +
                                 " in the rebuilt model");
        }
        blob.seekg(offset * static_cast<int64_t>(sizeof(float)));
        for (T& v : p->value.data) {
            float f = 0.0f;
            blob.read(reinterpret_cast<char*>(&f), sizeof(float));
            if (!blob) throw IntegrityError("weights truncated while reading '" + name + "'");
            v = static_cast<T>(f);
        }
    }
    if (entries != model.params().size()) {
        throw IntegrityError("manifest lists " + std::to_string(entries) + " tensors, model has " +
                             std::to_string(model.params().size()));
    }
    return model;
}

template void save_checkpoint<float>(const Model<float>&, const std::string&,
                                     const CheckpointMeta&);
template void save_checkpoint<double>(const Model<double>&, const std::string&,
                                      const CheckpointMeta&);
template Model<float> load_checkpoint<float>(const std::string&, CheckpointMeta*);
template Model<double> load_checkpoint<double>(const std::string&, CheckpointMeta*);

}  // namespace kglm
