#include "opmodenet/errors.hpp"
#include "opmodenet/mnn.hpp"

#include <nlohmann/json.hpp>

namespace opmodenet::mnn {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "opmodenet-mnn";
constexpr int kVersion = 1;

json layers_to_json(const Layers& layers) {
    json out = json::array();
    for (const auto& l : layers) {
        out.push_back({{"rows", l.w.rows()},
                       {"cols", l.w.cols()},
                       {"w", std::vector<double>(l.w.data(), l.w.data() + l.w.size())},
                       {"b", std::vector<double>(l.b.data(), l.b.data() + l.b.size())}});
    }
    return out;
}

void layers_from_json(const json& j, Layers& layers) {
    if (!j.is_array() || j.size() != kLayerCount) throw ValidationError("model file: wrong layer count");
    for (std::size_t i = 0; i < kLayerCount; ++i) {
        const auto& e = j[i];
        const auto w = e.at("w").get<std::vector<double>>();
        const auto b = e.at("b").get<std::vector<double>>();
        if (e.at("rows").get<Eigen::Index>() != layers[i].w.rows() || e.at("cols").get<Eigen::Index>() != layers[i].w.cols() ||
            static_cast<Eigen::Index>(w.size()) != layers[i].w.size() || static_cast<Eigen::Index>(b.size()) != layers[i].b.size())
            throw ShapeError("model file: layer " + std::to_string(i) + " does not match the layout");
        std::copy(w.begin(), w.end(), layers[i].w.data());
        std::copy(b.begin(), b.end(), layers[i].b.data());
        if (!layers[i].w.allFinite() || !layers[i].b.allFinite())
            throw ValidationError("model file: non-finite parameter in layer " + std::to_string(i));
    }
}

}  // namespace

std::string model_to_json(const ModelFile& model) {
    const auto& p = model.params;
    const auto& lay = p.layout;
    const auto& c = model.config;
    json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["encoder_hash"] = model.encoder_hash;
    j["seed"] = p.seed;
    j["layout"] = {{"input_dim", lay.input_dim},   {"shared", lay.shared},
                   {"trunk", lay.trunk},           {"heads", lay.heads},
                   {"activation", to_string(lay.activation)}, {"dropout", lay.dropout}};
    j["training"] = {{"learning_rate", c.adam.learning_rate},
                     {"beta1", c.adam.beta1},
                     {"beta2", c.adam.beta2},
                     {"epsilon", c.adam.epsilon},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"dropout", c.dropout},
                     {"train_fraction", c.train_fraction},
                     {"seed", c.seed},
                     {"shuffle", c.shuffle},
                     {"loss", to_string(c.loss)},
                     {"activation", to_string(c.activation)}};
    j["parameters"] = layers_to_json(p.layers);
    j["optimizer"] = {{"step", p.step}, {"m", layers_to_json(p.adam_m)}, {"v", layers_to_json(p.adam_v)}};
    j["history"] = {{"train_loss", model.history.train_loss}, {"test_loss", model.history.test_loss}};
    return j.dump(1) + "\n";
}

ModelFile model_from_json(std::string_view text, std::optional<std::string> expected_encoder_hash) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model file: ") + e.what());
    }
    try {
        if (j.at("format").get<std::string>() != kFormat || j.at("version").get<int>() != kVersion)
            throw ValidationError("model file: unsupported format or version");
        ModelFile m;
        m.encoder_hash = j.at("encoder_hash").get<std::string>();
        if (expected_encoder_hash && *expected_encoder_hash != m.encoder_hash)
            throw ValidationError("model was trained with a different encoder",
                                  {"model " + m.encoder_hash, "encoder " + *expected_encoder_hash});
        const auto& jl = j.at("layout");
        NetworkLayout lay;
        lay.input_dim = jl.at("input_dim").get<std::size_t>();
        lay.shared = jl.at("shared").get<std::array<std::size_t, 2>>();
        lay.trunk = jl.at("trunk").get<std::size_t>();
        lay.heads = jl.at("heads").get<std::array<std::size_t, kModules>>();
        lay.activation = parse_activation(jl.at("activation").get<std::string>());
        lay.dropout = jl.at("dropout").get<double>();
        lay.validate();

        const auto& jt = j.at("training");
        auto& c = m.config;
        c.adam.learning_rate = jt.at("learning_rate").get<double>();
        c.adam.beta1 = jt.at("beta1").get<double>();
        c.adam.beta2 = jt.at("beta2").get<double>();
        c.adam.epsilon = jt.at("epsilon").get<double>();
        c.batch_size = jt.at("batch_size").get<std::size_t>();
        c.epochs = jt.at("epochs").get<std::size_t>();
        c.dropout = jt.at("dropout").get<double>();
        c.train_fraction = jt.at("train_fraction").get<double>();
        c.seed = jt.at("seed").get<std::uint64_t>();
        c.shuffle = jt.at("shuffle").get<bool>();
        c.loss = parse_loss(jt.at("loss").get<std::string>());
        c.activation = parse_activation(jt.at("activation").get<std::string>());

        auto& p = m.params;
        p.layout = lay;
        p.seed = j.at("seed").get<std::uint64_t>();
        p.layers = zero_layers(lay);
        p.adam_m = zero_layers(lay);
        p.adam_v = zero_layers(lay);
        layers_from_json(j.at("parameters"), p.layers);
        p.step = j.at("optimizer").at("step").get<std::uint64_t>();
        layers_from_json(j.at("optimizer").at("m"), p.adam_m);
        layers_from_json(j.at("optimizer").at("v"), p.adam_v);
        m.history.train_loss = j.at("history").at("train_loss").get<std::vector<double>>();
        m.history.test_loss = j.at("history").at("test_loss").get<std::vector<double>>();
        return m;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("model file: ") + e.what());
    }
}

}  // namespace opmodenet::mnn
