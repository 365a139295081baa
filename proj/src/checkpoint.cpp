#include "deepclust/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace deepclust {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "deepclust-checkpoint";
constexpr int kVersion = 1;

const char* precision_tag() {
#ifdef DEEPCLUST_SINGLE_PRECISION
    return "f32";
#else
    return "f64";
#endif
}

// Parameters are stored little-endian on disk regardless of host order.
void write_values(std::ofstream& out, const Tensor& t) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(real_t)));
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) {
            char bytes[sizeof(real_t)];
            std::memcpy(bytes, t.data() + i, sizeof(real_t));
            for (std::size_t b = sizeof(real_t); b-- > 0;) out.put(bytes[b]);
        }
    }
}

void read_values(std::ifstream& in, Tensor& t, const std::string& what) {
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(real_t)));
    } else {
        for (std::size_t i = 0; i < t.size(); ++i) {
            char bytes[sizeof(real_t)];
            for (std::size_t b = sizeof(real_t); b-- > 0;) in.get(bytes[b]);
            std::memcpy(&t[i], bytes, sizeof(real_t));
        }
    }
    if (!in) throw std::runtime_error("checkpoint blob truncated while reading " + what);
}

json hyper_to_json(const LayerHyper& h) {
    return json{{"in_channels", h.in_channels}, {"out_channels", h.out_channels}, {"kernel_h", h.kernel_h},
                {"kernel_w", h.kernel_w},       {"stride", h.stride},             {"pad", h.pad},
                {"out_pad", h.out_pad},         {"fan_in", h.fan_in},             {"fan_out", h.fan_out},
                {"target_shape", h.target_shape}};
}

LayerHyper hyper_from_json(const json& j) {
    LayerHyper h;
    h.in_channels = j.at("in_channels").get<std::size_t>();
    h.out_channels = j.at("out_channels").get<std::size_t>();
    h.kernel_h = j.at("kernel_h").get<std::size_t>();
    h.kernel_w = j.at("kernel_w").get<std::size_t>();
    h.stride = j.at("stride").get<std::size_t>();
    h.pad = j.at("pad").get<std::size_t>();
    h.out_pad = j.at("out_pad").get<std::size_t>();
    h.fan_in = j.at("fan_in").get<std::size_t>();
    h.fan_out = j.at("fan_out").get<std::size_t>();
    h.target_shape = j.at("target_shape").get<std::vector<std::size_t>>();
    return h;
}

}  // namespace

void save_checkpoint(const std::string& stem, const std::vector<Layer>& layers,
                     const std::vector<CheckpointExtra>& extras, const nlohmann::json& meta) {
    json manifest;
    manifest["format"] = kFormat;
    manifest["version"] = kVersion;
    manifest["precision"] = precision_tag();
    manifest["meta"] = meta;

    json jl = json::array();
    for (const auto& l : layers) {
        jl.push_back(json{{"kind", layer_kind_name(l.kind)},
                          {"name", l.name},
                          {"hyper", hyper_to_json(l.hyper)},
                          {"weight_shape", l.weight.shape()},
                          {"bias_shape", l.bias.shape()}});
    }
    manifest["layers"] = std::move(jl);

    json je = json::array();
    for (const auto& e : extras) je.push_back(json{{"name", e.name}, {"shape", e.tensor.shape()}});
    manifest["extras"] = std::move(je);

    std::ofstream jf(stem + ".json");
    if (!jf) throw std::runtime_error("cannot write checkpoint manifest " + stem + ".json");
    jf << manifest.dump(2) << '\n';

    std::ofstream bf(stem + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write checkpoint blob " + stem + ".bin");
    for (const auto& l : layers) {
        write_values(bf, l.weight);
        write_values(bf, l.bias);
    }
    for (const auto& e : extras) write_values(bf, e.tensor);
    if (!bf) throw std::runtime_error("failed writing checkpoint blob " + stem + ".bin");
}

Checkpoint load_checkpoint(const std::string& stem) {
    std::ifstream jf(stem + ".json");
    if (!jf) throw std::runtime_error("missing checkpoint manifest " + stem + ".json");
    json manifest = json::parse(jf);

    if (manifest.at("format") != kFormat) throw std::runtime_error("not a checkpoint manifest: " + stem);
    if (manifest.at("version").get<int>() != kVersion) {
        throw std::runtime_error("unsupported checkpoint version in " + stem);
    }
    if (manifest.at("precision") != precision_tag()) {
        throw std::runtime_error("checkpoint precision " + manifest.at("precision").get<std::string>() +
                                 " does not match this build (" + precision_tag() + ")");
    }

    std::ifstream bf(stem + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("missing checkpoint blob " + stem + ".bin");

    Checkpoint ck;
    ck.meta = manifest.value("meta", json::object());
    for (const auto& jl : manifest.at("layers")) {
        Layer l;
        l.kind = layer_kind_from_name(jl.at("kind").get<std::string>());
        l.name = jl.at("name").get<std::string>();
        l.hyper = hyper_from_json(jl.at("hyper"));
        const auto wshape = jl.at("weight_shape").get<std::vector<std::size_t>>();
        const auto bshape = jl.at("bias_shape").get<std::vector<std::size_t>>();
        if (!wshape.empty()) {
            l.weight = Tensor(wshape);
            read_values(bf, l.weight, "weights of layer " + l.name);
        }
        if (!bshape.empty()) {
            l.bias = Tensor(bshape);
            read_values(bf, l.bias, "bias of layer " + l.name);
        }
        ck.layers.push_back(std::move(l));
    }
    for (const auto& je : manifest.at("extras")) {
        CheckpointExtra e;
        e.name = je.at("name").get<std::string>();
        e.tensor = Tensor(je.at("shape").get<std::vector<std::size_t>>());
        read_values(bf, e.tensor, "extra tensor " + e.name);
        ck.extras.push_back(std::move(e));
    }
    // The blob must be exhausted: a longer file means manifest/blob skew.
    bf.peek();
    if (!bf.eof()) throw std::runtime_error("checkpoint blob " + stem + ".bin is longer than its manifest");
    return ck;
}

}  // namespace deepclust
