#include "muten/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <fstream>
#include <iterator>
#include <json.hpp>

namespace muten {

namespace {

using nlohmann::json;

constexpr std::uint8_t kMagic[4] = {'M', 'U', 'T', 'N'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

json header_of(const Network& net) {
    json h;
    h["format"] = "muten-model";
    h["input_shape"] = net.input_shape();
    h["num_classes"] = net.num_classes();
    h["temperature"] = net.temperature();
    json layers = json::array();
    for (const auto& l : net.layers()) {
        json j;
        j["kind"] = to_string(l.kind);
        switch (l.kind) {
            case LayerKind::dense: j["units"] = l.units; break;
            case LayerKind::conv2d:
                j["out_channels"] = l.out_channels;
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                j["padding"] = l.padding;
                break;
            case LayerKind::maxpool2d:
                j["kernel"] = l.kernel;
                j["stride"] = l.stride;
                break;
            default: break;
        }
        if (l.trainable()) {
            j["weights_shape"] = l.weights.shape;
            j["bias_shape"] = l.bias.shape;
        }
        j["out_shape"] = l.out_shape;
        layers.push_back(std::move(j));
    }
    h["layers"] = std::move(layers);
    h["training"] = {{"epochs", net.training.epochs},
                     {"learning_rate", net.training.learning_rate},
                     {"temperature", net.training.temperature},
                     {"seed", net.training.seed},
                     {"test_accuracy", net.training.test_accuracy}};
    if (net.mutation) {
        const auto& m = *net.mutation;
        h["mutation"] = {{"operator", m.op},
                         {"ratio", m.ratio},
                         {"seed", m.seed},
                         {"parent_hash", m.parent_hash},
                         {"probe_accuracy", m.probe_accuracy}};
    }
    return h;
}

Network network_from_header(const json& h) {
    if (h.value("format", std::string{}) != "muten-model") throw FormatError("header is not a muten model");
    std::vector<Layer> layers;
    for (const auto& j : h.at("layers")) {
        Layer l;
        l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
        switch (l.kind) {
            case LayerKind::dense: l.units = j.at("units").get<std::size_t>(); break;
            case LayerKind::conv2d:
                l.out_channels = j.at("out_channels").get<std::size_t>();
                l.kernel = j.at("kernel").get<std::size_t>();
                l.stride = j.at("stride").get<std::size_t>();
                l.padding = j.at("padding").get<std::size_t>();
                break;
            case LayerKind::maxpool2d:
                l.kernel = j.at("kernel").get<std::size_t>();
                l.stride = j.at("stride").get<std::size_t>();
                break;
            default: break;
        }
        layers.push_back(std::move(l));
    }
    Network net(h.at("input_shape").get<Shape>(), std::move(layers), h.at("temperature").get<double>());
    if (h.at("num_classes").get<std::size_t>() != net.num_classes()) {
        throw FormatError("header num_classes disagrees with architecture");
    }
    if (h.contains("training")) {
        const auto& t = h["training"];
        net.training.epochs = t.value("epochs", std::size_t{0});
        net.training.learning_rate = t.value("learning_rate", 0.0);
        net.training.temperature = t.value("temperature", 1.0);
        net.training.seed = t.value("seed", std::uint64_t{0});
        net.training.test_accuracy = t.value("test_accuracy", -1.0);
    }
    if (h.contains("mutation")) {
        const auto& m = h["mutation"];
        net.mutation = MutationInfo{m.at("operator").get<std::string>(), m.at("ratio").get<double>(),
                                    m.at("seed").get<std::uint64_t>(), m.at("parent_hash").get<std::string>(),
                                    m.value("probe_accuracy", -1.0)};
    }
    return net;
}

}  // namespace

std::uint32_t crc32(const std::uint8_t* data, std::size_t size) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = ::crc32(crc, data, chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::string model_header_json(const Network& net) { return header_of(net).dump(2); }

std::vector<std::uint8_t> encode_model(const Network& net) {
    const std::string header = header_of(net).dump();
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kModelFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    const std::size_t payload_start = out.size();
    for (const auto& l : net.layers()) {
        for (const auto* t : {&l.weights, &l.bias}) {
            for (float v : t->data) put_u32(out, std::bit_cast<std::uint32_t>(v));
        }
    }
    put_u32(out, crc32(out.data() + payload_start, out.size() - payload_start));
    return out;
}

Network decode_model(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12) throw TruncatedError("model file shorter than its fixed preamble");
    if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
        throw FormatError("bad magic: not a MUTN model file");
    }
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kModelFormatVersion) {
        throw VersionError("unsupported model format version " + std::to_string(version) + " (expected " +
                           std::to_string(kModelFormatVersion) + ")");
    }
    const std::size_t header_len = get_u32(bytes.data() + 8);
    if (bytes.size() < 12 + header_len) throw TruncatedError("model header truncated");

    Network net;
    try {
        net = network_from_header(json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len)));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed model header: ") + e.what());
    } catch (const ShapeError& e) {
        throw FormatError(std::string("inconsistent model architecture: ") + e.what());
    }

    const std::size_t payload_start = 12 + header_len;
    const std::size_t payload_len = 4 * (net.weight_count() + [&] {
        std::size_t n = 0;
        for (const auto& l : net.layers()) n += l.bias.size();
        return n;
    }());
    if (bytes.size() < payload_start + payload_len + 4) throw TruncatedError("model payload truncated");
    if (bytes.size() > payload_start + payload_len + 4) throw FormatError("trailing bytes after model checksum");

    const std::uint32_t stored = get_u32(bytes.data() + payload_start + payload_len);
    if (stored != crc32(bytes.data() + payload_start, payload_len)) {
        throw ChecksumError("model payload checksum mismatch");
    }
    const std::uint8_t* p = bytes.data() + payload_start;
    for (auto& l : net.mutable_layers()) {
        for (auto* t : {&l.weights, &l.bias}) {
            for (auto& v : t->data) {
                v = std::bit_cast<float>(get_u32(p));
                p += 4;
            }
        }
    }
    return net;
}

void save_model(const Network& net, const std::filesystem::path& path) {
    const auto bytes = encode_model(net);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("failed writing '" + path.string() + "'");
}

Network load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_model(bytes);
}

}  // namespace muten
