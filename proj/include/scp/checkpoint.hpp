#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "scp/binio.hpp"
#include "scp/error.hpp"
#include "scp/nn.hpp"

namespace scp {

// Model checkpoint: magic "SCP1", u32 little-endian JSON header length, the
// JSON architecture header, then every parameter tensor as raw little-endian
// float32 in declaration order (conv weight, conv bias, ..., head weight,
// head bias). Round-trips are bit-exact.

inline constexpr char checkpoint_magic[4] = {'S', 'C', 'P', '1'};

inline nlohmann::ordered_json arch_json(const ToyCnn& model) {
    nlohmann::ordered_json arch;
    arch["in_channels"] = model.in_channels;
    arch["in_height"] = model.in_height;
    arch["in_width"] = model.in_width;
    arch["num_classes"] = model.num_classes;
    arch["tap_layer"] = model.tap_layer;
    arch["conv"] = nlohmann::ordered_json::array();
    for (const auto& l : model.conv) {
        arch["conv"].push_back({{"out_channels", l.out_channels()},
                                {"in_channels", l.in_channels()},
                                {"kernel_h", l.kernel_h()},
                                {"kernel_w", l.kernel_w()},
                                {"pad", l.pad},
                                {"pool", l.pool}});
    }
    return arch;
}

inline void save_model(const std::string& path, const ToyCnn& model,
                       const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
    model.validate();
    nlohmann::ordered_json header;
    header["format_version"] = 1;
    header["arch"] = arch_json(model);
    header["meta"] = meta;
    const std::string hdr = header.dump();

    std::string out;
    out.append(checkpoint_magic, 4);
    binio::put_u32(out, static_cast<std::uint32_t>(hdr.size()));
    out += hdr;
    auto put_tensor = [&out](const Tensor& t) {
        for (std::int64_t i = 0; i < t.size(); ++i) binio::put_f32(out, t[i]);
    };
    for (const auto& l : model.conv) {
        put_tensor(l.weight);
        put_tensor(l.bias);
    }
    put_tensor(model.head.weight);
    put_tensor(model.head.bias);
    binio::write_file(path, out);
}

struct LoadedModel {
    ToyCnn model;
    nlohmann::json meta;
};

inline LoadedModel load_model(const std::string& path) {
    binio::Reader r(binio::read_file(path), path);
    r.expect_magic(checkpoint_magic);
    const std::uint32_t hdr_len = r.get_u32("header length");
    const std::string hdr = r.get_bytes(hdr_len, "JSON header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(format_error::code::bad_header,
                           path + ": unparsable JSON header: " + e.what());
    }
    try {
        if (header.at("format_version").get<int>() != 1) {
            throw format_error(format_error::code::bad_version,
                               path + ": unsupported checkpoint format version");
        }
        const auto& arch = header.at("arch");
        LoadedModel out;
        ToyCnn& m = out.model;
        m.in_channels = arch.at("in_channels").get<int>();
        m.in_height = arch.at("in_height").get<int>();
        m.in_width = arch.at("in_width").get<int>();
        m.num_classes = arch.at("num_classes").get<int>();
        m.tap_layer = arch.at("tap_layer").get<int>();
        for (const auto& lj : arch.at("conv")) {
            ConvLayer l;
            l.pad = lj.at("pad").get<int>();
            l.pool = lj.at("pool").get<bool>();
            const int oc = lj.at("out_channels").get<int>();
            const int ic = lj.at("in_channels").get<int>();
            const int kh = lj.at("kernel_h").get<int>();
            const int kw = lj.at("kernel_w").get<int>();
            if (oc < 1 || ic < 1 || kh < 1 || kw < 1) {
                throw format_error(format_error::code::bad_header,
                                   path + ": invalid conv layer dimensions in header");
            }
            l.weight = Tensor({oc, ic, kh, kw});
            l.bias = Tensor({oc});
            m.conv.push_back(std::move(l));
        }
        if (m.conv.empty()) {
            throw format_error(format_error::code::bad_header, path + ": no conv layers");
        }
        m.head.weight = Tensor({m.num_classes, m.conv.back().out_channels()});
        m.head.bias = Tensor({m.num_classes});

        for (auto& l : m.conv) {
            r.get_f32s(l.weight.data(), static_cast<std::size_t>(l.weight.size()), "conv weight");
            r.get_f32s(l.bias.data(), static_cast<std::size_t>(l.bias.size()), "conv bias");
        }
        r.get_f32s(m.head.weight.data(), static_cast<std::size_t>(m.head.weight.size()),
                   "head weight");
        r.get_f32s(m.head.bias.data(), static_cast<std::size_t>(m.head.bias.size()), "head bias");
        r.expect_end();

        if (header.contains("meta")) out.meta = header.at("meta");
        try {
            m.validate();
        } catch (const config_error& e) {
            throw format_error(format_error::code::bad_header,
                               path + ": inconsistent architecture: " + e.what());
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw format_error(format_error::code::bad_header,
                           path + ": malformed header: " + e.what());
    }
}

} // namespace scp
