#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "scp/binio.hpp"
#include "scp/error.hpp"
#include "scp/nn.hpp"
#include "scp/rng.hpp"
#include "scp/tensor.hpp"

namespace scp {

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct Dataset {
    Tensor images;                    // [N, C, H, W]
    std::vector<int> labels;          // class labels y
    std::vector<std::uint8_t> groups; // sensitive labels c in {0,1}
    int num_classes = 2;
    std::string split = "train";

    int size() const { return static_cast<int>(labels.size()); }

    SampleBatch gather(const std::vector<int>& idx) const {
        const int c = images.dim(1), h = images.dim(2), w = images.dim(3);
        const std::size_t stride = static_cast<std::size_t>(c) * h * w;
        SampleBatch b;
        b.images = Tensor({static_cast<int>(idx.size()), c, h, w});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const float* src = images.data() + static_cast<std::size_t>(idx[i]) * stride;
            std::copy(src, src + stride, b.images.data() + i * stride);
            b.labels.push_back(labels[static_cast<std::size_t>(idx[i])]);
            b.groups.push_back(groups[static_cast<std::size_t>(idx[i])]);
        }
        return b;
    }
};

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

// Each image is a class-specific random pattern, plus (explicit mode, group 1
// only) an intensity offset on a corner patch, plus Gaussian pixel noise. In
// the train split the sensitive label follows the class parity with
// probability (1+rho)/2; the eval split is always generated with rho = 0 so
// group gaps measure model behavior rather than label skew.
struct SyntheticConfig {
    int num_samples = 512; // per split
    int num_classes = 2;
    int channels = 1;
    int height = 16;
    int width = 16;
    double spurious_strength = 0.0; // rho, train-split class/attribute correlation
    double group_imbalance = 0.5;   // marginal P(c=1) of the independent draw
    double noise_std = 0.5;
    bool explicit_attribute = true; // render the attribute into the image
    std::uint64_t seed = 0;

    void validate() const {
        if (num_samples < 4) throw config_error("num_samples must be >= 4");
        if (num_classes < 2 || num_classes > 255) {
            throw config_error("num_classes must be in [2,255]");
        }
        if (channels < 1 || height < 2 || width < 2) {
            throw config_error("image size must be at least 1x2x2");
        }
        if (spurious_strength < 0.0 || spurious_strength > 1.0) {
            throw config_error("spurious_strength (rho) must be in [0,1]");
        }
        if (group_imbalance <= 0.0 || group_imbalance >= 1.0) {
            throw config_error("group_imbalance must be in (0,1)");
        }
        if (noise_std < 0.0) throw config_error("noise_std must be >= 0");
    }
};

struct SyntheticData {
    Dataset train;
    Dataset eval;
};

namespace detail {

inline constexpr double synth_motif_scale = 1.0;
inline constexpr double synth_cue_strength = 2.5;
inline constexpr int synth_num_stamps = 12;

// Each class pattern is a small class-specific motif stamped at fixed
// class-specific positions: a repeated local texture a conv filter can match
// wherever it appears, so the class signal survives global average pooling.
// The top-left corner is left free for the attribute cue.
inline std::vector<std::vector<float>> synth_class_patterns(const SyntheticConfig& cfg) {
    Rng rng(mix_seed(cfg.seed, 0x7a77e521));
    const std::size_t d = static_cast<std::size_t>(cfg.channels) * cfg.height * cfg.width;
    const int ms = std::min({3, cfg.height, cfg.width}); // motif side
    const int cue_h = std::max(1, cfg.height / 4);
    const int cue_w = std::max(1, cfg.width / 4);
    std::vector<std::vector<float>> patterns(static_cast<std::size_t>(cfg.num_classes));
    for (auto& p : patterns) {
        p.assign(d, 0.0f);
        std::vector<double> motif(static_cast<std::size_t>(cfg.channels) * ms * ms);
        for (auto& v : motif) v = rng.normal(0.0, synth_motif_scale);
        for (int stamp = 0; stamp < synth_num_stamps; ++stamp) {
            int sy = 0, sx = 0;
            // keep stamps off the cue corner; give up on tiny images where
            // no position can avoid it
            for (int attempt = 0; attempt < 16; ++attempt) {
                sy = rng.uniform_int(0, cfg.height - ms);
                sx = rng.uniform_int(0, cfg.width - ms);
                if (!(sy < cue_h && sx < cue_w)) break;
            }
            for (int c = 0; c < cfg.channels; ++c) {
                for (int y = 0; y < ms; ++y) {
                    for (int x = 0; x < ms; ++x) {
                        p[(static_cast<std::size_t>(c) * cfg.height + sy + y) * cfg.width + sx +
                          x] += static_cast<float>(
                            motif[(static_cast<std::size_t>(c) * ms + y) * ms + x]);
                    }
                }
            }
        }
    }
    return patterns;
}

// The attribute cue: a flat intensity offset on the top-left corner patch of
// the first channel. Shape-distinct from the zero-mean class motifs, so cue
// detectors and class detectors occupy different channels.
inline std::vector<float> synth_attribute_cue(const SyntheticConfig& cfg) {
    const std::size_t d =
        static_cast<std::size_t>(cfg.channels) * cfg.height * cfg.width;
    std::vector<float> cue(d, 0.0f);
    const int ph = std::max(1, cfg.height / 4);
    const int pw = std::max(1, cfg.width / 4);
    for (int y = 0; y < ph; ++y) {
        for (int x = 0; x < pw; ++x) {
            cue[static_cast<std::size_t>(y) * cfg.width + x] =
                static_cast<float>(synth_cue_strength);
        }
    }
    return cue;
}

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / std::sqrt(na * nb);
}

inline Dataset synth_split(const SyntheticConfig& cfg, double rho,
                           const std::vector<std::vector<float>>& patterns,
                           const std::vector<float>& cue, std::uint64_t stream_salt,
                           std::string split_name) {
    Rng rng(mix_seed(cfg.seed, stream_salt));
    const std::size_t d =
        static_cast<std::size_t>(cfg.channels) * cfg.height * cfg.width;
    Dataset ds;
    ds.split = std::move(split_name);
    ds.num_classes = cfg.num_classes;
    ds.images = Tensor({cfg.num_samples, cfg.channels, cfg.height, cfg.width});
    for (int i = 0; i < cfg.num_samples; ++i) {
        const int y = rng.uniform_int(0, cfg.num_classes - 1);
        const int aligned = y % 2;
        const bool follow = rng.bernoulli(rho);
        const bool indep = rng.bernoulli(cfg.group_imbalance);
        const std::uint8_t c =
            follow ? static_cast<std::uint8_t>(aligned) : static_cast<std::uint8_t>(indep);
        float* img = ds.images.data() + static_cast<std::size_t>(i) * d;
        const auto& pat = patterns[static_cast<std::size_t>(y)];
        const bool add_cue = cfg.explicit_attribute && c == 1;
        for (std::size_t j = 0; j < d; ++j) {
            double v = pat[j];
            if (add_cue) v += cue[j];
            if (cfg.noise_std > 0.0) v += rng.normal(0.0, cfg.noise_std);
            img[j] = static_cast<float>(v);
        }
        ds.labels.push_back(y);
        ds.groups.push_back(c);
    }
    return ds;
}

} // namespace detail

inline SyntheticData gen_synthetic(const SyntheticConfig& cfg) {
    cfg.validate();
    const auto patterns = detail::synth_class_patterns(cfg);
    const auto cue = detail::synth_attribute_cue(cfg);
    for (const auto& p : patterns) {
        if (std::abs(detail::cosine(p, cue)) > 0.99) {
            throw numeric_error("class and attribute signals are collinear; change the seed");
        }
    }
    SyntheticData out;
    out.train = detail::synth_split(cfg, cfg.spurious_strength, patterns, cue, 0x11a1, "train");
    out.eval = detail::synth_split(cfg, 0.0, patterns, cue, 0x22b2, "eval");
    return out;
}

// ---------------------------------------------------------------------------
// Dataset container (same style as the model checkpoint)
// ---------------------------------------------------------------------------

inline constexpr char dataset_magic[4] = {'S', 'C', 'D', '1'};

inline void save_dataset(const std::string& path, const Dataset& ds,
                         const nlohmann::ordered_json& meta = nlohmann::ordered_json::object()) {
    nlohmann::ordered_json header;
    header["format_version"] = 1;
    header["num_samples"] = ds.size();
    header["channels"] = ds.images.dim(1);
    header["height"] = ds.images.dim(2);
    header["width"] = ds.images.dim(3);
    header["num_classes"] = ds.num_classes;
    header["split"] = ds.split;
    header["meta"] = meta;
    const std::string hdr = header.dump();

    std::string out;
    out.append(dataset_magic, 4);
    binio::put_u32(out, static_cast<std::uint32_t>(hdr.size()));
    out += hdr;
    for (std::int64_t i = 0; i < ds.images.size(); ++i) binio::put_f32(out, ds.images[i]);
    for (const int y : ds.labels) out.push_back(static_cast<char>(y));
    for (const std::uint8_t g : ds.groups) out.push_back(static_cast<char>(g));
    binio::write_file(path, out);
}

inline Dataset load_dataset(const std::string& path) {
    binio::Reader r(binio::read_file(path), path);
    r.expect_magic(dataset_magic);
    const std::uint32_t hdr_len = r.get_u32("header length");
    const std::string hdr = r.get_bytes(hdr_len, "JSON header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hdr);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(format_error::code::bad_header,
                           path + ": unparsable JSON header: " + e.what());
    }
    Dataset ds;
    int n = 0, c = 0, h = 0, w = 0;
    try {
        if (header.at("format_version").get<int>() != 1) {
            throw format_error(format_error::code::bad_version,
                               path + ": unsupported dataset format version");
        }
        n = header.at("num_samples").get<int>();
        c = header.at("channels").get<int>();
        h = header.at("height").get<int>();
        w = header.at("width").get<int>();
        ds.num_classes = header.at("num_classes").get<int>();
        ds.split = header.at("split").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw format_error(format_error::code::bad_header,
                           path + ": malformed header: " + e.what());
    }
    if (n < 1 || c < 1 || h < 1 || w < 1 || ds.num_classes < 2) {
        throw format_error(format_error::code::dimension_mismatch,
                           path + ": invalid dataset dimensions in header");
    }
    ds.images = Tensor({n, c, h, w});
    r.get_f32s(ds.images.data(), static_cast<std::size_t>(ds.images.size()), "images");
    for (int i = 0; i < n; ++i) {
        const int y = r.get_u8("class label");
        if (y >= ds.num_classes) {
            throw format_error(format_error::code::bad_cell,
                               path + ": class label " + std::to_string(y) +
                                   " out of range for num_classes " +
                                   std::to_string(ds.num_classes));
        }
        ds.labels.push_back(y);
    }
    for (int i = 0; i < n; ++i) {
        const std::uint8_t g = r.get_u8("group label");
        if (g > 1) {
            throw format_error(format_error::code::non_binary_label,
                               path + ": sensitive label must be 0 or 1, got " +
                                   std::to_string(static_cast<int>(g)));
        }
        ds.groups.push_back(g);
    }
    r.expect_end();
    return ds;
}

// ---------------------------------------------------------------------------
// Feature-map interchange (FMAP)
// ---------------------------------------------------------------------------

// FMAP layout: magic "FMAP", u32 version=1, u32 N, K, H', W' (little-endian),
// N*K*H'*W' little-endian float32 in [n][k][h][w] order, then N bytes of
// sensitive labels (0/1).

inline constexpr char fmap_magic[4] = {'F', 'M', 'A', 'P'};

struct FeatureMaps {
    Tensor maps;                      // [N, K, H', W']
    std::vector<std::uint8_t> labels; // sensitive labels, length N
};

inline void save_feature_maps(const std::string& path, const Tensor& maps,
                              const std::vector<std::uint8_t>& labels) {
    if (maps.rank() != 4) throw config_error("feature maps must be [N,K,H',W']");
    if (maps.dim(0) != static_cast<int>(labels.size())) {
        throw config_error("feature map count does not match label count");
    }
    for (const std::uint8_t l : labels) {
        if (l > 1) throw config_error("sensitive labels must be 0 or 1");
    }
    std::string out;
    out.append(fmap_magic, 4);
    binio::put_u32(out, 1u);
    for (int i = 0; i < 4; ++i) {
        binio::put_u32(out, static_cast<std::uint32_t>(maps.dim(i)));
    }
    for (std::int64_t i = 0; i < maps.size(); ++i) binio::put_f32(out, maps[i]);
    for (const std::uint8_t l : labels) out.push_back(static_cast<char>(l));
    binio::write_file(path, out);
}

inline FeatureMaps load_feature_maps(const std::string& path) {
    binio::Reader r(binio::read_file(path), path);
    r.expect_magic(fmap_magic);
    const std::uint32_t version = r.get_u32("version");
    if (version != 1) {
        throw format_error(format_error::code::bad_version,
                           path + ": unsupported FMAP version " + std::to_string(version));
    }
    const std::uint32_t n = r.get_u32("N");
    const std::uint32_t k = r.get_u32("K");
    const std::uint32_t h = r.get_u32("H'");
    const std::uint32_t w = r.get_u32("W'");
    if (n < 1 || k < 1 || h < 1 || w < 1) {
        throw format_error(format_error::code::dimension_mismatch,
                           path + ": FMAP header has zero-sized dimension (N=" +
                               std::to_string(n) + ", K=" + std::to_string(k) + ", H'=" +
                               std::to_string(h) + ", W'=" + std::to_string(w) + ")");
    }
    FeatureMaps fm;
    fm.maps = Tensor({static_cast<int>(n), static_cast<int>(k), static_cast<int>(h),
                      static_cast<int>(w)});
    r.get_f32s(fm.maps.data(), static_cast<std::size_t>(fm.maps.size()), "feature maps");
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint8_t l = r.get_u8("sensitive label");
        if (l > 1) {
            throw format_error(format_error::code::non_binary_label,
                               path + ": sensitive label must be 0 or 1, got " +
                                   std::to_string(static_cast<int>(l)));
        }
        fm.labels.push_back(l);
    }
    r.expect_end();
    return fm;
}

// ---------------------------------------------------------------------------
// Predictions CSV
// ---------------------------------------------------------------------------

struct PredictionRows {
    std::vector<int> preds;
    std::vector<int> labels;
    std::vector<std::uint8_t> groups;

    int size() const { return static_cast<int>(preds.size()); }
};

namespace detail {

inline int parse_int_cell(const std::string& cell, const std::string& path, int line) {
    if (cell.empty()) {
        throw format_error(format_error::code::bad_cell,
                           path + ":" + std::to_string(line) + ": empty cell");
    }
    std::size_t pos = 0;
    int v = 0;
    try {
        v = std::stoi(cell, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != cell.size()) {
        throw format_error(format_error::code::bad_cell,
                           path + ":" + std::to_string(line) + ": non-integer cell \"" + cell +
                               "\"");
    }
    return v;
}

} // namespace detail

inline PredictionRows load_predictions_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open file: " + path);
    std::string line;
    int lineno = 0;
    if (!std::getline(in, line)) {
        throw format_error(format_error::code::missing_column, path + ": empty file");
    }
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "pred,label,group") {
        throw format_error(format_error::code::missing_column,
                           path + ":1: header must be exactly \"pred,label,group\", got \"" +
                               line + "\"");
    }
    PredictionRows rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string cells[3];
        int ncell = 0;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= line.size(); ++i) {
            if (i == line.size() || line[i] == ',') {
                if (ncell >= 3) {
                    throw format_error(format_error::code::bad_cell,
                                       path + ":" + std::to_string(lineno) +
                                           ": expected 3 cells");
                }
                cells[ncell++] = line.substr(start, i - start);
                start = i + 1;
            }
        }
        if (ncell != 3) {
            throw format_error(format_error::code::bad_cell,
                               path + ":" + std::to_string(lineno) + ": expected 3 cells, got " +
                                   std::to_string(ncell));
        }
        const int pred = detail::parse_int_cell(cells[0], path, lineno);
        const int label = detail::parse_int_cell(cells[1], path, lineno);
        const int group = detail::parse_int_cell(cells[2], path, lineno);
        if (pred < 0 || label < 0) {
            throw format_error(format_error::code::bad_cell,
                               path + ":" + std::to_string(lineno) +
                                   ": class indices must be nonnegative");
        }
        if (group != 0 && group != 1) {
            throw format_error(format_error::code::non_binary_label,
                               path + ":" + std::to_string(lineno) +
                                   ": group must be 0 or 1, got " + std::to_string(group));
        }
        rows.preds.push_back(pred);
        rows.labels.push_back(label);
        rows.groups.push_back(static_cast<std::uint8_t>(group));
    }
    if (rows.size() == 0) {
        throw format_error(format_error::code::dimension_mismatch,
                           path + ": no data rows after header");
    }
    return rows;
}

inline void save_predictions_csv(const std::string& path, const PredictionRows& rows) {
    std::ostringstream out;
    out << "pred,label,group\n";
    for (int i = 0; i < rows.size(); ++i) {
        out << rows.preds[static_cast<std::size_t>(i)] << ","
            << rows.labels[static_cast<std::size_t>(i)] << ","
            << static_cast<int>(rows.groups[static_cast<std::size_t>(i)]) << "\n";
    }
    binio::write_file(path, out.str());
}

// Convenience adapter used by the recipe and CLI paths.
inline std::vector<int> evaluate(const ToyCnn& model, const Dataset& ds, int batch_size = 64) {
    return evaluate(model, ds.images, batch_size);
}

} // namespace scp
