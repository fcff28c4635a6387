#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "scp/data_io.hpp"
#include "scp/error.hpp"
#include "scp/nn.hpp"
#include "scp/rng.hpp"
#include "scp/tensor.hpp"

namespace scp {

// Per-channel separation scores for one tapped layer. A low score marks a
// channel whose feature maps pull the two sensitive groups apart.
struct ChannelScoreTable {
    int layer_index = 0;
    std::vector<double> scores; // one per output channel
    double temperature = 1.0;
    int n_batches = 0;
    int batch_size = 0;

    int num_channels() const { return static_cast<int>(scores.size()); }

    double mean_score() const {
        if (scores.empty()) return 0.0;
        double acc = 0.0;
        for (const double s : scores) acc += s;
        return acc / static_cast<double>(scores.size());
    }
};

struct SensitiveBatch {
    Tensor maps;                      // [b, K, H', W']
    std::vector<std::uint8_t> labels; // sensitive labels, length b
};

// Squared Euclidean distances between the rows of a [b, d] matrix,
// accumulated in double. Returns a row-major b*b matrix.
inline std::vector<double> pairwise_sq_dists(std::span<const float> flat, int b, int d) {
    if (b < 2) throw config_error("pairwise distances need at least 2 rows");
    if (static_cast<std::size_t>(b) * d != flat.size()) {
        throw config_error("flat map length does not match b*d");
    }
    std::vector<double> out(static_cast<std::size_t>(b) * b, 0.0);
    for (int i = 0; i < b; ++i) {
        const float* ri = flat.data() + static_cast<std::size_t>(i) * d;
        for (int j = i + 1; j < b; ++j) {
            const float* rj = flat.data() + static_cast<std::size_t>(j) * d;
            double acc = 0.0;
            for (int k = 0; k < d; ++k) {
                const double diff = static_cast<double>(ri[k]) - static_cast<double>(rj[k]);
                acc += diff * diff;
            }
            out[static_cast<std::size_t>(i) * b + j] = acc;
            out[static_cast<std::size_t>(j) * b + i] = acc;
        }
    }
    return out;
}

inline std::vector<double> pairwise_sq_dists(const Tensor& flat_maps) {
    if (flat_maps.rank() != 2) throw config_error("flat maps must be [b,d]");
    return pairwise_sq_dists(std::span<const float>(flat_maps.data(),
                                                    static_cast<std::size_t>(flat_maps.size())),
                             flat_maps.dim(0), flat_maps.dim(1));
}

namespace detail {

inline constexpr double snnl_epsilon = 1e-12;

inline void check_snnl_args(int b, std::size_t label_count, double temperature) {
    if (temperature <= 0.0) throw config_error("temperature must be > 0");
    if (b < 2) throw config_error("a batch needs at least 2 samples");
    if (label_count != static_cast<std::size_t>(b)) {
        throw config_error("label count does not match batch size");
    }
}

inline double snnl_from_dists(const std::vector<double>& dists, int b,
                              const std::vector<std::uint8_t>& labels, double temperature) {
    double acc = 0.0;
    for (int i = 0; i < b; ++i) {
        double num = 0.0, den = 0.0;
        for (int j = 0; j < b; ++j) {
            if (j == i) continue;
            const double e = std::exp(-dists[static_cast<std::size_t>(i) * b + j] / temperature);
            den += e;
            if (labels[static_cast<std::size_t>(j)] == labels[static_cast<std::size_t>(i)]) {
                num += e;
            }
        }
        acc += std::log((num + snnl_epsilon) / (den + snnl_epsilon));
    }
    return -acc / static_cast<double>(b);
}

} // namespace detail

// Entanglement of one channel's maps with respect to the sensitive labels:
// the mean over samples of -log of the same-group neighbor mass over the
// all-neighbor mass, with Gaussian affinities exp(-||mi-mj||^2 / T). A batch
// whose samples all share one label scores exactly 0; separated groups score
// near 0; intertwined groups score higher.
inline double snnl_batch(std::span<const float> flat_maps, int b, int d,
                         const std::vector<std::uint8_t>& labels, double temperature) {
    detail::check_snnl_args(b, labels.size(), temperature);
    for (const std::uint8_t l : labels) {
        if (l > 1) throw config_error("sensitive labels must be 0 or 1");
    }
    const std::vector<double> dists = pairwise_sq_dists(flat_maps, b, d);
    return detail::snnl_from_dists(dists, b, labels, temperature);
}

// maps_k: [b, H', W'] maps of a single channel (flattened internally).
inline double snnl_batch(const Tensor& maps_k, const std::vector<std::uint8_t>& labels,
                         double temperature) {
    if (maps_k.rank() < 2) throw config_error("channel maps must be at least [b,d]");
    const int b = maps_k.dim(0);
    const int d = static_cast<int>(maps_k.size() / std::max(1, b));
    return snnl_batch(std::span<const float>(maps_k.data(), static_cast<std::size_t>(maps_k.size())),
                      b, d, labels, temperature);
}

// ---------------------------------------------------------------------------
// Dataset partitioning and score aggregation
// ---------------------------------------------------------------------------

// Seeded-shuffle batch order: floor(N/b) full batches; a trailing remainder
// keeps its own smaller batch when it still holds >= 2 samples and is
// dropped otherwise.
inline std::vector<std::vector<int>> make_score_batches(int num_samples, int batch_size,
                                                        std::uint64_t seed) {
    if (num_samples < 2) throw config_error("scoring needs at least 2 samples");
    if (batch_size < 2) throw config_error("batch size must be >= 2");
    std::vector<int> order(static_cast<std::size_t>(num_samples));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x5c03e5));
    rng.shuffle(order);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < num_samples; start += batch_size) {
        const int count = std::min(batch_size, num_samples - start);
        if (count < 2) break;
        batches.emplace_back(order.begin() + start, order.begin() + start + count);
    }
    return batches;
}

// Scores each channel of pre-extracted maps [N, K, H', W']: the unweighted
// mean of the per-batch values, summed in batch order for reproducibility.
inline ChannelScoreTable snnl_fair_scores(const Tensor& maps,
                                          const std::vector<std::uint8_t>& labels,
                                          double temperature, int batch_size, std::uint64_t seed,
                                          int layer_index = 0) {
    if (maps.rank() != 4) throw config_error("feature maps must be [N,K,H',W']");
    if (temperature <= 0.0) throw config_error("temperature must be > 0");
    const int n = maps.dim(0), k = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
    if (static_cast<std::size_t>(n) != labels.size()) {
        throw config_error("feature map count does not match label count");
    }
    const auto batches = make_score_batches(n, batch_size, seed);
    const int d = h * w;

    ChannelScoreTable table;
    table.layer_index = layer_index;
    table.temperature = temperature;
    table.batch_size = batch_size;
    table.n_batches = static_cast<int>(batches.size());
    table.scores.assign(static_cast<std::size_t>(k), 0.0);

    std::vector<float> flat;
    std::vector<std::uint8_t> batch_labels;
    for (const auto& batch : batches) {
        const int b = static_cast<int>(batch.size());
        batch_labels.clear();
        for (const int idx : batch) batch_labels.push_back(labels[static_cast<std::size_t>(idx)]);
        for (int ch = 0; ch < k; ++ch) {
            flat.resize(static_cast<std::size_t>(b) * d);
            for (int i = 0; i < b; ++i) {
                const float* src =
                    maps.data() + (static_cast<std::size_t>(batch[static_cast<std::size_t>(i)]) * k + ch) * d;
                std::copy(src, src + d, flat.begin() + static_cast<std::size_t>(i) * d);
            }
            table.scores[static_cast<std::size_t>(ch)] +=
                snnl_batch(std::span<const float>(flat.data(), flat.size()), b, d, batch_labels,
                           temperature);
        }
    }
    for (auto& s : table.scores) s /= static_cast<double>(table.n_batches);
    return table;
}

// Scores the tapped activations of a model over a dataset. Batches are formed
// once from the seeded shuffle; maps come from layer_activations (post-ReLU,
// pre-pool).
inline ChannelScoreTable snnl_fair_scores(const ToyCnn& model, const Dataset& dataset, int layer,
                                          double temperature, int batch_size,
                                          std::uint64_t seed) {
    if (temperature <= 0.0) throw config_error("temperature must be > 0");
    const auto batches = make_score_batches(dataset.size(), batch_size, seed);
    const int k = model.channels_at(layer);

    ChannelScoreTable table;
    table.layer_index = layer;
    table.temperature = temperature;
    table.batch_size = batch_size;
    table.n_batches = static_cast<int>(batches.size());
    table.scores.assign(static_cast<std::size_t>(k), 0.0);

    std::vector<float> flat;
    for (const auto& batch : batches) {
        const SampleBatch sb = dataset.gather(batch);
        const Tensor maps = layer_activations(model, sb.images, layer);
        const int b = maps.dim(0), d = maps.dim(2) * maps.dim(3);
        for (int ch = 0; ch < k; ++ch) {
            flat.resize(static_cast<std::size_t>(b) * d);
            for (int i = 0; i < b; ++i) {
                const float* src = maps.data() + (static_cast<std::size_t>(i) * k + ch) * d;
                std::copy(src, src + d, flat.begin() + static_cast<std::size_t>(i) * d);
            }
            table.scores[static_cast<std::size_t>(ch)] +=
                snnl_batch(std::span<const float>(flat.data(), flat.size()), b, d, sb.groups,
                           temperature);
        }
    }
    for (auto& s : table.scores) s /= static_cast<double>(table.n_batches);
    return table;
}

// ---------------------------------------------------------------------------
// Temperature calibration
// ---------------------------------------------------------------------------

// Picks a temperature from the observed distance scale of a model's tapped
// activations: the given quantile of pairwise squared distances, pooled over
// all channels of a few batches. A temperature near the upper end of the
// distance range keeps the Gaussian affinities of large-magnitude channels
// away from the all-zero saturation where every channel scores 0.
inline double calibrate_temperature(const ToyCnn& model, const Dataset& dataset, int layer,
                                    int batch_size, std::uint64_t seed, double quantile = 0.75,
                                    int max_batches = 4) {
    if (quantile <= 0.0 || quantile >= 1.0) {
        throw config_error("temperature quantile must be in (0,1)");
    }
    const auto batches = make_score_batches(dataset.size(), batch_size, seed);
    std::vector<double> pooled;
    int used = 0;
    std::vector<float> flat;
    for (const auto& batch : batches) {
        if (used++ >= max_batches) break;
        const SampleBatch sb = dataset.gather(batch);
        const Tensor maps = layer_activations(model, sb.images, layer);
        const int b = maps.dim(0), k = maps.dim(1), d = maps.dim(2) * maps.dim(3);
        for (int ch = 0; ch < k; ++ch) {
            flat.resize(static_cast<std::size_t>(b) * d);
            for (int i = 0; i < b; ++i) {
                const float* src = maps.data() + (static_cast<std::size_t>(i) * k + ch) * d;
                std::copy(src, src + d, flat.begin() + static_cast<std::size_t>(i) * d);
            }
            const auto dists =
                pairwise_sq_dists(std::span<const float>(flat.data(), flat.size()), b, d);
            for (int i = 0; i < b; ++i) {
                for (int j = i + 1; j < b; ++j) {
                    pooled.push_back(dists[static_cast<std::size_t>(i) * b + j]);
                }
            }
        }
    }
    if (pooled.empty()) throw config_error("no distances observed for calibration");
    std::sort(pooled.begin(), pooled.end());
    const double q =
        pooled[static_cast<std::size_t>(static_cast<double>(pooled.size() - 1) * quantile)];
    return q > 0.0 ? q : 1.0;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline std::string score_table_csv(const ChannelScoreTable& table) {
    std::string out = "channel,score\n";
    char buf[64];
    for (int ch = 0; ch < table.num_channels(); ++ch) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g\n", ch,
                      table.scores[static_cast<std::size_t>(ch)]);
        out += buf;
    }
    return out;
}

} // namespace scp
