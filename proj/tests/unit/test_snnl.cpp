#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "scp/rng.hpp"
#include "scp/snnl.hpp"
#include "scp/tensor.hpp"

using scp::Tensor;

namespace {

// ln(1 + 2/e), frozen from the 4-sample hand summation: every sample has one
// same-group neighbor at distance 0 and two other-group neighbors at
// distance 1, so each term is log(1 / (1 + 2e^-1)).
constexpr double separated_4sample = 0.5514447139320511;
constexpr double entangled_4sample = 1.5514447139320511; // 1 + ln(1 + 2/e)

Tensor scalar_maps(const std::vector<float>& values) {
    return Tensor({static_cast<int>(values.size()), 1, 1}, std::vector<float>(values));
}

double rel_diff(double a, double b) {
    const double d = std::abs(a - b);
    const double m = std::max(std::abs(a), std::abs(b));
    return m > 0.0 ? d / m : d;
}

struct RandomBatch {
    std::vector<std::vector<double>> rows;
    std::vector<float> flat;
    std::vector<std::uint8_t> labels;
    std::vector<int> labels_int;
    int b = 0;
    int d = 0;
};

RandomBatch make_random_batch(scp::Rng& rng, int min_b = 2, int max_b = 8, int max_d = 6) {
    RandomBatch out;
    out.b = rng.uniform_int(min_b, max_b);
    out.d = rng.uniform_int(1, max_d);
    for (int i = 0; i < out.b; ++i) {
        std::vector<double> row;
        for (int k = 0; k < out.d; ++k) {
            const float v = static_cast<float>(rng.normal(0.0, 1.0));
            out.flat.push_back(v);
            row.push_back(v);
        }
        out.rows.push_back(std::move(row));
        const std::uint8_t c = rng.bernoulli(0.5) ? 1 : 0;
        out.labels.push_back(c);
        out.labels_int.push_back(c);
    }
    return out;
}

} // namespace

TEST_CASE("pairwise_sq_dists: identical rows give a zero matrix") {
    Tensor maps({3, 2}, {1.0f, 2.0f, 1.0f, 2.0f, 1.0f, 2.0f});
    const auto d = scp::pairwise_sq_dists(maps);
    for (const double v : d) CHECK(v == 0.0);
}

TEST_CASE("pairwise_sq_dists: 1-D rows 0 and 3") {
    Tensor maps({2, 1}, {0.0f, 3.0f});
    const auto d = scp::pairwise_sq_dists(maps);
    CHECK(d[0] == 0.0);
    CHECK(d[1] == 9.0);
    CHECK(d[2] == 9.0);
    CHECK(d[3] == 0.0);
}

TEST_CASE("pairwise_sq_dists matches the double-loop oracle on random input") {
    scp::Rng rng(404);
    Tensor maps({5, 4});
    for (std::int64_t i = 0; i < maps.size(); ++i) {
        maps[i] = static_cast<float>(rng.normal(0.0, 2.0));
    }
    const auto d = scp::pairwise_sq_dists(maps);
    for (int i = 0; i < 5; ++i) {
        for (int j = 0; j < 5; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) {
                const double diff =
                    static_cast<double>(maps.at2(i, k)) - static_cast<double>(maps.at2(j, k));
                acc += diff * diff;
            }
            CHECK(std::abs(d[static_cast<std::size_t>(i) * 5 + j] - acc) <= 1e-10);
        }
    }
    // symmetry and zero diagonal
    for (int i = 0; i < 5; ++i) {
        CHECK(d[static_cast<std::size_t>(i) * 5 + i] == 0.0);
        for (int j = 0; j < 5; ++j) {
            CHECK(d[static_cast<std::size_t>(i) * 5 + j] ==
                  d[static_cast<std::size_t>(j) * 5 + i]);
        }
    }
}

TEST_CASE("snnl_batch: single-group batch scores exactly zero") {
    scp::Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        const int b = rng.uniform_int(2, 8);
        Tensor maps({b, 1, 1});
        for (std::int64_t i = 0; i < maps.size(); ++i) {
            maps[i] = static_cast<float>(rng.normal(0.0, 3.0));
        }
        const std::uint8_t label = trial % 2 ? 1 : 0;
        const std::vector<std::uint8_t> labels(static_cast<std::size_t>(b), label);
        CHECK(scp::snnl_batch(maps, labels, 1.0 + trial) == 0.0);
    }
}

TEST_CASE("snnl_batch: hand-derived 4-sample values") {
    const std::vector<std::uint8_t> labels = {0, 0, 1, 1};
    const double separated = scp::snnl_batch(scalar_maps({0, 0, 1, 1}), labels, 1.0);
    const double entangled = scp::snnl_batch(scalar_maps({0, 1, 0, 1}), labels, 1.0);
    CHECK(std::abs(separated - separated_4sample) <= 1e-9);
    CHECK(std::abs(entangled - entangled_4sample) <= 1e-9);
    // intertwined groups score strictly higher than separated ones
    CHECK(entangled > separated);
}

TEST_CASE("snnl_batch rejects bad arguments") {
    const std::vector<std::uint8_t> labels = {0, 1};
    CHECK_THROWS_AS(scp::snnl_batch(scalar_maps({0, 1}), labels, 0.0), scp::config_error);
    CHECK_THROWS_AS(scp::snnl_batch(scalar_maps({0, 1}), labels, -1.0), scp::config_error);
    CHECK_THROWS_AS(scp::snnl_batch(scalar_maps({0}), {0}, 1.0), scp::config_error);
    CHECK_THROWS_AS(scp::snnl_batch(scalar_maps({0, 1}), {0, 2}, 1.0), scp::config_error);
}

TEST_CASE("snnl_batch matches the direct-summation oracle on random batches") {
    scp::Rng rng(2025);
    for (int trial = 0; trial < 100; ++trial) {
        const RandomBatch batch = make_random_batch(rng);
        for (const double t : {0.5, 1.0, 4.0}) {
            const double got =
                scp::snnl_batch(std::span<const float>(batch.flat.data(), batch.flat.size()),
                                batch.b, batch.d, batch.labels, t);
            const double want = oracle::snnl_direct(batch.rows, batch.labels_int, t);
            CHECK(rel_diff(got, want) <= 1e-9);
            CHECK(got >= 0.0);
        }
    }
}

TEST_CASE("snnl_batch invariances: permutation, label swap, temperature scaling") {
    scp::Rng rng(31337);
    for (int trial = 0; trial < 50; ++trial) {
        RandomBatch batch = make_random_batch(rng, 3);
        const double base =
            scp::snnl_batch(std::span<const float>(batch.flat.data(), batch.flat.size()), batch.b,
                            batch.d, batch.labels, 1.0);

        // permutation of samples (rotate by one)
        std::vector<float> rot_flat;
        std::vector<std::uint8_t> rot_labels;
        for (int i = 0; i < batch.b; ++i) {
            const int src = (i + 1) % batch.b;
            rot_labels.push_back(batch.labels[static_cast<std::size_t>(src)]);
            for (int k = 0; k < batch.d; ++k) {
                rot_flat.push_back(batch.flat[static_cast<std::size_t>(src) * batch.d + k]);
            }
        }
        const double permuted = scp::snnl_batch(
            std::span<const float>(rot_flat.data(), rot_flat.size()), batch.b, batch.d,
            rot_labels, 1.0);
        CHECK(std::abs(permuted - base) <= 1e-12);

        // flipping all sensitive labels
        std::vector<std::uint8_t> flipped;
        for (const std::uint8_t c : batch.labels) flipped.push_back(c ? 0 : 1);
        const double swapped =
            scp::snnl_batch(std::span<const float>(batch.flat.data(), batch.flat.size()), batch.b,
                            batch.d, flipped, 1.0);
        CHECK(std::abs(swapped - base) <= 1e-12);

        // maps * s with T * s^2 leaves the value unchanged
        const double s = 0.5 + rng.uniform() * 2.0;
        std::vector<float> scaled;
        for (const float v : batch.flat) scaled.push_back(static_cast<float>(v * s));
        const double rescaled =
            scp::snnl_batch(std::span<const float>(scaled.data(), scaled.size()), batch.b,
                            batch.d, batch.labels, s * s);
        CHECK(rel_diff(rescaled, base) <= 1e-6); // float32 rescaling noise
    }
}

TEST_CASE("snnl_fair_scores: single-group data scores zero everywhere") {
    scp::Rng rng(8);
    Tensor maps({10, 3, 2, 2});
    for (std::int64_t i = 0; i < maps.size(); ++i) {
        maps[i] = static_cast<float>(rng.normal(0.0, 1.0));
    }
    const std::vector<std::uint8_t> labels(10, 1);
    const auto table = scp::snnl_fair_scores(maps, labels, 1.0, 4, 99);
    REQUIRE(table.num_channels() == 3);
    for (const double s : table.scores) CHECK(s == 0.0);
}

TEST_CASE("snnl_fair_scores: one batch equals snnl_batch per channel") {
    scp::Rng rng(9);
    const int n = 6, k = 2, d = 4;
    Tensor maps({n, k, 2, 2});
    std::vector<std::uint8_t> labels;
    for (std::int64_t i = 0; i < maps.size(); ++i) {
        maps[i] = static_cast<float>(rng.normal(0.0, 1.0));
    }
    for (int i = 0; i < n; ++i) labels.push_back(i % 2 ? 1 : 0);

    const auto table = scp::snnl_fair_scores(maps, labels, 2.0, n, 4242);
    REQUIRE(table.n_batches == 1);

    const auto batches = scp::make_score_batches(n, n, 4242);
    REQUIRE(batches.size() == 1);
    for (int ch = 0; ch < k; ++ch) {
        std::vector<float> flat;
        std::vector<std::uint8_t> blabels;
        for (const int idx : batches[0]) {
            const float* src = maps.data() + (static_cast<std::size_t>(idx) * k + ch) * d;
            flat.insert(flat.end(), src, src + d);
            blabels.push_back(labels[static_cast<std::size_t>(idx)]);
        }
        const double want = scp::snnl_batch(std::span<const float>(flat.data(), flat.size()), n,
                                            d, blabels, 2.0);
        CHECK(table.scores[static_cast<std::size_t>(ch)] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("snnl_fair_scores: mean of per-batch oracle values over 2 batches") {
    scp::Rng rng(10);
    const int n = 8, k = 2, b = 4, d = 1;
    Tensor maps({n, k, 1, 1});
    std::vector<std::uint8_t> labels;
    for (std::int64_t i = 0; i < maps.size(); ++i) {
        maps[i] = static_cast<float>(rng.normal(0.0, 1.5));
    }
    for (int i = 0; i < n; ++i) labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
    // keep both groups present
    labels[0] = 0;
    labels[1] = 1;

    const std::uint64_t seed = 777;
    const auto table = scp::snnl_fair_scores(maps, labels, 1.0, b, seed);
    REQUIRE(table.n_batches == 2);

    const auto batches = scp::make_score_batches(n, b, seed);
    for (int ch = 0; ch < k; ++ch) {
        double want = 0.0;
        for (const auto& batch : batches) {
            std::vector<std::vector<double>> rows;
            std::vector<int> blabels;
            for (const int idx : batch) {
                rows.push_back({static_cast<double>(
                    maps.data()[(static_cast<std::size_t>(idx) * k + ch) * d])});
                blabels.push_back(labels[static_cast<std::size_t>(idx)]);
            }
            want += oracle::snnl_direct(rows, blabels, 1.0);
        }
        want /= static_cast<double>(batches.size());
        CHECK(std::abs(table.scores[static_cast<std::size_t>(ch)] - want) <= 1e-12);
    }
}

TEST_CASE("make_score_batches: full batches plus a usable remainder") {
    auto batches = scp::make_score_batches(10, 4, 1);
    REQUIRE(batches.size() == 3); // 4 + 4 + 2
    CHECK(batches[2].size() == 2);
    // a remainder of one sample is dropped
    batches = scp::make_score_batches(9, 4, 1);
    REQUIRE(batches.size() == 2);
    // every index appears at most once
    std::vector<int> seen(10, 0);
    for (const auto& batch : scp::make_score_batches(10, 4, 123)) {
        for (const int idx : batch) ++seen[static_cast<std::size_t>(idx)];
    }
    for (const int count : seen) CHECK(count == 1);
    CHECK_THROWS_AS(scp::make_score_batches(1, 4, 1), scp::config_error);
}

TEST_CASE("score table CSV export uses 9 significant digits") {
    scp::ChannelScoreTable table;
    table.scores = {0.5514447139320511, 0.0, 1.25};
    const std::string csv = scp::score_table_csv(table);
    CHECK(csv == "channel,score\n0,0.551444714\n1,0\n2,1.25\n");
}
