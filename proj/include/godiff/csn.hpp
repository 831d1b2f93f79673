#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "godiff/dataset.hpp"
#include "godiff/error.hpp"
#include "godiff/random.hpp"

// Cross-style normalization: channel statistics, instance normalization,
// statistic swapping between paired feature maps, the layer gate, and the
// covariance matching loss with its analytic gradient.

namespace godiff {

/// C x H x W activations, channel-major.
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    FeatureMap() = default;
    FeatureMap(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane_size() const noexcept { return static_cast<std::size_t>(height) * width; }
    double& at(int c, int y, int x) noexcept { return values[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
    double at(int c, int y, int x) const noexcept { return values[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }

    /// Row-major C x HW view; the transpose of the flattened (HW x C) layout.
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> matrix() const {
        return {values.data(), channels, static_cast<Eigen::Index>(plane_size())};
    }

    void validate() const {
        if (channels < 1 || height < 1 || width < 1) throw ValidationError("FeatureMap: C, H, W must be >= 1");
        if (values.size() != static_cast<std::size_t>(channels) * plane_size()) {
            throw ValidationError("FeatureMap: value count does not match C*H*W");
        }
        for (double v : values) {
            if (!std::isfinite(v)) throw ValidationError("FeatureMap: non-finite value");
        }
    }

    bool operator==(const FeatureMap&) const = default;
};

inline constexpr double kDefaultCsnEpsilon = 1e-5;

struct ChannelStats {
    std::vector<double> mu;
    std::vector<double> sigma;
};

/// Per-channel mean and sqrt(population variance + eps^2).
inline ChannelStats channel_stats(const FeatureMap& f, double eps = kDefaultCsnEpsilon) {
    if (!(eps > 0.0)) throw ValidationError("channel_stats: eps must be > 0");
    ChannelStats s;
    s.mu.resize(static_cast<std::size_t>(f.channels));
    s.sigma.resize(static_cast<std::size_t>(f.channels));
    const std::size_t n = f.plane_size();
    for (std::size_t c = 0; c < s.mu.size(); ++c) {
        const double* p = f.values.data() + c * n;
        const double mean = std::accumulate(p, p + n, 0.0) / static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
        var /= static_cast<double>(n);
        s.mu[c] = mean;
        s.sigma[c] = std::sqrt(var + eps * eps);
    }
    return s;
}

struct InstanceNormParams {
    std::vector<double> gamma;
    std::vector<double> beta;

    static InstanceNormParams identity(int channels) {
        return {std::vector<double>(static_cast<std::size_t>(channels), 1.0),
                std::vector<double>(static_cast<std::size_t>(channels), 0.0)};
    }
};

namespace detail {

// Writes scale * (src - mu) / sigma + shift per channel.
inline FeatureMap restyle(const FeatureMap& src, const ChannelStats& own, const std::vector<double>& scale,
                          const std::vector<double>& shift) {
    FeatureMap out = src;
    const std::size_t n = src.plane_size();
    for (std::size_t c = 0; c < static_cast<std::size_t>(src.channels); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double& v = out.values[c * n + i];
            v = scale[c] * ((v - own.mu[c]) / own.sigma[c]) + shift[c];
        }
    }
    return out;
}

}  // namespace detail

inline FeatureMap instance_norm(const FeatureMap& f, const InstanceNormParams& params, double eps = kDefaultCsnEpsilon) {
    if (params.gamma.size() != static_cast<std::size_t>(f.channels) ||
        params.beta.size() != static_cast<std::size_t>(f.channels)) {
        throw ValidationError("instance_norm: affine parameter length does not match channel count");
    }
    return detail::restyle(f, channel_stats(f, eps), params.gamma, params.beta);
}

/// Each map keeps its normalized content and takes the partner's mean and std.
inline std::pair<FeatureMap, FeatureMap> cross_style_swap(const FeatureMap& a, const FeatureMap& b,
                                                          double eps = kDefaultCsnEpsilon) {
    if (a.channels != b.channels) {
        throw ValidationError("cross_style_swap: channel mismatch " + std::to_string(a.channels) + " vs " +
                              std::to_string(b.channels));
    }
    const auto sa = channel_stats(a, eps);
    const auto sb = channel_stats(b, eps);
    return {detail::restyle(a, sa, sb.sigma, sb.mu), detail::restyle(b, sb, sa.sigma, sa.mu)};
}

// ---------------------------------------------------------------------------
// Gate

struct CsnPolicy {
    double probability = 0.1;
    int max_active = 2;
    double epsilon = kDefaultCsnEpsilon;

    void validate() const {
        std::vector<std::string> v;
        if (!(probability >= 0.0 && probability <= 1.0)) v.push_back("csn.probability: must be in [0, 1]");
        if (max_active < 1) v.push_back("csn.max_active: must be >= 1");
        if (!(epsilon > 0.0)) v.push_back("csn.epsilon: must be > 0");
        if (!v.empty()) throw ValidationError("invalid CSN policy:", std::move(v));
    }
};

/// Independent Bernoulli(p) per layer, then only the `max_active` lowest
/// indices among the drawn layers stay on.
inline std::vector<bool> sample_active_layers(const CsnPolicy& policy, std::size_t n_layers, std::uint64_t seed) {
    policy.validate();
    const CounterRng rng(derive_seed(seed, stable_hash("csn-gate")));
    std::vector<bool> mask(n_layers, false);
    int active = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const bool drawn = rng.uniform(l) < policy.probability;
        if (drawn && active < policy.max_active) {
            mask[l] = true;
            ++active;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Covariance matching

/// C x C matrix of the flattened (HW x C) features: F^T F. No mean removal.
inline Eigen::MatrixXd gram(const FeatureMap& f) {
    const auto m = f.matrix();
    return m * m.transpose();
}

struct CmlResult {
    double loss = 0.0;
    FeatureMap grad_a;
    FeatureMap grad_b;
};

inline constexpr double kCmlGradEpsilon = 1e-12;

/// Frobenius norm of gram(a) - gram(b), with gradients
///   dL/dA = 2 A D / L,  dL/dB = -2 B D / L   (flattened layout)
/// and zero gradients when L < 1e-12.
inline CmlResult cml_loss(const FeatureMap& a, const FeatureMap& b) {
    if (a.channels != b.channels) {
        throw ValidationError("cml_loss: channel mismatch " + std::to_string(a.channels) + " vs " +
                              std::to_string(b.channels));
    }
    const Eigen::MatrixXd d = gram(a) - gram(b);
    CmlResult r;
    r.loss = d.norm();
    r.grad_a = FeatureMap(a.channels, a.height, a.width);
    r.grad_b = FeatureMap(b.channels, b.height, b.width);
    if (r.loss < kCmlGradEpsilon) return r;

    // In the C x HW layout the gradient is D * M (D is symmetric).
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMat> ga(r.grad_a.values.data(), a.channels, static_cast<Eigen::Index>(a.plane_size()));
    Eigen::Map<RowMat> gb(r.grad_b.values.data(), b.channels, static_cast<Eigen::Index>(b.plane_size()));
    ga.noalias() = (2.0 / r.loss) * d * a.matrix();
    gb.noalias() = (-2.0 / r.loss) * d * b.matrix();
    return r;
}

/// Max over all coordinates of both inputs of |analytic - central difference|
/// / max(1, |central difference|).
inline double finite_diff_check(const FeatureMap& a, const FeatureMap& b, double h) {
    const CmlResult analytic = cml_loss(a, b);
    if (!(analytic.loss > 1e-6)) {
        throw ValidationError("finite_diff_check: loss must exceed 1e-6 (inputs too close to the nonsmooth point)");
    }
    if (!(h > 0.0)) throw ValidationError("finite_diff_check: step must be > 0");
    double worst = 0.0;
    auto sweep = [&](FeatureMap x, const FeatureMap& grad, bool first) {
        for (std::size_t i = 0; i < x.values.size(); ++i) {
            const double orig = x.values[i];
            x.values[i] = orig + h;
            const double up = first ? cml_loss(x, b).loss : cml_loss(a, x).loss;
            x.values[i] = orig - h;
            const double down = first ? cml_loss(x, b).loss : cml_loss(a, x).loss;
            x.values[i] = orig;
            const double numeric = (up - down) / (2.0 * h);
            worst = std::max(worst, std::abs(grad.values[i] - numeric) / std::max(1.0, std::abs(numeric)));
        }
    };
    sweep(a, analytic.grad_a, true);
    sweep(b, analytic.grad_b, false);
    return worst;
}

// ---------------------------------------------------------------------------
// Toy backbone

inline FeatureMap raster_to_feature_map(const ImageRaster& r) {
    FeatureMap f(ImageRaster::kChannels, r.height, r.width);
    std::copy(r.pixels.begin(), r.pixels.end(), f.values.begin());
    return f;
}

/// Fixed stack of 3x3 stride-2 convolutions (padding 1) with ReLU. Weights are
/// He-scaled normals drawn from the seed; no training.
class ToyBackbone {
public:
    static constexpr int kLayers = 4;

    explicit ToyBackbone(std::uint64_t weights_seed, int in_channels = 3, int width = 8) {
        int cin = in_channels;
        for (int l = 0; l < kLayers; ++l) {
            Layer layer;
            layer.in = cin;
            layer.out = width;
            layer.weights.resize(static_cast<std::size_t>(layer.out) * layer.in * 9);
            CounterStream rng(derive_seed(weights_seed, stable_hash("toy-backbone"), static_cast<std::uint64_t>(l)));
            const double scale = std::sqrt(2.0 / (9.0 * layer.in));
            for (auto& w : layer.weights) w = scale * rng.normal();
            layer.bias.assign(static_cast<std::size_t>(layer.out), 0.0);
            for (auto& b : layer.bias) b = 0.05 * rng.normal();
            layers_.push_back(std::move(layer));
            cin = width;
        }
    }

    int layer_count() const noexcept { return kLayers; }

    FeatureMap apply_layer(int l, const FeatureMap& in) const {
        const Layer& L = layers_[static_cast<std::size_t>(l)];
        if (in.channels != L.in) throw ValidationError("ToyBackbone: input channel mismatch");
        const int oh = (in.height + 1) / 2;
        const int ow = (in.width + 1) / 2;
        FeatureMap out(L.out, oh, ow);
        for (int o = 0; o < L.out; ++o) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    double acc = L.bias[static_cast<std::size_t>(o)];
                    for (int i = 0; i < L.in; ++i) {
                        const double* w = &L.weights[(static_cast<std::size_t>(o) * L.in + i) * 9];
                        for (int ky = 0; ky < 3; ++ky) {
                            const int sy = 2 * y + ky - 1;
                            if (sy < 0 || sy >= in.height) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                const int sx = 2 * x + kx - 1;
                                if (sx < 0 || sx >= in.width) continue;
                                acc += w[ky * 3 + kx] * in.at(i, sy, sx);
                            }
                        }
                    }
                    out.at(o, y, x) = std::max(0.0, acc);
                }
            }
        }
        return out;
    }

private:
    struct Layer {
        int in = 0;
        int out = 0;
        std::vector<double> weights;  // [out][in][3][3]
        std::vector<double> bias;
    };
    std::vector<Layer> layers_;
};

/// Seeded perfect matching of {0..n-1} (n even): shuffle, then pair neighbours.
inline std::vector<std::pair<std::size_t, std::size_t>> random_pairing(std::size_t n, std::uint64_t seed) {
    if (n < 2 || n % 2 != 0) throw ValidationError("random_pairing: batch size must be even and >= 2");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    const CounterRng rng(derive_seed(seed, stable_hash("csn-pairing")));
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i, i + 1)]);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < n; i += 2) pairs.emplace_back(perm[i], perm[i + 1]);
    return pairs;
}

struct PairLoss {
    int layer = 0;
    std::size_t a = 0;
    std::size_t b = 0;
    double loss = 0.0;
};

struct ForwardResult {
    /// layers[l][i]: output of layer l for batch item i, after CSN if active.
    std::vector<std::vector<FeatureMap>> layers;
    std::vector<bool> active;
    std::vector<PairLoss> losses;
    /// Sum of pair losses; empty when no layer was active.
    std::optional<double> total_cml;
};

/// Forward pass with CSN after each layer the gate opens. At an active layer
/// the batch is paired, statistics are swapped within each pair, and the CML
/// of the swapped pair is recorded.
inline ForwardResult toy_backbone_forward(const std::vector<FeatureMap>& batch, std::uint64_t weights_seed,
                                          const CsnPolicy& policy, std::uint64_t pairing_seed) {
    if (batch.size() < 2 || batch.size() % 2 != 0) {
        throw ValidationError("toy_backbone_forward: batch size must be even and >= 2, got " + std::to_string(batch.size()));
    }
    for (const auto& f : batch) f.validate();
    policy.validate();

    const ToyBackbone net(weights_seed, batch.front().channels);
    ForwardResult res;
    res.active = sample_active_layers(policy, static_cast<std::size_t>(net.layer_count()), pairing_seed);

    std::vector<FeatureMap> cur = batch;
    for (int l = 0; l < net.layer_count(); ++l) {
        for (auto& f : cur) f = net.apply_layer(l, f);
        if (res.active[static_cast<std::size_t>(l)]) {
            const auto pairs = random_pairing(cur.size(), derive_seed(pairing_seed, static_cast<std::uint64_t>(l)));
            for (const auto& [i, j] : pairs) {
                auto [fa, fb] = cross_style_swap(cur[i], cur[j], policy.epsilon);
                const double loss = cml_loss(fa, fb).loss;
                res.losses.push_back({l, i, j, loss});
                res.total_cml = res.total_cml.value_or(0.0) + loss;
                cur[i] = std::move(fa);
                cur[j] = std::move(fb);
            }
        }
        res.layers.push_back(cur);
    }
    return res;
}

}  // namespace godiff
