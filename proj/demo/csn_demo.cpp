// Runs the toy backbone on a source image and its night-stylized twin with
// CSN forced on, printing the gate mask and per-pair covariance losses.
//
//   csn_demo [seed]

#include <cstdio>
#include <cstdlib>

#include "godiff/csn.hpp"
#include "godiff/ptdg.hpp"

int main(int argc, char** argv) {
    const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 7;
    const auto source = godiff::synth_toy_dataset({.seed = seed, .n_images = 2});
    const auto night = godiff::generate_pseudo_domain(source, godiff::builtin_style_specs().at("night-rainy"),
                                                      godiff::default_descriptor_sets(), godiff::ProceduralGenerator{},
                                                      {.seed = seed});

    std::vector<godiff::FeatureMap> batch;
    for (const auto* ds : {&source, &night}) {
        for (const auto& img : ds->images) batch.push_back(godiff::raster_to_feature_map(img.raster));
    }

    for (double p : {0.0, 0.1, 1.0}) {
        const auto r = godiff::toy_backbone_forward(batch, seed, {.probability = p, .max_active = 2}, seed + 1);
        std::printf("p = %.1f  mask ", p);
        for (bool on : r.active) std::printf("%d", on ? 1 : 0);
        std::printf("\n");
        for (const auto& l : r.losses) std::printf("  layer %d pair (%zu,%zu)  CML %.6g\n", l.layer, l.a, l.b, l.loss);
        if (r.total_cml) std::printf("  total %.6g\n", *r.total_cml);
    }

    // Gradient check on the last layer's features of a source/night pair.
    const godiff::ToyBackbone net(seed);
    godiff::FeatureMap a = batch[0], b = batch[2];
    for (int l = 0; l < net.layer_count(); ++l) {
        a = net.apply_layer(l, a);
        b = net.apply_layer(l, b);
    }
    std::printf("finite-difference check, max relative error %.3g\n", godiff::finite_diff_check(a, b, 1e-5));
}
