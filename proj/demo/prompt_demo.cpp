// Prints the global and instance prompts for one synthetic image in each
// built-in style domain.
//
//   prompt_demo [seed]

#include <cstdlib>
#include <iostream>

#include "godiff/prompt.hpp"
#include "godiff/ptdg.hpp"

int main(int argc, char** argv) {
    const std::uint64_t seed = argc > 1 ? std::strtoull(argv[1], nullptr, 10) : 7;
    const auto source = godiff::synth_toy_dataset({.seed = seed, .n_images = 1, .min_boxes = 2, .max_boxes = 3});
    const auto& img = source.images.front();
    const auto sets = godiff::default_descriptor_sets();
    const godiff::StubTagger tagger;
    const auto source_tags = godiff::extract_tags(img, tagger);

    std::cout << "source tags:";
    for (const auto& t : source_tags) std::cout << " " << t;
    std::cout << "\n";

    for (const auto& [name, spec] : godiff::builtin_style_specs()) {
        const auto global = godiff::decode_prompt(godiff::augment_tags(source_tags, spec.domain_tags));
        std::cout << "\n[" << name << "]\n  " << global.text << "\n";
        for (std::size_t b = 0; b < img.annotations.size(); ++b) {
            const auto s = godiff::instance_prompt_seed(seed, name, img.id, b);
            std::cout << "  box " << b << " (" << img.annotations[b].category
                      << "): " << godiff::gen_instance_prompt(sets, img.annotations[b].category, s).text << "\n";
        }
    }
}
