// Minimal mixing backend implementing the diffusion-adapter command-line contract.
// Blends the input toward a flat colour derived from the prompt; prompts listed in the
// config's "fail_prompts" array make it exit non-zero.

#include <CLI11.hpp>

#include <iostream>

#include "semalign/io.hpp"

int main(int argc, char** argv) {
    CLI::App app{"fake mixer backend"};
    std::string input, output, prompt, config;
    double mix = 0.5;
    std::uint64_t seed = 0;
    app.add_option("--input", input)->required();
    app.add_option("--output", output)->required();
    app.add_option("--prompt", prompt)->required();
    app.add_option("--mix-factor", mix)->required();
    app.add_option("--seed", seed);
    app.add_option("--config", config);
    CLI11_PARSE(app, argc, argv);

    using namespace semalign;
    try {
        if (!config.empty()) {
            json cfg = read_json(config);
            for (const auto& p : cfg.value("fail_prompts", json::array()))
                if (p.get<std::string>() == prompt) {
                    std::cerr << "refusing prompt " << prompt << "\n";
                    return 1;
                }
        }
        Image img = read_png(input);
        const std::uint64_t h = fnv1a(prompt);
        const float color[3] = {static_cast<float>(h & 0xFF) / 255.0f, static_cast<float>((h >> 8) & 0xFF) / 255.0f,
                                static_cast<float>((h >> 16) & 0xFF) / 255.0f};
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < img.height(); ++y)
                for (int x = 0; x < img.width(); ++x)
                    img.at(c, y, x) = static_cast<float>((1.0 - mix) * img.at(c, y, x) + mix * color[c]);
        write_png(output, img);
    } catch (const std::exception& e) {
        std::cerr << e.what() << "\n";
        return 1;
    }
    return 0;
}
