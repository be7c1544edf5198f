#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "paracolor/data/image.hpp"
#include "paracolor/fusion.hpp"
#include "paracolor/networks.hpp"

namespace paracolor::cli {

/// Output root used when neither --out-dir nor a config value is given:
/// $PARACOLOR_OUT when set, otherwise "runs/default".
std::string default_out_dir();

struct Colorized {
    data::RgbImage foreground;
    data::RgbImage background;
    data::RgbImage fused;
    bool had_color = false;  // input carried chrominance that was discarded
};

/// L is taken from the input at full size; each generator sees it resized to
/// its own resolution and its ab prediction is resized back before recombination.
Colorized colorize(nets::Generator& foreground, nets::Generator& background, fusion::FusionNet& fusion_net,
                   const data::RgbImage& input, fusion::Strategy strategy);

/// True when the three channels differ anywhere by more than half an 8-bit step.
bool has_color(const data::RgbImage& img);

/// Entry point shared by the executable and the tests. `args[0]` is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace paracolor::cli
