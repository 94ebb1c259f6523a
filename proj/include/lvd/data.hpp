#pragma once

#include <string>
#include <vector>

#include "lvd/tensor.hpp"

namespace lvd {

enum class ShapeKind { square, circle, triangle };
enum class ColorName { red, green, blue, yellow };
enum class MoveDir { left, right, up, down };

std::string to_string(ShapeKind s);
std::string to_string(ColorName c);
std::string to_string(MoveDir d);
ShapeKind shape_from_string(const std::string& s);
ColorName color_from_string(const std::string& s);
MoveDir dir_from_string(const std::string& s);

struct ClipSpec {
    ShapeKind shape = ShapeKind::square;
    ColorName color = ColorName::red;
    MoveDir direction = MoveDir::left;
    double speed = 8.0;   // pixels per second
    double fps = 8.0;
    int frames = 8;
    int size = 16;        // square frames, size x size
    uint64_t seed = 0;    // start position

    bool operator==(const ClipSpec&) const = default;
};

// caption is a pure function of (shape, color, direction)
std::string caption_of(const ClipSpec& spec);

struct CaptionAttributes {
    ShapeKind shape;
    ColorName color;
    MoveDir direction;
};
// throws std::invalid_argument when the caption does not follow the grammar
CaptionAttributes parse_caption(const std::string& caption);

// every word the caption grammar can produce, for building the vocabulary
std::vector<std::string> caption_vocabulary();

struct RenderedClip {
    Tensor video;  // [1, 3, F, S, S], pixel values in [0,1]
    std::string caption;
    double fps = 8.0;
};

// Deterministic anti-aliased render. Per-frame displacement is speed/fps and
// positions wrap at the borders.
RenderedClip generate_clip(const ClipSpec& spec);

ClipSpec with_resolution(const ClipSpec& spec, int size, int frames);

// Line-delimited manifest: one clip per line, fields in the order
//   shape color direction speed fps frames size seed
void write_manifest(const std::vector<ClipSpec>& specs, const std::string& path);
std::vector<ClipSpec> read_manifest(const std::string& path);

// frame f of a [1,C,F,H,W] clip as [C,H,W]
Tensor video_frame(const Tensor& video, int64_t f);

}  // namespace lvd
