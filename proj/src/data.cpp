#include "lvd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lvd/rng.hpp"

namespace lvd {

std::string to_string(ShapeKind s) {
    switch (s) {
        case ShapeKind::square: return "square";
        case ShapeKind::circle: return "circle";
        case ShapeKind::triangle: return "triangle";
    }
    return "?";
}

std::string to_string(ColorName c) {
    switch (c) {
        case ColorName::red: return "red";
        case ColorName::green: return "green";
        case ColorName::blue: return "blue";
        case ColorName::yellow: return "yellow";
    }
    return "?";
}

std::string to_string(MoveDir d) {
    switch (d) {
        case MoveDir::left: return "left";
        case MoveDir::right: return "right";
        case MoveDir::up: return "up";
        case MoveDir::down: return "down";
    }
    return "?";
}

ShapeKind shape_from_string(const std::string& s) {
    if (s == "square") return ShapeKind::square;
    if (s == "circle") return ShapeKind::circle;
    if (s == "triangle") return ShapeKind::triangle;
    throw std::invalid_argument("unknown shape: " + s);
}

ColorName color_from_string(const std::string& s) {
    if (s == "red") return ColorName::red;
    if (s == "green") return ColorName::green;
    if (s == "blue") return ColorName::blue;
    if (s == "yellow") return ColorName::yellow;
    throw std::invalid_argument("unknown color: " + s);
}

MoveDir dir_from_string(const std::string& s) {
    if (s == "left") return MoveDir::left;
    if (s == "right") return MoveDir::right;
    if (s == "up") return MoveDir::up;
    if (s == "down") return MoveDir::down;
    throw std::invalid_argument("unknown direction: " + s);
}

std::string caption_of(const ClipSpec& spec) {
    return to_string(spec.color) + " " + to_string(spec.shape) + " moving " +
           to_string(spec.direction);
}

CaptionAttributes parse_caption(const std::string& caption) {
    std::istringstream is(caption);
    std::string color, shape, moving, dir;
    if (!(is >> color >> shape >> moving >> dir) || moving != "moving")
        throw std::invalid_argument("unparseable caption: " + caption);
    std::string extra;
    if (is >> extra) throw std::invalid_argument("unparseable caption: " + caption);
    return CaptionAttributes{shape_from_string(shape), color_from_string(color),
                             dir_from_string(dir)};
}

std::vector<std::string> caption_vocabulary() {
    return {"red",    "green",  "blue",     "yellow", "square", "circle",
            "triangle", "moving", "left",     "right",  "up",     "down"};
}

namespace {

void rgb_of(ColorName c, double out[3]) {
    switch (c) {
        case ColorName::red: out[0] = 0.9; out[1] = 0.1; out[2] = 0.1; break;
        case ColorName::green: out[0] = 0.1; out[1] = 0.9; out[2] = 0.1; break;
        case ColorName::blue: out[0] = 0.15; out[1] = 0.25; out[2] = 0.95; break;
        case ColorName::yellow: out[0] = 0.9; out[1] = 0.9; out[2] = 0.1; break;
    }
}

void dir_of(MoveDir d, double out[2]) {
    switch (d) {
        case MoveDir::left: out[0] = -1; out[1] = 0; break;
        case MoveDir::right: out[0] = 1; out[1] = 0; break;
        case MoveDir::up: out[0] = 0; out[1] = -1; break;
        case MoveDir::down: out[0] = 0; out[1] = 1; break;
    }
}

// shortest wrapped offset on a ring of circumference s
double wrap_delta(double d, double s) {
    d = std::fmod(d, s);
    if (d < -s / 2) d += s;
    if (d >= s / 2) d -= s;
    return d;
}

// anti-aliased coverage of pixel center (dx, dy) relative to the shape center
double coverage(ShapeKind shape, double dx, double dy, double r) {
    switch (shape) {
        case ShapeKind::circle: {
            double dist = std::sqrt(dx * dx + dy * dy);
            return std::clamp(r - dist + 0.5, 0.0, 1.0);
        }
        case ShapeKind::square: {
            double cx = std::clamp(r - std::abs(dx) + 0.5, 0.0, 1.0);
            double cy = std::clamp(r - std::abs(dy) + 0.5, 0.0, 1.0);
            return cx * cy;
        }
        case ShapeKind::triangle: {
            // apex-up isoceles triangle; inner distance to the three edges
            const double ax = 0.0, ay = -1.15 * r;
            const double bx = -1.0 * r, by = 0.75 * r;
            const double cx = 1.0 * r, cy = 0.75 * r;
            auto edge_dist = [&](double x1, double y1, double x2, double y2) {
                double ex = x2 - x1, ey = y2 - y1;
                double len = std::sqrt(ex * ex + ey * ey);
                // positive on the interior side for counter-clockwise winding
                return (ex * (dy - y1) - ey * (dx - x1)) / len;
            };
            double d1 = edge_dist(ax, ay, bx, by);
            double d2 = edge_dist(bx, by, cx, cy);
            double d3 = edge_dist(cx, cy, ax, ay);
            double inner = std::min({d1, d2, d3});
            return std::clamp(inner + 0.5, 0.0, 1.0);
        }
    }
    return 0.0;
}

}  // namespace

RenderedClip generate_clip(const ClipSpec& spec) {
    if (spec.size < 8) throw std::invalid_argument("generate_clip: size must be >= 8");
    if (spec.frames < 1) throw std::invalid_argument("generate_clip: frames must be >= 1");
    if (spec.fps <= 0.0) throw std::invalid_argument("generate_clip: fps must be positive");
    if (spec.speed < 0.0) throw std::invalid_argument("generate_clip: negative speed");

    const int s = spec.size;
    const int f = spec.frames;
    double rgb[3];
    rgb_of(spec.color, rgb);
    double dir[2];
    dir_of(spec.direction, dir);
    double radius = 0.22 * s;
    if (spec.shape == ShapeKind::triangle) radius = 0.26 * s;

    RngStream rng(derive_seed(spec.seed, "clip_start"));
    double cx0 = rng.uniform() * s;
    double cy0 = rng.uniform() * s;
    double step = spec.speed / spec.fps;  // pixels per frame

    Tensor video = Tensor::zeros({1, 3, f, s, s});
    double* pv = video.data();
    auto at = [&](int c, int fr, int y, int x) -> double& {
        return pv[((static_cast<int64_t>(c) * f + fr) * s + y) * s + x];
    };

    for (int fr = 0; fr < f; ++fr) {
        double cx = std::fmod(cx0 + dir[0] * step * fr, static_cast<double>(s));
        double cy = std::fmod(cy0 + dir[1] * step * fr, static_cast<double>(s));
        if (cx < 0) cx += s;
        if (cy < 0) cy += s;
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                double dx = wrap_delta(x + 0.5 - cx, s);
                double dy = wrap_delta(y + 0.5 - cy, s);
                double cov = coverage(spec.shape, dx, dy, radius);
                if (cov <= 0.0) continue;
                for (int c = 0; c < 3; ++c) at(c, fr, y, x) = rgb[c] * cov;
            }
    }
    return RenderedClip{video, caption_of(spec), spec.fps};
}

ClipSpec with_resolution(const ClipSpec& spec, int size, int frames) {
    ClipSpec out = spec;
    double scale = static_cast<double>(size) / static_cast<double>(spec.size);
    out.size = size;
    out.frames = frames;
    out.speed = spec.speed * scale;  // keep motion proportional to the frame
    return out;
}

void write_manifest(const std::vector<ClipSpec>& specs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out.precision(17);
    for (const auto& c : specs)
        out << to_string(c.shape) << " " << to_string(c.color) << " "
            << to_string(c.direction) << " " << c.speed << " " << c.fps << " " << c.frames
            << " " << c.size << " " << c.seed << "\n";
}

std::vector<ClipSpec> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest: " + path);
    std::vector<ClipSpec> specs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        std::string shape, color, dir;
        ClipSpec c;
        if (!(is >> shape >> color >> dir >> c.speed >> c.fps >> c.frames >> c.size >>
              c.seed))
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": expected 8 fields");
        std::string extra;
        if (is >> extra)
            throw std::runtime_error("manifest line " + std::to_string(lineno) +
                                     ": trailing fields");
        try {
            c.shape = shape_from_string(shape);
            c.color = color_from_string(color);
            c.direction = dir_from_string(dir);
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error("manifest line " + std::to_string(lineno) + ": " +
                                     e.what());
        }
        specs.push_back(c);
    }
    return specs;
}

Tensor video_frame(const Tensor& video, int64_t f) {
    if (video.rank() != 5 || video.dim(0) != 1)
        throw std::invalid_argument("video_frame: expected [1,C,F,H,W]");
    Tensor fr = slice(video, 2, f, 1);
    return reshape(fr, {video.dim(1), video.dim(3), video.dim(4)});
}

}  // namespace lvd
