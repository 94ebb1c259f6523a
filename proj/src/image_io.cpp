#include "lvd/image_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <climits>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace lvd {

namespace {

uint8_t to_byte(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return static_cast<uint8_t>(std::lround(c * 255.0));
}

void check_frame(const Tensor& frame, const char* op) {
    if (frame.rank() != 3 || frame.dim(0) != 3)
        throw ImageIoError(std::string(op) + ": expected [3,H,W] frame");
}

std::vector<uint8_t> frame_to_rgb8(const Tensor& frame) {
    int64_t h = frame.dim(1), w = frame.dim(2);
    std::vector<uint8_t> rgb(static_cast<size_t>(h * w * 3));
    const double* p = frame.data();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                rgb[(y * w + x) * 3 + c] = to_byte(p[(c * h + y) * w + x]);
    return rgb;
}

Tensor rgb8_to_frame(const std::vector<uint8_t>& rgb, int64_t h, int64_t w) {
    Tensor frame = Tensor::zeros({3, h, w});
    double* p = frame.data();
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            for (int64_t c = 0; c < 3; ++c)
                p[(c * h + y) * w + x] = rgb[(y * w + x) * 3 + c] / 255.0;
    return frame;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& frame) {
    check_frame(frame, "write_ppm");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageIoError("cannot write image: " + path);
    int64_t h = frame.dim(1), w = frame.dim(2);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> rgb = frame_to_rgb8(frame);
    out.write(reinterpret_cast<const char*>(rgb.data()),
              static_cast<std::streamsize>(rgb.size()));
    if (!out) throw ImageIoError("short write: " + path);
}

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot read image: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6") throw ImageIoError("not a binary PPM: " + path);
    auto next_int = [&] {
        // skip whitespace and '#' comments
        for (;;) {
            int ch = in.peek();
            if (ch == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(ch)) {
                in.get();
            } else {
                break;
            }
        }
        int64_t v;
        if (!(in >> v)) throw ImageIoError("bad PPM header: " + path);
        return v;
    };
    int64_t w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw ImageIoError("unsupported PPM depth: " + path);
    in.get();  // single whitespace after header
    std::vector<uint8_t> rgb(static_cast<size_t>(w * h * 3));
    in.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!in) throw ImageIoError("truncated PPM: " + path);
    return rgb8_to_frame(rgb, h, w);
}

Tensor frames_grid(const std::vector<Tensor>& frames) {
    if (frames.empty()) throw ImageIoError("frames_grid: no frames");
    for (const auto& f : frames) check_frame(f, "frames_grid");
    int64_t h = frames[0].dim(1), w = frames[0].dim(2);
    int64_t n = static_cast<int64_t>(frames.size());
    int64_t gw = n * w + (n - 1);
    Tensor grid = Tensor::full({3, h, gw}, 1.0);  // white separators
    for (int64_t i = 0; i < n; ++i) {
        const double* src = frames[static_cast<size_t>(i)].data();
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t y = 0; y < h; ++y)
                std::memcpy(grid.data() + (c * h + y) * gw + i * (w + 1),
                            src + (c * h + y) * w, static_cast<size_t>(w) * sizeof(double));
    }
    return grid;
}

// ---------------------------------------------------------------------------
// GIF
// ---------------------------------------------------------------------------

namespace {

struct Palette {
    std::vector<std::array<uint8_t, 3>> colors;
    // index into colors for each pixel
    std::vector<uint8_t> map_pixels(const std::vector<uint8_t>& rgb) const {
        std::map<uint32_t, uint8_t> exact;
        for (size_t i = 0; i < colors.size(); ++i) {
            uint32_t key = (uint32_t(colors[i][0]) << 16) | (uint32_t(colors[i][1]) << 8) |
                           colors[i][2];
            exact.emplace(key, static_cast<uint8_t>(i));
        }
        std::vector<uint8_t> idx(rgb.size() / 3);
        for (size_t p = 0; p < idx.size(); ++p) {
            uint32_t key = (uint32_t(rgb[p * 3]) << 16) | (uint32_t(rgb[p * 3 + 1]) << 8) |
                           rgb[p * 3 + 2];
            auto it = exact.find(key);
            if (it != exact.end()) {
                idx[p] = it->second;
            } else {
                // nearest color
                int best = 0;
                long best_d = LONG_MAX;
                for (size_t i = 0; i < colors.size(); ++i) {
                    long dr = long(rgb[p * 3]) - colors[i][0];
                    long dg = long(rgb[p * 3 + 1]) - colors[i][1];
                    long db = long(rgb[p * 3 + 2]) - colors[i][2];
                    long d = dr * dr + dg * dg + db * db;
                    if (d < best_d) {
                        best_d = d;
                        best = static_cast<int>(i);
                    }
                }
                idx[p] = static_cast<uint8_t>(best);
            }
        }
        return idx;
    }
};

Palette build_palette(const std::vector<uint8_t>& rgb) {
    std::map<uint32_t, int> hist;
    for (size_t p = 0; p < rgb.size() / 3; ++p) {
        uint32_t key = (uint32_t(rgb[p * 3]) << 16) | (uint32_t(rgb[p * 3 + 1]) << 8) |
                       rgb[p * 3 + 2];
        hist[key]++;
    }
    Palette pal;
    if (hist.size() <= 256) {
        for (const auto& [key, count] : hist)
            pal.colors.push_back({uint8_t(key >> 16), uint8_t(key >> 8), uint8_t(key)});
        return pal;
    }
    // median cut over the distinct colors
    struct Box {
        std::vector<std::array<uint8_t, 3>> pts;
    };
    std::vector<Box> boxes(1);
    for (const auto& [key, count] : hist)
        boxes[0].pts.push_back({uint8_t(key >> 16), uint8_t(key >> 8), uint8_t(key)});
    while (boxes.size() < 256) {
        // split the box with the largest channel range
        size_t target = 0;
        int best_range = -1, best_ch = 0;
        for (size_t b = 0; b < boxes.size(); ++b) {
            if (boxes[b].pts.size() < 2) continue;
            for (int c = 0; c < 3; ++c) {
                auto [mn, mx] = std::minmax_element(
                    boxes[b].pts.begin(), boxes[b].pts.end(),
                    [c](const auto& a, const auto& b2) { return a[c] < b2[c]; });
                int range = int((*mx)[c]) - int((*mn)[c]);
                if (range > best_range) {
                    best_range = range;
                    best_ch = c;
                    target = b;
                }
            }
        }
        if (best_range <= 0) break;
        Box& box = boxes[target];
        std::sort(box.pts.begin(), box.pts.end(),
                  [best_ch](const auto& a, const auto& b2) { return a[best_ch] < b2[best_ch]; });
        Box hi;
        size_t mid = box.pts.size() / 2;
        hi.pts.assign(box.pts.begin() + static_cast<long>(mid), box.pts.end());
        box.pts.resize(mid);
        boxes.push_back(std::move(hi));
    }
    for (const auto& b : boxes) {
        long r = 0, g = 0, bl = 0;
        for (const auto& p : b.pts) {
            r += p[0];
            g += p[1];
            bl += p[2];
        }
        size_t n = std::max<size_t>(1, b.pts.size());
        pal.colors.push_back({uint8_t(r / n), uint8_t(g / n), uint8_t(bl / n)});
    }
    return pal;
}

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

// GIF-flavoured LZW with variable code width and 4096-entry dictionary
void lzw_encode(std::string& out, const std::vector<uint8_t>& indices, int min_code_size) {
    const int clear_code = 1 << min_code_size;
    const int eoi_code = clear_code + 1;

    uint32_t bitbuf = 0;
    int bitcount = 0;
    std::string data;
    auto emit = [&](int code, int width) {
        bitbuf |= static_cast<uint32_t>(code) << bitcount;
        bitcount += width;
        while (bitcount >= 8) {
            data.push_back(static_cast<char>(bitbuf & 0xFF));
            bitbuf >>= 8;
            bitcount -= 8;
        }
    };

    std::map<std::pair<int, uint8_t>, int> dict;  // (prefix code, next byte) -> code
    int next_code = eoi_code + 1;
    int width = min_code_size + 1;
    emit(clear_code, width);

    int prefix = -1;
    for (uint8_t sym : indices) {
        if (prefix < 0) {
            prefix = sym;
            continue;
        }
        auto it = dict.find({prefix, sym});
        if (it != dict.end()) {
            prefix = it->second;
        } else {
            emit(prefix, width);
            dict[{prefix, sym}] = next_code;
            ++next_code;
            // width grows one code after 2^width is allocated, matching decoders
            if (next_code == (1 << width) + 1 && width < 12) ++width;
            if (next_code > 4095) {
                emit(clear_code, width);
                dict.clear();
                next_code = eoi_code + 1;
                width = min_code_size + 1;
            }
            prefix = sym;
        }
    }
    if (prefix >= 0) emit(prefix, width);
    emit(eoi_code, width);
    if (bitcount > 0) data.push_back(static_cast<char>(bitbuf & 0xFF));

    out.push_back(static_cast<char>(min_code_size));
    size_t pos = 0;
    while (pos < data.size()) {
        size_t block = std::min<size_t>(255, data.size() - pos);
        out.push_back(static_cast<char>(block));
        out.append(data, pos, block);
        pos += block;
    }
    out.push_back('\0');
}

std::vector<uint8_t> lzw_decode(const std::string& data, int min_code_size,
                                size_t expected_pixels) {
    const int clear_code = 1 << min_code_size;
    const int eoi_code = clear_code + 1;

    std::vector<std::vector<uint8_t>> dict;
    auto reset_dict = [&] {
        dict.assign(static_cast<size_t>(eoi_code) + 1, {});
        for (int i = 0; i < clear_code; ++i) dict[static_cast<size_t>(i)] = {uint8_t(i)};
    };
    reset_dict();

    std::vector<uint8_t> out;
    out.reserve(expected_pixels);
    uint32_t bitbuf = 0;
    int bitcount = 0;
    size_t pos = 0;
    int width = min_code_size + 1;
    int prev = -1;

    auto next_code = [&]() -> int {
        while (bitcount < width) {
            if (pos >= data.size()) return -1;
            bitbuf |= static_cast<uint32_t>(static_cast<unsigned char>(data[pos++]))
                      << bitcount;
            bitcount += 8;
        }
        int code = static_cast<int>(bitbuf & ((1u << width) - 1));
        bitbuf >>= width;
        bitcount -= width;
        return code;
    };

    for (;;) {
        int code = next_code();
        if (code < 0 || code == eoi_code) break;
        if (code == clear_code) {
            reset_dict();
            width = min_code_size + 1;
            prev = -1;
            continue;
        }
        std::vector<uint8_t> entry;
        if (code < static_cast<int>(dict.size()) && !dict[code].empty()) {
            entry = dict[code];
        } else if (prev >= 0) {
            entry = dict[prev];
            entry.push_back(dict[prev][0]);
        } else {
            throw ImageIoError("gif: corrupt LZW stream");
        }
        out.insert(out.end(), entry.begin(), entry.end());
        if (prev >= 0) {
            std::vector<uint8_t> fresh = dict[prev];
            fresh.push_back(entry[0]);
            dict.push_back(std::move(fresh));
            if (static_cast<int>(dict.size()) == (1 << width) && width < 12) ++width;
        }
        prev = code;
    }
    return out;
}

}  // namespace

void write_gif(const std::string& path, const std::vector<Tensor>& frames, double fps) {
    if (frames.empty()) throw ImageIoError("write_gif: no frames");
    if (fps <= 0.0) throw ImageIoError("write_gif: fps must be positive");
    for (const auto& f : frames) check_frame(f, "write_gif");
    int64_t h = frames[0].dim(1), w = frames[0].dim(2);
    for (const auto& f : frames)
        if (f.dim(1) != h || f.dim(2) != w)
            throw ImageIoError("write_gif: frames must share one size");

    std::string out;
    out += "GIF89a";
    put_u16(out, static_cast<uint16_t>(w));
    put_u16(out, static_cast<uint16_t>(h));
    out.push_back(0x00);  // no global color table
    out.push_back(0);     // background color
    out.push_back(0);     // aspect

    // loop forever
    out += std::string("\x21\xFF\x0B", 3);
    out += "NETSCAPE2.0";
    out += std::string("\x03\x01", 2);
    put_u16(out, 0);
    out.push_back('\0');

    int delay = std::max(1, static_cast<int>(std::lround(100.0 / fps)));
    for (const auto& frame : frames) {
        std::vector<uint8_t> rgb = frame_to_rgb8(frame);
        Palette pal = build_palette(rgb);
        std::vector<uint8_t> idx = pal.map_pixels(rgb);

        int bits = 2;
        while ((1 << bits) < static_cast<int>(pal.colors.size())) ++bits;
        int table_size = 1 << bits;

        // graphic control extension
        out += std::string("\x21\xF9\x04\x00", 4);
        put_u16(out, static_cast<uint16_t>(delay));
        out.push_back(0);  // no transparency
        out.push_back(0);

        // image descriptor with a local color table
        out.push_back(0x2C);
        put_u16(out, 0);
        put_u16(out, 0);
        put_u16(out, static_cast<uint16_t>(w));
        put_u16(out, static_cast<uint16_t>(h));
        out.push_back(static_cast<char>(0x80 | (bits - 1)));
        for (int i = 0; i < table_size; ++i) {
            if (i < static_cast<int>(pal.colors.size())) {
                out.push_back(static_cast<char>(pal.colors[i][0]));
                out.push_back(static_cast<char>(pal.colors[i][1]));
                out.push_back(static_cast<char>(pal.colors[i][2]));
            } else {
                out += std::string(3, '\0');
            }
        }
        lzw_encode(out, idx, std::max(2, bits));
    }
    out.push_back(0x3B);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw ImageIoError("cannot write gif: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw ImageIoError("short write on gif: " + path);
}

std::vector<Tensor> read_gif(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageIoError("cannot read gif: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (data.size() < 13 || data.compare(0, 6, "GIF89a") != 0)
        throw ImageIoError("not a GIF89a file: " + path);

    size_t pos = 6;
    auto u16 = [&](size_t at) {
        return static_cast<uint16_t>(static_cast<unsigned char>(data[at]) |
                                     (static_cast<unsigned char>(data[at + 1]) << 8));
    };
    int64_t gw = u16(pos);
    int64_t gh = u16(pos + 2);
    uint8_t packed = static_cast<uint8_t>(data[pos + 4]);
    pos += 7;
    std::vector<std::array<uint8_t, 3>> global_table;
    if (packed & 0x80) {
        int n = 2 << (packed & 0x07);
        for (int i = 0; i < n; ++i)
            global_table.push_back({uint8_t(data[pos + 3 * i]), uint8_t(data[pos + 3 * i + 1]),
                                    uint8_t(data[pos + 3 * i + 2])});
        pos += static_cast<size_t>(3 * n);
    }

    std::vector<Tensor> frames;
    while (pos < data.size()) {
        uint8_t block = static_cast<uint8_t>(data[pos++]);
        if (block == 0x3B) break;
        if (block == 0x21) {
            ++pos;  // label
            while (pos < data.size()) {
                uint8_t len = static_cast<uint8_t>(data[pos++]);
                if (len == 0) break;
                pos += len;
            }
        } else if (block == 0x2C) {
            int64_t fw = u16(pos + 4), fh = u16(pos + 6);
            uint8_t fpacked = static_cast<uint8_t>(data[pos + 8]);
            pos += 9;
            std::vector<std::array<uint8_t, 3>> table = global_table;
            if (fpacked & 0x80) {
                int n = 2 << (fpacked & 0x07);
                table.clear();
                for (int i = 0; i < n; ++i)
                    table.push_back({uint8_t(data[pos + 3 * i]),
                                     uint8_t(data[pos + 3 * i + 1]),
                                     uint8_t(data[pos + 3 * i + 2])});
                pos += static_cast<size_t>(3 * n);
            }
            if (fpacked & 0x40) throw ImageIoError("gif: interlace not supported");
            int min_code_size = static_cast<uint8_t>(data[pos++]);
            std::string lzw;
            while (pos < data.size()) {
                uint8_t len = static_cast<uint8_t>(data[pos++]);
                if (len == 0) break;
                lzw += data.substr(pos, len);
                pos += len;
            }
            std::vector<uint8_t> idx =
                lzw_decode(lzw, min_code_size, static_cast<size_t>(fw * fh));
            if (static_cast<int64_t>(idx.size()) < fw * fh)
                throw ImageIoError("gif: undersized frame data");
            std::vector<uint8_t> rgb(static_cast<size_t>(fw * fh * 3));
            for (int64_t p = 0; p < fw * fh; ++p) {
                const auto& c = table.at(idx[static_cast<size_t>(p)]);
                rgb[p * 3] = c[0];
                rgb[p * 3 + 1] = c[1];
                rgb[p * 3 + 2] = c[2];
            }
            frames.push_back(rgb8_to_frame(rgb, fh, fw));
        } else {
            throw ImageIoError("gif: unexpected block");
        }
    }
    (void)gw;
    (void)gh;
    return frames;
}

}  // namespace lvd
