#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "frame.hpp"

namespace nurdstab {

namespace fs = std::filesystem;

// --- PGM (binary P5; 16-bit samples are big-endian per the format) ---------

inline void write_pgm(const fs::path& path, const BScan& frame, int bit_depth = 16) {
    if (bit_depth != 8 && bit_depth != 16) throw ContractError("write_pgm: bit depth must be 8 or 16");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_pgm: cannot open " + path.string());
    const int maxval = bit_depth == 8 ? 255 : 65535;
    out << "P5\n" << frame.width << " " << frame.height << "\n" << maxval << "\n";
    std::vector<unsigned char> buf;
    buf.reserve(static_cast<std::size_t>(frame.height) * frame.width * (bit_depth / 8));
    for (float v : frame.pixels) {
        double q = std::clamp(static_cast<double>(v), 0.0, 1.0) * maxval;
        unsigned s = static_cast<unsigned>(std::lround(q));
        if (bit_depth == 16) buf.push_back(static_cast<unsigned char>(s >> 8));
        buf.push_back(static_cast<unsigned char>(s & 0xff));
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write_pgm: short write to " + path.string());
}

namespace detail {

inline int pnm_token(std::istream& in) {
    // Whitespace-separated decimal token; '#' starts a comment to end of line.
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {}
        } else if (!std::isspace(c)) {
            break;
        }
    }
    if (c == EOF) throw IoError("pgm: truncated header");
    int v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw IoError("pgm: malformed header");
    return v;
}

}  // namespace detail

inline BScan read_pgm(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_pgm: cannot open " + path.string());
    char m0 = 0, m1 = 0;
    in.get(m0).get(m1);
    if (m0 != 'P' || m1 != '5') throw IoError("read_pgm: not a binary PGM: " + path.string());
    int w = detail::pnm_token(in);
    int h = detail::pnm_token(in);
    int maxval = detail::pnm_token(in);
    if (maxval != 255 && maxval != 65535) throw IoError("read_pgm: unsupported maxval");
    BScan frame(h, w);
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<unsigned char> buf(n * (maxval == 255 ? 1 : 2));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw IoError("read_pgm: truncated data in " + path.string());
    const double scale = 1.0 / maxval;
    if (maxval == 255) {
        for (std::size_t i = 0; i < n; ++i) frame.pixels[i] = static_cast<float>(buf[i] * scale);
    } else {
        for (std::size_t i = 0; i < n; ++i)
            frame.pixels[i] = static_cast<float>(((buf[2 * i] << 8) | buf[2 * i + 1]) * scale);
    }
    return frame;
}

// --- RGB (PPM P6, 8-bit) ----------------------------------------------------

struct RgbImage {
    int height = 0, width = 0;
    std::vector<float> pixels;  // row-major, 3 channels interleaved, [0,1]

    RgbImage() = default;
    RgbImage(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0.0f) {}
    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

inline void write_ppm(const fs::path& path, const RgbImage& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("write_ppm: cannot open " + path.string());
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> buf(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        buf[i] = static_cast<unsigned char>(std::lround(std::clamp(static_cast<double>(img.pixels[i]), 0.0, 1.0) * 255.0));
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write_ppm: short write to " + path.string());
}

// --- Warp CSV ----------------------------------------------------------------

inline void write_warps_csv(const fs::path& path, const std::vector<WarpVector>& warps) {
    std::ofstream out(path);
    if (!out) throw IoError("write_warps_csv: cannot open " + path.string());
    char buf[40];
    for (const auto& w : warps) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", w[i]);
            if (i) out << ',';
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw IoError("write_warps_csv: short write to " + path.string());
}

inline std::vector<WarpVector> read_warps_csv(const fs::path& path) {
    if (!fs::is_regular_file(path))
        throw IoError("read_warps_csv: not a file: " + path.string() +
                      (fs::is_directory(path) ? " (expected a warps CSV, e.g. <stream>/warps.csv)"
                                              : ""));
    std::ifstream in(path);
    if (!in) throw IoError("read_warps_csv: cannot open " + path.string());
    std::vector<WarpVector> warps;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        WarpVector w;
        const char* p = line.c_str();
        char* end = nullptr;
        for (;;) {
            double v = std::strtod(p, &end);
            if (end == p) throw IoError("read_warps_csv: malformed row in " + path.string());
            w.push_back(v);
            p = end;
            while (*p == ' ') ++p;
            if (*p == ',') {
                ++p;
            } else if (*p == '\0' || *p == '\r') {
                break;
            } else {
                throw IoError("read_warps_csv: unexpected character in " + path.string());
            }
        }
        warps.push_back(std::move(w));
    }
    return warps;
}

// --- Stream directories ------------------------------------------------------
//
// A stream is a directory: manifest.json, frame_%05d.pgm per frame, and
// optionally warps.csv holding one absolute warp row per frame.

inline std::string frame_name(long k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "frame_%05ld.pgm", k);
    return buf;
}

inline std::string scan_mode_name(ScanMode m) {
    switch (m) {
        case ScanMode::InternalPullback: return "internal_pullback";
        case ScanMode::RoboticOuterScan: return "robotic_outer";
        case ScanMode::Stationary: return "stationary";
    }
    throw ContractError("scan_mode_name: bad enum value");
}

inline ScanMode scan_mode_from_name(const std::string& s) {
    if (s == "internal_pullback") return ScanMode::InternalPullback;
    if (s == "robotic_outer") return ScanMode::RoboticOuterScan;
    if (s == "stationary") return ScanMode::Stationary;
    throw IoError("manifest: unknown scan_mode '" + s + "'");
}

struct StreamInfo {
    int height = 0, width = 0;
    long frame_count = 0;
    int bit_depth = 16;
    ScanMode scan_mode = ScanMode::InternalPullback;
    bool ground_truth = false;
};

inline void write_manifest(const fs::path& dir, const StreamInfo& info) {
    nlohmann::json j;
    j["height"] = info.height;
    j["width"] = info.width;
    j["frame_count"] = info.frame_count;
    j["bit_depth"] = info.bit_depth;
    j["scan_mode"] = scan_mode_name(info.scan_mode);
    j["ground_truth"] = info.ground_truth;
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("write_manifest: cannot open " + (dir / "manifest.json").string());
    out << j.dump(2) << '\n';
}

inline StreamInfo read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("read_manifest: cannot open " + (dir / "manifest.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("read_manifest: " + std::string(e.what()));
    }
    StreamInfo info;
    try {
        info.height = j.at("height").get<int>();
        info.width = j.at("width").get<int>();
        info.frame_count = j.at("frame_count").get<long>();
        info.bit_depth = j.value("bit_depth", 16);
        info.scan_mode = scan_mode_from_name(j.value("scan_mode", std::string("internal_pullback")));
        info.ground_truth = j.value("ground_truth", false);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("read_manifest: missing field: " + std::string(e.what()));
    }
    if (info.height <= 0 || info.width <= 0 || info.frame_count < 0)
        throw IoError("read_manifest: invalid dimensions");
    return info;
}

// Incremental writer: frames stream out one at a time so a long stabilization
// run never holds the output stream in memory.
class StreamWriter {
public:
    StreamWriter(fs::path dir, int height, int width, ScanMode mode, int bit_depth = 16, bool with_truth = false)
        : dir_(std::move(dir)) {
        info_.height = height;
        info_.width = width;
        info_.scan_mode = mode;
        info_.bit_depth = bit_depth;
        info_.ground_truth = with_truth;
        fs::create_directories(dir_);
    }

    void push(const BScan& frame) {
        if (frame.height != info_.height || frame.width != info_.width)
            throw ContractError("StreamWriter: frame shape mismatch");
        write_pgm(dir_ / frame_name(info_.frame_count), frame, info_.bit_depth);
        ++info_.frame_count;
    }

    void push(const BScan& frame, const WarpVector& truth) {
        push(frame);
        warps_.push_back(truth);
    }

    void finalize() {
        if (info_.ground_truth) {
            if (static_cast<long>(warps_.size()) != info_.frame_count)
                throw ContractError("StreamWriter: ground-truth rows must match frame count");
            write_warps_csv(dir_ / "warps.csv", warps_);
        }
        write_manifest(dir_, info_);
    }

    const StreamInfo& info() const { return info_; }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    StreamInfo info_;
    std::vector<WarpVector> warps_;
};

class StreamReader {
public:
    explicit StreamReader(fs::path dir) : dir_(std::move(dir)), info_(read_manifest(dir_)) {
        if (info_.ground_truth) {
            warps_ = read_warps_csv(dir_ / "warps.csv");
            if (static_cast<long>(warps_.size()) != info_.frame_count)
                throw IoError("StreamReader: warps.csv row count disagrees with manifest");
            for (const auto& w : warps_)
                if (static_cast<int>(w.size()) != info_.height)
                    throw IoError("StreamReader: warp row length disagrees with height");
        }
    }

    const StreamInfo& info() const { return info_; }
    bool has_truth() const { return info_.ground_truth; }
    const WarpVector& truth(long k) const { return warps_.at(static_cast<std::size_t>(k)); }

    BScan frame(long k) const {
        if (k < 0 || k >= info_.frame_count) throw ContractError("StreamReader: frame index out of range");
        BScan f = read_pgm(dir_ / frame_name(k));
        if (f.height != info_.height || f.width != info_.width)
            throw IoError("StreamReader: frame shape disagrees with manifest: " + frame_name(k));
        f.frame_index = k;
        return f;
    }

private:
    fs::path dir_;
    StreamInfo info_;
    std::vector<WarpVector> warps_;
};

inline void write_stream(const fs::path& dir, const FrameStream& s, int bit_depth = 16) {
    const bool truth = !s.ground_truth_warps.empty();
    if (truth && s.ground_truth_warps.size() != s.frames.size())
        throw ContractError("write_stream: ground truth must cover every frame");
    StreamWriter w(dir, s.height(), s.width(), s.scan_mode, bit_depth, truth);
    for (std::size_t k = 0; k < s.frames.size(); ++k) {
        if (truth)
            w.push(s.frames[k], s.ground_truth_warps[k]);
        else
            w.push(s.frames[k]);
    }
    w.finalize();
}

inline FrameStream read_stream(const fs::path& dir) {
    StreamReader r(dir);
    FrameStream s;
    s.scan_mode = r.info().scan_mode;
    s.frames.reserve(static_cast<std::size_t>(r.info().frame_count));
    for (long k = 0; k < r.info().frame_count; ++k) s.frames.push_back(r.frame(k));
    if (r.has_truth())
        for (long k = 0; k < r.info().frame_count; ++k) s.ground_truth_warps.push_back(r.truth(k));
    return s;
}

}  // namespace nurdstab
