#include "diffsfm/image_io.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dsfm {

namespace {

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
    std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
    if (!f) throw std::runtime_error("cannot write file: " + path.string());
    return f;
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
    std::ifstream f(path, binary ? std::ios::binary : std::ios::in);
    if (!f) throw std::runtime_error("cannot read file: " + path.string());
    return f;
}

// next whitespace-delimited token, skipping '#' comments (PNM headers)
std::string next_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            while (in.get(c) && c != '\n') {
            }
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(c);
    }
    if (tok.empty()) throw std::runtime_error("truncated image header");
    return tok;
}

}  // namespace

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

void write_pfm(const std::filesystem::path& path, const Tensor& map) {
    Shape s = map.shape();
    if (map.rank() == 3 && s[2] == 1) s = {s[0], s[1]};
    if (s.size() != 2) throw std::invalid_argument("write_pfm: want [H,W] or [H,W,1], got " + shape_str(map.shape()));
    const int H = s[0], W = s[1];
    auto f = open_out(path, true);
    f << "Pf\n" << W << " " << H << "\n-1.0\n";
    const auto& v = map.data();
    std::vector<float> row(W);
    for (int i = H - 1; i >= 0; --i) {  // bottom-up
        for (int j = 0; j < W; ++j) row[j] = static_cast<float>(v[static_cast<std::size_t>(i) * W + j]);
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(W * sizeof(float)));
    }
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_pfm(const std::filesystem::path& path) {
    auto f = open_in(path, true);
    const std::string magic = next_token(f);
    if (magic != "Pf") throw std::runtime_error(path.string() + ": not a grayscale PFM (magic '" + magic + "')");
    const int W = std::stoi(next_token(f));
    const int H = std::stoi(next_token(f));
    const double scale = std::stod(next_token(f));
    if (W <= 0 || H <= 0) throw std::runtime_error(path.string() + ": bad PFM dimensions");
    if (scale >= 0) throw std::runtime_error(path.string() + ": big-endian PFM not supported");
    std::vector<double> out(static_cast<std::size_t>(H) * W);
    std::vector<float> row(W);
    for (int i = H - 1; i >= 0; --i) {
        f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(W * sizeof(float)));
        if (!f) throw std::runtime_error(path.string() + ": truncated PFM data");
        for (int j = 0; j < W; ++j) out[static_cast<std::size_t>(i) * W + j] = row[j];
    }
    return Tensor::of({H, W}, std::move(out));
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) {
    if (image.rank() != 2 && image.rank() != 3)
        throw std::invalid_argument("write_ppm: want [H,W], [H,W,1] or [H,W,3], got " + shape_str(image.shape()));
    const int H = image.shape()[0], W = image.shape()[1];
    const int C = image.rank() == 3 ? image.shape()[2] : 1;
    if (C != 1 && C != 3) throw std::invalid_argument("write_ppm: 1 or 3 channels, got " + shape_str(image.shape()));
    auto f = open_out(path, true);
    f << "P6\n" << W << " " << H << "\n255\n";
    const auto& v = image.data();
    std::vector<unsigned char> row(static_cast<std::size_t>(W) * 3);
    auto quantize = [](double x) {
        return static_cast<unsigned char>(std::lround(std::min(1.0, std::max(0.0, x)) * 255.0));
    };
    for (int i = 0; i < H; ++i) {
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < 3; ++c)
                row[static_cast<std::size_t>(j) * 3 + c] =
                    quantize(v[(static_cast<std::size_t>(i) * W + j) * C + (C == 3 ? c : 0)]);
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
    auto f = open_in(path, true);
    const std::string magic = next_token(f);
    if (magic != "P6") throw std::runtime_error(path.string() + ": not a binary PPM (magic '" + magic + "')");
    const int W = std::stoi(next_token(f));
    const int H = std::stoi(next_token(f));
    const int maxval = std::stoi(next_token(f));
    if (W <= 0 || H <= 0 || maxval != 255) throw std::runtime_error(path.string() + ": unsupported PPM header");
    std::vector<unsigned char> raw(static_cast<std::size_t>(H) * W * 3);
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw std::runtime_error(path.string() + ": truncated PPM data");
    std::vector<double> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / 255.0;
    return Tensor::of({H, W, 3}, std::move(out));
}

void write_poses_csv(const std::filesystem::path& path, std::span<const PoseSE3> poses) {
    auto f = open_out(path, false);
    f << "frame,rx,ry,rz,tx,ty,tz\n";
    for (std::size_t k = 0; k < poses.size(); ++k) {
        const PoseSE3& p = poses[k];
        f << k;
        for (double v : {p.rotation[0], p.rotation[1], p.rotation[2], p.translation[0], p.translation[1],
                         p.translation[2]})
            f << "," << format_double(v);
        f << "\n";
    }
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::vector<PoseSE3> read_poses_csv(const std::filesystem::path& path) {
    auto f = open_in(path, false);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error(path.string() + ": empty pose file");
    if (line.rfind("frame,", 0) != 0)
        throw std::runtime_error(path.string() + ": missing pose CSV header, got '" + line + "'");
    std::vector<PoseSE3> poses;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.size() != 7)
            throw std::runtime_error(path.string() + ": pose row needs 7 values, got " +
                                     std::to_string(vals.size()));
        poses.push_back({{vals[1], vals[2], vals[3]}, {vals[4], vals[5], vals[6]}});
    }
    return poses;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    auto f = open_out(path, true);
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    auto f = open_in(path, true);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace dsfm
