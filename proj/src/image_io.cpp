#include "rfedit/image_io.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace rfedit {

uint8_t quantize_unit(float v) {
    if (!(v > 0.0f)) v = 0.0f;  // also catches NaN
    if (v > 1.0f) v = 1.0f;
    const float q = std::floor(v * 255.0f + 0.5f);
    return static_cast<uint8_t>(q > 255.0f ? 255.0f : q);
}

void write_ppm(const std::string& path, const Tensor& image) {
    if (image.ndim() != 3 || image.dim(2) != 3)
        throw PpmError(PpmError::Kind::kBadHeader, "expected [H,W,3] image: " + path);
    const int h = image.dim(0), w = image.dim(1);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw PpmError(PpmError::Kind::kIo, "cannot open for writing: " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<size_t>(x) * 3 + c] =
                    quantize_unit(image.at((static_cast<size_t>(y) * w + x) * 3 + c));
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw PpmError(PpmError::Kind::kIo, "write failed: " + path);
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (!std::isspace(c)) {
            tok.push_back(static_cast<char>(c));
            break;
        }
    }
    while ((c = in.get()) != EOF && !std::isspace(c)) tok.push_back(static_cast<char>(c));
    if (c != EOF) in.unget();  // leave the terminating whitespace for the caller
    return tok;
}

int parse_dim(const std::string& tok, const std::string& path) {
    if (tok.empty()) throw PpmError(PpmError::Kind::kBadHeader, "truncated header: " + path);
    size_t pos = 0;
    int v;
    try {
        v = std::stoi(tok, &pos);
    } catch (const std::exception&) {
        throw PpmError(PpmError::Kind::kBadHeader, "bad header field '" + tok + "': " + path);
    }
    if (pos != tok.size() || v <= 0)
        throw PpmError(PpmError::Kind::kBadHeader, "bad header field '" + tok + "': " + path);
    return v;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw PpmError(PpmError::Kind::kIo, "cannot open: " + path);
    if (next_token(f) != "P6")
        throw PpmError(PpmError::Kind::kBadHeader, "not a binary PPM: " + path);
    const int w = parse_dim(next_token(f), path);
    const int h = parse_dim(next_token(f), path);
    const int maxval = parse_dim(next_token(f), path);
    if (maxval != 255)
        throw PpmError(PpmError::Kind::kBadHeader, "unsupported maxval: " + path);
    // exactly one whitespace byte separates header and payload
    const int sep = f.get();
    if (sep == EOF || !std::isspace(sep))
        throw PpmError(PpmError::Kind::kBadHeader, "missing payload separator: " + path);

    std::vector<uint8_t> bytes(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (static_cast<size_t>(f.gcount()) != bytes.size())
        throw PpmError(PpmError::Kind::kTruncated, "truncated pixel data: " + path);

    Tensor img = Tensor::zeros({h, w, 3});
    for (size_t i = 0; i < bytes.size(); ++i) img.at(i) = static_cast<float>(bytes[i]) / 255.0f;
    return img;
}

void write_mask_ppm(const std::string& path, const std::vector<uint8_t>& mask, int width,
                    int height) {
    if (mask.size() != static_cast<size_t>(width) * height)
        throw PpmError(PpmError::Kind::kBadHeader, "mask size mismatch: " + path);
    Tensor img = Tensor::zeros({height, width, 3});
    for (size_t p = 0; p < mask.size(); ++p) {
        const float v = mask[p] ? 1.0f : 0.0f;
        for (int c = 0; c < 3; ++c) img.at(p * 3 + c) = v;
    }
    write_ppm(path, img);
}

}  // namespace rfedit
