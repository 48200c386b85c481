#include "partpool/image_io.hpp"

#include <fstream>

#include "partpool/errors.hpp"

namespace partpool {

namespace {

void write_pnm(const std::string& path, const ImageU8& img, const char* magic,
               std::size_t channels) {
    if (img.channels != channels)
        throw UsageError(std::string("wrong channel count for ") + magic);
    if (img.pixels.size() != img.width * img.height * channels)
        throw UsageError("image buffer size mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open image for writing: " + path);
    os << magic << "\n" << img.width << " " << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw DataError("image write failed: " + path);
}

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream& is) {
    std::string tok;
    int ch;
    while ((ch = is.get()) != EOF) {
        if (ch == '#') {
            while ((ch = is.get()) != EOF && ch != '\n') {}
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

ImageU8 read_pnm(const std::string& path, const char* magic, std::size_t channels) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open image: " + path);
    if (next_token(is) != magic) throw DataError("bad magic in " + path);
    ImageU8 img;
    img.channels = channels;
    try {
        img.width = std::stoul(next_token(is));
        img.height = std::stoul(next_token(is));
        const unsigned maxval = std::stoul(next_token(is));
        if (maxval != 255) throw DataError("unsupported maxval in " + path);
    } catch (const std::logic_error&) {
        throw DataError("malformed header in " + path);
    }
    img.pixels.resize(img.width * img.height * channels);
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw DataError("truncated image data in " + path);
    return img;
}

} // namespace

void write_ppm(const std::string& path, const ImageU8& img) { write_pnm(path, img, "P6", 3); }
void write_pgm(const std::string& path, const ImageU8& img) { write_pnm(path, img, "P5", 1); }
ImageU8 read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }
ImageU8 read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }

} // namespace partpool
