#include "ftea/image_io.hpp"

#include <cmath>
#include <fstream>

#include "ftea/errors.hpp"

namespace ftea {

namespace {

// Skips whitespace and '#' comments, then parses one ASCII integer.
int read_pnm_int(std::istream& is, const char* what) {
    int ch = is.get();
    while (ch != EOF && (std::isspace(ch) || ch == '#')) {
        if (ch == '#')
            while (ch != EOF && ch != '\n') ch = is.get();
        ch = is.get();
    }
    if (ch == EOF || !std::isdigit(ch)) throw io_error(std::string("PNM: bad ") + what);
    int value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        ch = is.get();
    }
    if (ch == EOF) throw io_error(std::string("PNM: truncated after ") + what);
    return value;
}

uint8_t quantize8(double v) {
    const long q = std::lround(v * 255.0);
    return static_cast<uint8_t>(std::clamp(q, 0L, 255L));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.dim(0) != 3)
        throw std::invalid_argument("write_ppm: expected [3,H,W], got " + rgb.dims_str());
    const int h = rgb.dim(1), w = rgb.dim(2);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    os << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] = quantize8(rgb.at3(c, y, x));
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw io_error("write failed for '" + path.string() + "'");
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path.string() + "'");
    char m0 = 0, m1 = 0;
    is.get(m0).get(m1);
    if (m0 != 'P' || m1 != '6') throw io_error("PPM: bad magic in '" + path.string() + "'");
    const int w = read_pnm_int(is, "width");
    const int h = read_pnm_int(is, "height");
    const int maxval = read_pnm_int(is, "maxval");
    if (w < 1 || h < 1 || maxval != 255)
        throw io_error("PPM: unsupported geometry or maxval in '" + path.string() + "'");
    Tensor rgb({3, h, w});
    std::vector<unsigned char> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        if (!is.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size())))
            throw io_error("PPM: truncated pixel data in '" + path.string() + "'");
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                rgb.at3(c, y, x) = row[static_cast<size_t>(x) * 3 + static_cast<size_t>(c)] / 255.0;
    }
    return rgb;
}

void write_pgm16(const std::filesystem::path& path, int height, int width,
                 const std::vector<uint16_t>& values) {
    if (height < 1 || width < 1 ||
        values.size() != static_cast<size_t>(height) * static_cast<size_t>(width))
        throw std::invalid_argument("write_pgm16: bad geometry");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open '" + path.string() + "' for writing");
    os << "P5\n" << width << " " << height << "\n65535\n";
    std::vector<unsigned char> buf(values.size() * 2);
    for (size_t i = 0; i < values.size(); ++i) {
        buf[i * 2] = static_cast<unsigned char>(values[i] >> 8);  // MSB first
        buf[i * 2 + 1] = static_cast<unsigned char>(values[i] & 0xff);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw io_error("write failed for '" + path.string() + "'");
}

Pgm16 read_pgm16(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open '" + path.string() + "'");
    char m0 = 0, m1 = 0;
    is.get(m0).get(m1);
    if (m0 != 'P' || m1 != '5') throw io_error("PGM: bad magic in '" + path.string() + "'");
    Pgm16 out;
    out.width = read_pnm_int(is, "width");
    out.height = read_pnm_int(is, "height");
    const int maxval = read_pnm_int(is, "maxval");
    if (out.width < 1 || out.height < 1 || maxval < 1 || maxval > 65535)
        throw io_error("PGM: unsupported geometry or maxval in '" + path.string() + "'");
    const size_t count = static_cast<size_t>(out.width) * static_cast<size_t>(out.height);
    out.values.resize(count);
    if (maxval <= 255) {
        std::vector<unsigned char> buf(count);
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(count)))
            throw io_error("PGM: truncated pixel data in '" + path.string() + "'");
        for (size_t i = 0; i < count; ++i) out.values[i] = buf[i];
    } else {
        std::vector<unsigned char> buf(count * 2);
        if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw io_error("PGM: truncated pixel data in '" + path.string() + "'");
        for (size_t i = 0; i < count; ++i)
            out.values[i] = static_cast<uint16_t>((buf[i * 2] << 8) | buf[i * 2 + 1]);
    }
    return out;
}

}  // namespace ftea
