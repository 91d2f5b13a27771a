#include "scseg/feature_io.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "scseg/config.hpp"

namespace scseg {

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path, 0);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write file: " + path, 0);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write: " + path, 0);
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw FormatError(std::string("truncated: ") + what + " needs " +
                                  std::to_string(n) + " bytes, " +
                                  std::to_string(bytes.size() - pos) + " left",
                              pos);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        pos += 4;
        return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
               (static_cast<std::uint32_t>(p[2]) << 16) |
               (static_cast<std::uint32_t>(p[3]) << 24);
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
};

void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
    if (v > std::numeric_limits<std::uint32_t>::max())
        throw FormatError(std::string("dimension overflow: ") + what + " = " +
                              std::to_string(v),
                          0);
    return static_cast<std::uint32_t>(v);
}

} // namespace

LayerStack decode_features(const std::string& bytes) {
    Reader r{bytes};
    r.need(4, "magic");
    if (bytes.compare(0, 4, "FTS1") != 0) throw FormatError("bad magic, want FTS1", 0);
    r.pos = 4;
    const std::uint32_t layers = r.u32("layer count");
    struct Dim {
        std::uint32_t rows, cols;
    };
    std::vector<Dim> dims(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        dims[l].rows = r.u32("rows");
        dims[l].cols = r.u32("cols");
        if (dims[l].rows == 0 || dims[l].cols == 0)
            throw FormatError("layer " + std::to_string(l) + " has zero dimension",
                              r.pos - 8);
    }
    LayerStack stack;
    stack.reserve(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        const std::size_t count =
            static_cast<std::size_t>(dims[l].rows) * static_cast<std::size_t>(dims[l].cols);
        // Check the payload fits before allocating, so a hostile header
        // cannot drive a huge allocation. count * 4 could overflow; the
        // divided form cannot.
        if (count > (bytes.size() - r.pos) / 4)
            throw FormatError("truncated: layer " + std::to_string(l) + " payload needs " +
                                  std::to_string(count) + " floats, " +
                                  std::to_string((bytes.size() - r.pos) / 4) + " left",
                              r.pos);
        Matrix m(dims[l].rows, dims[l].cols);
        for (std::size_t i = 0; i < count; ++i)
            m.data()[i] = static_cast<double>(r.f32("payload"));
        stack.emplace_back(std::move(m));
    }
    if (r.pos != bytes.size())
        throw FormatError("trailing data: " + std::to_string(bytes.size() - r.pos) +
                              " bytes past the last payload",
                          r.pos);
    return stack;
}

std::string encode_features(const LayerStack& stack) {
    std::string out = "FTS1";
    put_u32(out, checked_u32(stack.size(), "layer count"));
    for (const TokenMatrix& t : stack) {
        put_u32(out, checked_u32(t.n(), "rows"));
        put_u32(out, checked_u32(t.dim(), "cols"));
    }
    for (const TokenMatrix& t : stack) {
        const Matrix& m = t.values();
        for (std::size_t i = 0; i < m.size(); ++i)
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i])));
    }
    return out;
}

LayerStack read_features(const std::string& path) { return decode_features(slurp(path)); }

void write_features(const std::string& path, const LayerStack& stack) {
    spit(path, encode_features(stack));
}

namespace {

/// PGM token scanner: skips whitespace and `#` comments between tokens.
struct PgmScanner {
    const std::string& bytes;
    std::size_t pos = 0;

    void skip() {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos;
            } else {
                break;
            }
        }
    }
    std::size_t number(const char* what) {
        skip();
        const std::size_t start = pos;
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > 1u << 24)
                throw FormatError(std::string("pgm: ") + what + " out of range", start);
            ++pos;
        }
        if (pos == start)
            throw FormatError(std::string("pgm: expected ") + what, pos);
        return v;
    }
};

} // namespace

Grid decode_mask_pgm(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
        throw FormatError("pgm: bad magic, want P5", 0);
    PgmScanner s{bytes, 2};
    const std::size_t w = s.number("width");
    const std::size_t h = s.number("height");
    const std::size_t maxval = s.number("maxval");
    if (maxval != 255)
        throw FormatError("pgm: maxval " + std::to_string(maxval) + ", want 255", s.pos);
    if (s.pos >= bytes.size() ||
        !std::isspace(static_cast<unsigned char>(bytes[s.pos])))
        throw FormatError("pgm: expected single whitespace before pixels", s.pos);
    ++s.pos;
    if (bytes.size() - s.pos < h * w)
        throw FormatError("pgm: truncated pixel data, want " + std::to_string(h * w) +
                              " bytes, have " + std::to_string(bytes.size() - s.pos),
                          s.pos);
    if (bytes.size() - s.pos > h * w)
        throw FormatError("pgm: trailing data past pixel payload", s.pos + h * w);
    Grid g(h, w, 1);
    for (std::size_t i = 0; i < h * w; ++i)
        g.data()[i] =
            static_cast<unsigned char>(bytes[s.pos + i]) >= 128 ? 1.0 : 0.0;
    return g;
}

std::string encode_mask_pgm(const Grid& mask) {
    if (mask.channels() != 1)
        throw ShapeError("pgm: want 1 channel, got " + mask.shape_str());
    std::string out = "P5\n" + std::to_string(mask.width()) + " " +
                      std::to_string(mask.height()) + "\n255\n";
    out.reserve(out.size() + mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        out.push_back(mask.data()[i] > 0.5 ? static_cast<char>(255) : static_cast<char>(0));
    return out;
}

Grid read_mask_pgm(const std::string& path) { return decode_mask_pgm(slurp(path)); }

void write_mask_pgm(const std::string& path, const Grid& mask) {
    spit(path, encode_mask_pgm(mask));
}

void write_episode(const std::string& dir, const Episode& ep) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path base(dir);

    Config manifest;
    manifest.set("category", ep.category);
    manifest.set("layers", std::to_string(ep.layer_count()));
    std::string ids;
    for (const SupportItem& s : ep.supports) {
        if (!ids.empty()) ids += ",";
        ids += std::to_string(s.id);
    }
    manifest.set("support_ids", ids);
    spit((base / "episode.cfg").string(), manifest.canonical());

    write_features((base / "query.fts").string(), ep.query);
    write_mask_pgm((base / "truth.pgm").string(), ep.query_truth);
    for (const SupportItem& s : ep.supports) {
        const std::string stem = "s" + std::to_string(s.id);
        write_features((base / (stem + ".fts")).string(), s.layers);
        write_mask_pgm((base / (stem + "_mask.pgm")).string(), s.mask);
        for (std::size_t l = 0; l < s.layer_masks.size(); ++l)
            write_mask_pgm((base / (stem + "_mask_l" + std::to_string(l) + ".pgm")).string(),
                           s.layer_masks[l]);
    }
}

Episode read_episode(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path base(dir);
    const Config manifest = Config::parse_file((base / "episode.cfg").string());

    Episode ep;
    ep.category = manifest.get_str("category", "");
    const std::size_t layers = manifest.get_count("layers", 0);
    if (layers == 0) throw FormatError("episode.cfg: missing or zero layers", 0);

    ep.query = read_features((base / "query.fts").string());
    if (ep.query.size() != layers)
        throw FormatError("episode: query.fts has " + std::to_string(ep.query.size()) +
                              " layers, manifest says " + std::to_string(layers),
                          0);
    ep.query_truth = read_mask_pgm((base / "truth.pgm").string());

    for (const std::string& tok : manifest.get_list("support_ids", {})) {
        if (tok.empty()) continue;
        SupportItem s;
        s.id = static_cast<std::size_t>(std::stoull(tok));
        const std::string stem = "s" + tok;
        s.layers = read_features((base / (stem + ".fts")).string());
        if (s.layers.size() != layers)
            throw FormatError("episode: " + stem + ".fts has " +
                                  std::to_string(s.layers.size()) + " layers, manifest says " +
                                  std::to_string(layers),
                              0);
        s.mask = read_mask_pgm((base / (stem + "_mask.pgm")).string());
        for (std::size_t l = 0; l < layers; ++l)
            s.layer_masks.push_back(
                read_mask_pgm((base / (stem + "_mask_l" + std::to_string(l) + ".pgm")).string()));
        ep.supports.push_back(std::move(s));
    }
    if (ep.supports.empty()) throw FormatError("episode.cfg: no supports listed", 0);
    return ep;
}

} // namespace scseg
