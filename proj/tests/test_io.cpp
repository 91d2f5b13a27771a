#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "scseg/feature_io.hpp"
#include "scseg/rng.hpp"
#include "scseg/synth.hpp"

using namespace scseg;
namespace fs = std::filesystem;

namespace {

// All stored payloads are float32; quantize before comparing round trips.
double f32q(double v) { return static_cast<double>(static_cast<float>(v)); }

LayerStack random_stack(Rng& rng) {
    LayerStack stack;
    const std::size_t layers = rng.uniform_index(1, 4);
    for (std::size_t l = 0; l < layers; ++l) {
        Matrix m(rng.uniform_index(1, 20), rng.uniform_index(1, 8));
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = f32q(rng.normal(0, 3));
        stack.emplace_back(std::move(m));
    }
    return stack;
}

bool stacks_equal(const LayerStack& a, const LayerStack& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t l = 0; l < a.size(); ++l) {
        if (a[l].n() != b[l].n() || a[l].dim() != b[l].dim()) return false;
        if (std::memcmp(a[l].values().data(), b[l].values().data(),
                        a[l].values().size() * sizeof(double)) != 0)
            return false;
    }
    return true;
}

bool grids_equal(const Grid& a, const Grid& b) {
    return a.height() == b.height() && a.width() == b.width() &&
           a.channels() == b.channels() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string le32(std::uint32_t v) {
    std::string s;
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    return s;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("feature stacks round-trip bit exactly") {
    Rng rng(211);
    const fs::path dir = fresh_dir("scseg_io_fts");
    for (int rep = 0; rep < 50; ++rep) {
        LayerStack stack = random_stack(rng);
        CHECK(stacks_equal(decode_features(encode_features(stack)), stack));
        const std::string path = (dir / ("s" + std::to_string(rep) + ".fts")).string();
        write_features(path, stack);
        CHECK(stacks_equal(read_features(path), stack));
    }
    fs::remove_all(dir);
}

TEST_CASE("encoding a decoded byte string reproduces it verbatim") {
    Rng rng(213);
    for (int rep = 0; rep < 10; ++rep) {
        const std::string bytes = encode_features(random_stack(rng));
        CHECK(encode_features(decode_features(bytes)) == bytes);
    }
}

TEST_CASE("the on-disk layout is pinned little-endian") {
    const std::string path = std::string(SCSEG_SOURCE_DIR) + "/tests/fixtures/endian.fts";
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(raw.size() == 32);
    CHECK(raw.compare(0, 4, "FTS1") == 0);
    CHECK(static_cast<unsigned char>(raw[4]) == 1); // low byte first
    CHECK(static_cast<unsigned char>(raw[7]) == 0);

    LayerStack stack = read_features(path);
    REQUIRE(stack.size() == 1);
    REQUIRE(stack[0].n() == 2);
    REQUIRE(stack[0].dim() == 2);
    CHECK(stack[0].values().at(0, 0) == 1.0);
    CHECK(stack[0].values().at(0, 1) == -2.0);
    CHECK(stack[0].values().at(1, 0) == 0.5);
    CHECK(stack[0].values().at(1, 1) == 3.0);

    // The writer produces the identical byte sequence.
    CHECK(encode_features(stack) == raw);
}

TEST_CASE("malformed feature bytes report the offending offset") {
    LayerStack one = {TokenMatrix(Matrix(2, 2, std::vector<double>{1, 2, 3, 4}))};
    const std::string good = encode_features(one);

    std::string magic = good;
    magic[3] = 'X';
    CHECK_THROWS_WITH_AS(decode_features(magic), doctest::Contains("magic"), FormatError);
    try {
        decode_features(magic);
    } catch (const FormatError& e) {
        CHECK(e.byte_offset() == 0);
    }

    try {
        decode_features(good.substr(0, 6)); // header cut inside the layer count
    } catch (const FormatError& e) {
        CHECK(e.byte_offset() == 4);
    }

    try {
        decode_features(good.substr(0, 10)); // dims cut
    } catch (const FormatError& e) {
        CHECK(e.byte_offset() == 8);
    }

    try {
        decode_features(good.substr(0, good.size() - 4)); // one payload float short
    } catch (const FormatError& e) {
        CHECK(e.byte_offset() == 16); // the layer's payload start
    }

    std::string trailing = good + "x";
    try {
        decode_features(trailing);
    } catch (const FormatError& e) {
        CHECK(e.byte_offset() == good.size());
    }
    CHECK_THROWS_AS(decode_features(trailing), FormatError);

    std::string zero_dim = "FTS1" + le32(1) + le32(0) + le32(2);
    try {
        decode_features(zero_dim);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.byte_offset() == 8);
    }

    // A header that promises more data than any real file carries must fail
    // cleanly on the first missing element, however large its dimensions.
    std::string huge = "FTS1" + le32(1) + le32(0xffffffffu) + le32(0xffffffffu);
    try {
        decode_features(huge);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.byte_offset() == 16);
    }

    CHECK_THROWS_AS(read_features("/nonexistent/path/x.fts"), FormatError);
}

TEST_CASE("mask bytes are exactly the expected portable graymap") {
    Grid mask(2, 2, 1);
    mask.at(0, 0, 0) = 1.0;
    mask.at(1, 1, 0) = 1.0;
    const std::string bytes = encode_mask_pgm(mask);
    std::string want = "P5\n2 2\n255\n";
    want.push_back(static_cast<char>(255));
    want.push_back(static_cast<char>(0));
    want.push_back(static_cast<char>(0));
    want.push_back(static_cast<char>(255));
    CHECK(bytes == want);
    CHECK(grids_equal(decode_mask_pgm(bytes), mask));
}

TEST_CASE("mask round trips preserve the grid and pin width-first headers") {
    Rng rng(217);
    const fs::path dir = fresh_dir("scseg_io_pgm");
    for (int rep = 0; rep < 20; ++rep) {
        Grid g(rng.uniform_index(1, 9), rng.uniform_index(1, 9), 1);
        for (std::size_t i = 0; i < g.size(); ++i)
            g.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        CHECK(grids_equal(decode_mask_pgm(encode_mask_pgm(g)), g));
        const std::string path = (dir / ("m" + std::to_string(rep) + ".pgm")).string();
        write_mask_pgm(path, g);
        CHECK(grids_equal(read_mask_pgm(path), g));
    }
    fs::remove_all(dir);

    // Rectangular case: 2 rows x 3 cols stores a "3 2" header.
    Grid rect(2, 3, 1);
    rect.at(0, 2, 0) = 1.0;
    const std::string bytes = encode_mask_pgm(rect);
    CHECK(bytes.compare(0, 9, "P5\n3 2\n25") == 0);
    Grid back = decode_mask_pgm(bytes);
    CHECK(back.height() == 2);
    CHECK(back.width() == 3);
    CHECK(back.at(0, 2, 0) == 1.0);
    CHECK(back.at(1, 2, 0) == 0.0);
}

TEST_CASE("mask parsing thresholds at 128 and accepts comments") {
    std::string bytes = "P5\n# a comment\n2 1\n# another\n255\n";
    bytes.push_back(static_cast<char>(127));
    bytes.push_back(static_cast<char>(128));
    Grid g = decode_mask_pgm(bytes);
    REQUIRE(g.height() == 1);
    REQUIRE(g.width() == 2);
    CHECK(g.at(0, 0, 0) == 0.0);
    CHECK(g.at(0, 1, 0) == 1.0);
}

TEST_CASE("malformed masks are rejected") {
    CHECK_THROWS_AS(decode_mask_pgm("P6\n1 1\n255\n "), FormatError);
    CHECK_THROWS_AS(decode_mask_pgm("P5\n1 1\n15\n "), FormatError);  // wrong maxval
    CHECK_THROWS_AS(decode_mask_pgm("P5\n2 2\n255\nab"), FormatError); // short pixels
    std::string trailing = "P5\n1 1\n255\n";
    trailing.push_back(static_cast<char>(255));
    trailing += "junk";
    CHECK_THROWS_AS(decode_mask_pgm(trailing), FormatError);
    CHECK_THROWS_AS(decode_mask_pgm("P5\nx 1\n255\n "), FormatError);
    CHECK_THROWS_AS(encode_mask_pgm(Grid(2, 2, 3)), ShapeError);
    CHECK_THROWS_AS(read_mask_pgm("/nonexistent/path/x.pgm"), FormatError);
}

TEST_CASE("episode directories round-trip the synthesized pool") {
    PoolSpec spec;
    spec.n_high = 1;
    spec.n_low = 2;
    spec.dim = 6;
    spec.tokens_per_layer = {4, 16};
    spec.seed = 219;
    Episode ep = synth_pool(spec);

    const fs::path dir = fresh_dir("scseg_io_episode");
    write_episode(dir.string(), ep);
    Episode back = read_episode(dir.string());

    CHECK(back.category == ep.category);
    CHECK(stacks_equal(back.query, ep.query));
    CHECK(grids_equal(back.query_truth, ep.query_truth));
    REQUIRE(back.supports.size() == ep.supports.size());
    for (std::size_t i = 0; i < ep.supports.size(); ++i) {
        CHECK(back.supports[i].id == ep.supports[i].id);
        CHECK(stacks_equal(back.supports[i].layers, ep.supports[i].layers));
        CHECK(grids_equal(back.supports[i].mask, ep.supports[i].mask));
        REQUIRE(back.supports[i].layer_masks.size() == ep.supports[i].layer_masks.size());
        for (std::size_t l = 0; l < 2; ++l)
            CHECK(grids_equal(back.supports[i].layer_masks[l],
                              ep.supports[i].layer_masks[l]));
    }

    // Writing the same episode twice produces identical files.
    const fs::path dir2 = fresh_dir("scseg_io_episode2");
    write_episode(dir2.string(), ep);
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::ifstream a(entry.path(), std::ios::binary);
        std::ifstream b(dir2 / entry.path().filename(), std::ios::binary);
        REQUIRE(b.good());
        std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
        std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
        CHECK(sa == sb);
    }

    // A missing support file surfaces as a format error, not silence.
    fs::remove(dir / "s1.fts");
    CHECK_THROWS_AS(read_episode(dir.string()), FormatError);
    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("episode manifests must agree with their payload files") {
    PoolSpec spec;
    spec.n_low = 1;
    spec.dim = 4;
    spec.tokens_per_layer = {4};
    spec.seed = 223;
    Episode ep = synth_pool(spec);

    const fs::path dir = fresh_dir("scseg_io_manifest");
    write_episode(dir.string(), ep);

    {
        std::ofstream out(dir / "episode.cfg", std::ios::trunc);
        out << "category = " << ep.category << "\nlayers = 2\nsupport_ids = 0\n";
    }
    CHECK_THROWS_AS(read_episode(dir.string()), FormatError); // query has 1 layer

    {
        std::ofstream out(dir / "episode.cfg", std::ios::trunc);
        out << "category = " << ep.category << "\nlayers = 1\nsupport_ids =\n";
    }
    CHECK_THROWS_AS(read_episode(dir.string()), FormatError); // no supports

    // A missing directory fails on its absent manifest.
    CHECK_THROWS_AS(read_episode((dir / "missing").string()), Error);
    fs::remove_all(dir);
}
