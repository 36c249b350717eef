#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "contourfit/rng.hpp"
#include "contourfit/tensor_io.hpp"

using namespace contourfit;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
    const fs::path dir = fs::temp_directory_path() / "contourfit_io_test";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("tensor round trip is exact for float32 values", "[io]") {
    Rng rng(21);
    Tensor t({3, 5, 7});
    for (double& v : t.data) v = static_cast<double>(static_cast<float>(rng.normal(0.0, 2.0)));
    const fs::path path = temp_dir() / "roundtrip.cft";
    write_cft(path, t);
    const Tensor back = read_cft(path);
    REQUIRE(back.shape == t.shape);
    for (std::size_t i = 0; i < t.data.size(); ++i) REQUIRE(back.data[i] == t.data[i]);

    // a second write produces identical bytes
    const std::string once = encode_cft(t);
    const std::string twice = encode_cft(back);
    REQUIRE(once == twice);
}

TEST_CASE("tensor header layout", "[io]") {
    Tensor t({2, 3});
    for (std::size_t i = 0; i < 6; ++i) t.data[i] = static_cast<double>(i);
    const std::string bytes = encode_cft(t);
    REQUIRE(bytes.size() == 4 + 4 + 8 + 24);
    CHECK(bytes.substr(0, 4) == "CFT1");
    CHECK(static_cast<unsigned char>(bytes[4]) == 2); // rank, little-endian
    CHECK(static_cast<unsigned char>(bytes[8]) == 2); // dim 0
    CHECK(static_cast<unsigned char>(bytes[12]) == 3); // dim 1
}

TEST_CASE("corrupt tensors are rejected", "[io]") {
    Tensor t({4, 4});
    const std::string good = encode_cft(t);

    CHECK_THROWS_AS(decode_cft(good.substr(0, good.size() - 3)), FormatError);
    CHECK_THROWS_AS(decode_cft(good.substr(0, 6)), FormatError);

    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_cft(bad_magic), FormatError);

    std::string padded = good + "xx";
    CHECK_THROWS_AS(decode_cft(padded), FormatError);
}

TEST_CASE("mask adapter validates binary values", "[io]") {
    Tensor t({2, 2});
    t.data = {0.0, 1.0, 1.0, 0.5};
    CHECK_THROWS_AS(mask_from_tensor(t), FormatError);
    t.data = {0.0, 1.0, 1.0, 1.0};
    const BinaryMask m = mask_from_tensor(t);
    CHECK(m.area() == 3);

    const Tensor back = tensor_from_mask(m);
    REQUIRE(back.shape == t.shape);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(back.data[i] == t.data[i]);
}

TEST_CASE("grid adapter keeps row-major layout", "[io]") {
    Grid2D g(3, 2);
    g.at(2, 1) = 5.0;
    g.at(0, 1) = -1.0;
    const Tensor t = tensor_from_grid(g);
    REQUIRE(t.shape == std::vector<std::uint32_t>{2, 3}); // height, width
    CHECK(t.data[5] == 5.0);
    CHECK(t.data[3] == -1.0);
    const Grid2D back = grid_from_tensor(t);
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    CHECK(back.at(2, 1) == 5.0);
}
