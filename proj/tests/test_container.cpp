#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maskgen/error.hpp"
#include "maskgen/rng.hpp"
#include "maskgen/tensor_container.hpp"

#include <cstring>
#include <filesystem>

using namespace maskgen;

namespace {

Container sample_container() {
    Container c;
    Tensor a({2, 3});
    for (int i = 0; i < 6; ++i) a.data[i] = 0.25 * i - 0.5;
    Tensor b({4});
    for (int i = 0; i < 4; ++i) b.data[i] = 1.0f / (i + 1);
    c.tensors["weights.w"] = a;
    c.tensors["bias"] = b;
    c.meta["kind"] = "test";
    c.meta["note"] = "free-form metadata with unicode é";
    return c;
}

} // namespace

TEST_CASE("container serialization format") {
    auto bytes = serialize_container(sample_container());
    REQUIRE(bytes.size() > 12);
    CHECK(std::memcmp(bytes.data(), "NTC1", 4) == 0);
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= (uint64_t)bytes[4 + i] << (8 * i);
    CHECK(12 + hlen + (6 + 4) * sizeof(float) == bytes.size());
    // header names arrive in lexicographic order
    std::string header((const char*)bytes.data() + 12, hlen);
    CHECK(header.find("bias") < header.find("weights.w"));
}

TEST_CASE("round trip is bit-exact") {
    Container c = sample_container();
    auto bytes = serialize_container(c);
    Container d = deserialize_container(bytes);
    CHECK(d.meta == c.meta);
    REQUIRE(d.tensors.size() == 2);
    CHECK(d.tensors.at("weights.w").shape == c.tensors.at("weights.w").shape);
    auto bytes2 = serialize_container(d);
    CHECK(bytes == bytes2);
}

TEST_CASE("values survive as f32") {
    Container c;
    Tensor t({1});
    t.data[0] = 0.1;  // not representable in f32
    c.tensors["x"] = t;
    Container d = deserialize_container(serialize_container(c));
    CHECK(d.tensors.at("x").data[0] == (double)(float)0.1);
}

TEST_CASE("file round trip") {
    auto dir = std::filesystem::temp_directory_path() / "maskgen_container_test";
    std::filesystem::create_directories(dir);
    auto path = dir / "a.ntc";
    Container c = sample_container();
    save_container(path, c);
    Container d = load_container(path);
    CHECK(serialize_container(c) == serialize_container(d));
    // saving again yields an identical file
    auto path2 = dir / "b.ntc";
    save_container(path2, d);
    CHECK(file_digest(path) == file_digest(path2));
    std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted bytes are rejected") {
    auto bytes = serialize_container(sample_container());

    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_container(bad_magic), IoError);

    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(deserialize_container(truncated), IoError);

    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(deserialize_container(trailing), IoError);

    CHECK_THROWS_AS(deserialize_container(std::vector<uint8_t>{'N', 'T', 'C', '1'}), IoError);
    CHECK_THROWS_AS(load_container("/nonexistent/path/x.ntc"), IoError);
}

TEST_CASE("digest changes with content") {
    Container c = sample_container();
    std::string d1 = container_digest(c);
    CHECK(d1 == container_digest(c));
    c.tensors.at("bias").data[0] += 1.0;
    CHECK(container_digest(c) != d1);
    Container m = sample_container();
    m.meta["note"] = "changed";
    CHECK(container_digest(m) != d1);
}
