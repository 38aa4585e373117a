#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "milfcn/checkpoint.hpp"
#include "milfcn/errors.hpp"
#include "milfcn/netpbm.hpp"
#include "milfcn/rng.hpp"

using namespace milfcn;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "milfcn_ckpt_test";
    fs::create_directories(dir);
    return dir;
}

Checkpoint make_checkpoint(std::uint64_t seed) {
    Checkpoint c;
    c.net = build_network(NetworkConfig{}, seed);
    c.state = OptimState::for_params(c.net.parameters());
    Rng rng(seed + 1);
    for (Tensor& v : c.state.velocities) {
        for (double& x : v.values()) {
            x = rng.uniform(-1.0, 1.0);
        }
    }
    c.state.iteration = 7777;
    return c;
}

}  // namespace

TEST_CASE("checkpoint roundtrip is bit-exact") {
    const fs::path path = work_dir() / "roundtrip.ckpt";
    Checkpoint original = make_checkpoint(21);
    save_checkpoint(original.net, original.state, path);

    Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.net.config == original.net.config);
    CHECK(loaded.state.iteration == original.state.iteration);

    const auto pa = original.net.parameters();
    const auto pb = loaded.net.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].values() == pb[i].values());
        CHECK(original.state.velocities[i].values() == loaded.state.velocities[i].values());
    }

    // saving the loaded state reproduces the file byte for byte
    const fs::path path2 = work_dir() / "roundtrip2.ckpt";
    save_checkpoint(loaded.net, loaded.state, path2);
    CHECK(read_file(path) == read_file(path2));
}

TEST_CASE("file size matches the byte-accounting formula") {
    const fs::path path = work_dir() / "sized.ckpt";
    Checkpoint c = make_checkpoint(3);
    save_checkpoint(c.net, c.state, path);

    // magic + version + config block + two tensor sections + iteration
    std::size_t expected = 8 + 4;
    expected += 4 * (1 + 1 + 3 + 1 + 1);
    for (int pass = 0; pass < 2; ++pass) {
        expected += 4;
        for (const auto& [name, t] : c.net.named_parameters()) {
            expected += 4 + name.size() + 4 + 4 * static_cast<std::size_t>(t.rank()) +
                        8 * static_cast<std::size_t>(t.size());
        }
    }
    expected += 8;

    CHECK(checkpoint_byte_size(c.net) == expected);
    CHECK(fs::file_size(path) == expected);
}

TEST_CASE("bad magic names the expected bytes") {
    const fs::path path = work_dir() / "magic.ckpt";
    std::vector<std::uint8_t> junk = {'N', 'O', 'P', 'E', 0, 0, 0, 0, 1, 0, 0, 0};
    write_file(path, junk);
    try {
        load_checkpoint(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("MILFCN1\\0") != std::string::npos);
    }
}

TEST_CASE("version mismatch, truncation and trailing bytes are rejected") {
    const fs::path path = work_dir() / "mutants.ckpt";
    Checkpoint c = make_checkpoint(4);
    save_checkpoint(c.net, c.state, path);
    std::vector<std::uint8_t> bytes = read_file(path);

    std::vector<std::uint8_t> wrong_version = bytes;
    wrong_version[8] = 2;
    write_file(path, wrong_version);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);

    std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + bytes.size() / 2);
    write_file(path, truncated);
    try {
        load_checkpoint(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }

    std::vector<std::uint8_t> padded = bytes;
    padded.push_back(0);
    write_file(path, padded);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);

    CHECK_THROWS_AS(load_checkpoint(work_dir() / "does_not_exist.ckpt"), IoError);
}
