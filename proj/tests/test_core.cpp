#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pve/rng.hpp"
#include "pve/tensor.hpp"

using namespace pve;
namespace fs = std::filesystem;

static fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("pve_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

TEST_CASE("gaussian is deterministic per (seed, purpose, index)") {
    RngStream a{0, RngPurpose::InitNoise, 0};
    RngStream b{0, RngPurpose::InitNoise, 0};
    VideoTensor ta = gaussian(a, {1, 1, 1, 1});
    VideoTensor tb = gaussian(b, {1, 1, 1, 1});
    CHECK(ta[0] == tb[0]);
}

TEST_CASE("different seeds produce element-wise different tensors") {
    RngStream a{0, RngPurpose::InitNoise, 0};
    RngStream b{1, RngPurpose::InitNoise, 0};
    VideoTensor ta = gaussian(a, {2, 4, 4, 1});
    VideoTensor tb = gaussian(b, {2, 4, 4, 1});
    for (int64_t i = 0; i < ta.size(); ++i) CHECK(ta[i] != tb[i]);
}

TEST_CASE("pooled normal draws match standard moments") {
    RngStream s{7, RngPurpose::Sampling, 0};
    const int64_t per = 4 * 8 * 8 * 3;
    const int64_t reps = 100000 / per + 1;
    double sum = 0.0, sq = 0.0;
    int64_t n = 0;
    for (int64_t r = 0; r < reps; ++r) {
        VideoTensor t = gaussian(s, {4, 8, 8, 3});
        for (int64_t i = 0; i < t.size(); ++i) {
            sum += t[i];
            sq += static_cast<double>(t[i]) * t[i];
            ++n;
        }
    }
    double mean = sum / static_cast<double>(n);
    double var = sq / static_cast<double>(n) - mean * mean;
    CHECK(std::fabs(mean) < 0.02);
    CHECK(std::fabs(var - 1.0) < 0.02);
}

TEST_CASE("rng replays agree on random triples") {
    RngStream meta{99, RngPurpose::Training, 0};
    for (int t = 0; t < 1000; ++t) {
        uint64_t seed = meta.word_at(static_cast<uint64_t>(3 * t));
        auto purpose = static_cast<RngPurpose>(meta.word_at(static_cast<uint64_t>(3 * t + 1)) % 4);
        uint64_t index = meta.word_at(static_cast<uint64_t>(3 * t + 2)) % 1000000;
        RngStream a{seed, purpose, 0};
        RngStream b{seed, purpose, 0};
        CHECK(a.normal_at(index) == b.normal_at(index));
    }
}

TEST_CASE("purpose tags separate streams") {
    RngStream a{5, RngPurpose::Training, 0};
    RngStream b{5, RngPurpose::Dataset, 0};
    CHECK(a.word_at(0) != b.word_at(0));
}

TEST_CASE("zero or negative extent is rejected") {
    CHECK_THROWS_AS(VideoTensor(0, 1, 1, 1), ShapeError);
    CHECK_THROWS_AS(VideoTensor(1, -1, 1, 1), ShapeError);
}

TEST_CASE("tensor save/load roundtrip is bitwise exact") {
    RngStream s{3, RngPurpose::Sampling, 0};
    VideoTensor t = gaussian(s, {2, 3, 4, 1});
    auto dir = temp_dir("roundtrip");
    auto path = (dir / "t.vten").string();
    save_tensor(t, path);
    VideoTensor u = load_tensor(path);
    REQUIRE(u.same_shape(t));
    for (int64_t i = 0; i < t.size(); ++i)
        CHECK(std::memcmp(&t.vec()[static_cast<size_t>(i)], &u.vec()[static_cast<size_t>(i)], 4) == 0);
}

TEST_CASE("bad magic is a format error") {
    std::stringstream ss;
    ss.write("XXXX", 4);
    CHECK_THROWS_AS(load_tensor(ss), FormatError);
}

TEST_CASE("truncated payload is a format error") {
    VideoTensor t(2, 3, 4, 1);
    std::stringstream ss;
    save_tensor(t, ss);
    std::string bytes = ss.str();
    bytes.resize(bytes.size() - 4);  // drop the last float
    std::stringstream cut(bytes);
    CHECK_THROWS_AS(load_tensor(cut), FormatError);
}

TEST_CASE("wrong rank is a format error") {
    VideoTensor t(1, 1, 1, 1);
    std::stringstream ss;
    save_tensor(t, ss);
    std::string bytes = ss.str();
    bytes[6] = 3;  // rank field
    std::stringstream bad(bytes);
    CHECK_THROWS_AS(load_tensor(bad), FormatError);
}

static std::vector<uint8_t> read_ppm_payload(const fs::path& file) {
    std::ifstream is(file, std::ios::binary);
    REQUIRE(is.good());
    std::string magic, wh1, wh2, maxv;
    is >> magic >> wh1 >> wh2 >> maxv;
    is.get();  // single whitespace after maxval
    std::vector<uint8_t> payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return payload;
}

TEST_CASE("export_frames quantization endpoints and rounding") {
    auto dir = temp_dir("frames");
    VideoTensor zero(1, 2, 2, 3);
    export_frames(zero, (dir / "z").string());
    for (uint8_t b : read_ppm_payload(dir / "z" / "frame_0000.ppm")) CHECK(b == 0x00);

    VideoTensor one(1, 2, 2, 3);
    for (int64_t i = 0; i < one.size(); ++i) one[i] = 1.0f;
    export_frames(one, (dir / "o").string());
    for (uint8_t b : read_ppm_payload(dir / "o" / "frame_0000.ppm")) CHECK(b == 0xFF);

    CHECK(quantize_u8(0.5f) == 128);  // round-half-up of 127.5
}

TEST_CASE("export_frames rejects unsupported channel counts") {
    VideoTensor t(1, 2, 2, 2);
    CHECK_THROWS_AS(export_frames(t, temp_dir("badc").string()), ShapeError);
}

TEST_CASE("export_frames is monotone in the input") {
    auto dir = temp_dir("mono");
    RngStream s{11, RngPurpose::Sampling, 0};
    VideoTensor a(1, 4, 4, 1), b(1, 4, 4, 1);
    for (int64_t i = 0; i < a.size(); ++i) {
        a[i] = static_cast<float>(s.next_uniform());
        b[i] = a[i] + 0.1f * static_cast<float>(s.next_uniform());
    }
    export_frames(a, (dir / "a").string());
    export_frames(b, (dir / "b").string());
    auto pa = read_ppm_payload(dir / "a" / "frame_0000.ppm");
    auto pb = read_ppm_payload(dir / "b" / "frame_0000.ppm");
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) CHECK(pa[i] <= pb[i]);
}
