#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dataset.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "volume.hpp"

using namespace comodal;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "comodal_tests";
    fs::create_directories(dir);
    return (dir / name).string();
}

Volume random_volume(std::array<int, 3> shape, uint64_t seed) {
    Volume v = Volume::zeros(shape, {1.0, 1.5, 2.0});
    Rng rng(seed);
    for (auto& x : v.data) x = static_cast<float>(rng.normal(3.0, 2.0));
    return v;
}

BimodalSample labeled_sample(const std::string& id, uint64_t seed,
                             std::array<int, 3> shape = {6, 6, 6}) {
    BimodalSample s;
    s.id = id;
    s.vol_a = random_volume(shape, seed);
    s.vol_b = random_volume(shape, seed + 1);
    s.vol_b.modality = Modality::B;
    LabelMask m = LabelMask::zeros(shape, 3);
    Rng rng(seed + 2);
    for (auto& v : m.data) v = static_cast<int16_t>(rng.uniform_int(0, 2));
    s.mask_a = m;
    s.mask_b = m;
    return s;
}

}  // namespace

TEST_SUITE("core_io") {

TEST_CASE("volume round-trip is bit exact") {
    SUBCASE("2x2x2 zeros") {
        Volume v = Volume::zeros({2, 2, 2});
        std::string path = temp_path("zeros.vol");
        save_volume(v, path);
        Volume back = load_volume(path);
        CHECK(back.shape == v.shape);
        CHECK(back.spacing == v.spacing);
        CHECK(back.data == v.data);
    }
    SUBCASE("96^3 random volume") {
        Volume v = random_volume({96, 96, 96}, 42);
        std::string path = temp_path("big.vol");
        save_volume(v, path);
        Volume back = load_volume(path);
        CHECK(back.data == v.data);
        CHECK(back.spacing == v.spacing);
    }
}

TEST_CASE("volume with NaN is rejected before write") {
    Volume v = Volume::zeros({2, 2, 2});
    v.data[3] = std::nanf("");
    std::string path = temp_path("nan.vol");
    CHECK_THROWS_AS(save_volume(v, path), Error);
    CHECK(!fs::exists(path));
}

TEST_CASE("malformed volume files raise distinct errors") {
    Volume v = random_volume({4, 4, 4}, 7);
    std::string path = temp_path("mangle.vol");
    save_volume(v, path);

    SUBCASE("truncated payload") {
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign(std::istreambuf_iterator<char>(in), {});
        }
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
        out.close();
        try {
            load_volume(path);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::format);
            CHECK(std::string(e.what()).find("payload size mismatch") != std::string::npos);
        }
    }
    SUBCASE("zero spacing in header") {
        std::string bytes;
        {
            std::ifstream in(path, std::ios::binary);
            bytes.assign(std::istreambuf_iterator<char>(in), {});
        }
        for (int i = 0; i < 8; ++i) bytes[18 + i] = 0;  // first spacing double -> 0.0
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        try {
            load_volume(path);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::invariant);
        }
    }
    SUBCASE("bad magic") {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "NOPE notavolume";
        out.close();
        try {
            load_volume(path);
            FAIL("expected an error");
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::format);
            CHECK(std::string(e.what()).find("magic") != std::string::npos);
        }
    }
}

TEST_CASE("mask round-trip preserves labels and class count") {
    LabelMask m = LabelMask::zeros({3, 4, 5}, 4);
    Rng rng(11);
    for (auto& v : m.data) v = static_cast<int16_t>(rng.uniform_int(0, 3));
    std::string path = temp_path("mask.msk");
    save_mask(m, path);
    LabelMask back = load_mask(path);
    CHECK(back.num_classes == 4);
    CHECK(back.data == m.data);

    // The two container dtypes are not interchangeable.
    CHECK_THROWS_AS(load_volume(path), Error);
}

TEST_CASE("mask with out-of-range voxel is invalid") {
    LabelMask m = LabelMask::zeros({2, 2, 2}, 2);
    m.data[0] = 5;
    CHECK_THROWS_AS(m.validate(), Error);
}

TEST_CASE("zscore_normalize") {
    SUBCASE("constant volume maps to all zeros") {
        Volume v = Volume::zeros({4, 4, 4});
        std::fill(v.data.begin(), v.data.end(), 7.0f);
        Volume out = zscore_normalize(v);
        for (float x : out.data) CHECK(x == 0.0f);
    }
    SUBCASE("binary values {0,2} map to {-1,+1}") {
        Volume v = Volume::zeros({2, 2, 2});
        for (size_t i = 0; i < v.data.size(); ++i) v.data[i] = i % 2 ? 2.0f : 0.0f;
        Volume out = zscore_normalize(v);
        for (size_t i = 0; i < out.data.size(); ++i)
            CHECK(out.data[i] == doctest::Approx(i % 2 ? 1.0 : -1.0).epsilon(1e-12));
    }
    SUBCASE("random volume: recomputed mean ~ 0 and stddev ~ 1") {
        Volume v = random_volume({16, 16, 16}, 99);
        Volume out = zscore_normalize(v);
        double sum = 0, sq = 0;
        for (float x : out.data) {
            sum += x;
            sq += static_cast<double>(x) * x;
        }
        double n = static_cast<double>(out.data.size());
        double mean = sum / n;
        double stddev = std::sqrt(sq / n - mean * mean);
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(std::fabs(stddev - 1.0) < 1e-5);
    }
}

TEST_CASE("make_split arithmetic and determinism") {
    std::vector<BimodalSample> samples;
    for (int i = 0; i < 40; ++i)
        samples.push_back(labeled_sample("p" + std::to_string(i), 1000 + i, {4, 4, 4}));

    SUBCASE("40 samples at fraction 0.10 give 4 labeled / 36 unlabeled") {
        DatasetSplit split = make_split(samples, 0.10, 7);
        CHECK(split.labeled.size() == 4);
        CHECK(split.unlabeled.size() == 36);
        CHECK(split.val.empty());
        CHECK(split.test.empty());
    }
    SUBCASE("fraction 1.0 labels everything") {
        DatasetSplit split = make_split(samples, 1.0, 7);
        CHECK(split.labeled.size() == 40);
        CHECK(split.unlabeled.empty());
    }
    SUBCASE("same seed twice gives identical splits") {
        DatasetSplit s1 = make_split(samples, 0.25, 123, 4, 4);
        DatasetSplit s2 = make_split(samples, 0.25, 123, 4, 4);
        REQUIRE(s1.labeled.size() == s2.labeled.size());
        for (size_t i = 0; i < s1.labeled.size(); ++i)
            CHECK(s1.labeled[i].id == s2.labeled[i].id);
        for (size_t i = 0; i < s1.unlabeled.size(); ++i)
            CHECK(s1.unlabeled[i].id == s2.unlabeled[i].id);
    }
    SUBCASE("val/test membership is stable across fractions") {
        DatasetSplit a = make_split(samples, 0.10, 5, 4, 4);
        DatasetSplit b = make_split(samples, 0.50, 5, 4, 4);
        for (size_t i = 0; i < a.val.size(); ++i) CHECK(a.val[i].id == b.val[i].id);
        for (size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].id == b.test[i].id);
    }
    SUBCASE("unlabeled samples have masks stripped") {
        DatasetSplit split = make_split(samples, 0.10, 7, 2, 2);
        for (const auto& s : split.unlabeled) {
            CHECK(!s.mask_a.has_value());
            CHECK(!s.mask_b.has_value());
        }
    }
    SUBCASE("labeled count is at least one") {
        DatasetSplit split = make_split(samples, 0.001, 7);
        CHECK(split.labeled.size() == 1);
    }
    SUBCASE("fraction outside (0,1] is rejected") {
        CHECK_THROWS_AS(make_split(samples, 0.0, 7), Error);
        CHECK_THROWS_AS(make_split(samples, 1.5, 7), Error);
        CHECK_THROWS_AS(make_split(samples, -0.1, 7), Error);
    }
}

TEST_CASE("mixed labeling is invalid") {
    BimodalSample s = labeled_sample("bad", 5, {4, 4, 4});
    s.mask_b.reset();
    CHECK_THROWS_AS(s.validate(), Error);
}

TEST_CASE("split directory round-trip") {
    std::vector<BimodalSample> samples;
    for (int i = 0; i < 8; ++i)
        samples.push_back(labeled_sample("r" + std::to_string(i), 2000 + i, {4, 4, 4}));
    samples[3].misalignment = std::array<double, 16>{1, 0, 0, 0, 0, 1, 0, 0,
                                                     0, 0, 1, 2, 0, 0, 0, 1};
    DatasetSplit split = make_split(samples, 0.5, 3, 2, 2);
    std::string dir = temp_path("splitdir");
    fs::remove_all(dir);
    save_split_dir(split, dir);

    DatasetSplit back = load_split_dir(dir);
    CHECK(back.labeled.size() == split.labeled.size());
    CHECK(back.unlabeled.size() == split.unlabeled.size());
    CHECK(back.val.size() == split.val.size());
    CHECK(back.test.size() == split.test.size());
    for (size_t i = 0; i < split.labeled.size(); ++i) {
        CHECK(back.labeled[i].id == split.labeled[i].id);
        CHECK(back.labeled[i].vol_a.data == split.labeled[i].vol_a.data);
        CHECK(back.labeled[i].mask_b->data == split.labeled[i].mask_b->data);
    }
    for (const auto& s : back.unlabeled) CHECK(!s.labeled());
    // No mask files exist for unlabeled samples.
    for (const auto& s : back.unlabeled)
        CHECK(!fs::exists(fs::path(dir) / "masks" / (s.id + "_a.msk")));
}

}  // TEST_SUITE
