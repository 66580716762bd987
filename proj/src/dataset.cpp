#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

#include "rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace comodal {

void BimodalSample::validate() const {
    require(!id.empty(), ErrorCode::invariant, "sample id must not be empty");
    vol_a.validate();
    vol_b.validate();
    require(mask_a.has_value() == mask_b.has_value(), ErrorCode::invariant,
            "sample " + id + ": mixed labeling (exactly one mask present) is invalid");
    if (mask_a) {
        mask_a->validate();
        mask_b->validate();
        require(mask_a->shape == vol_a.shape, ErrorCode::invariant,
                "sample " + id + ": mask_a shape differs from vol_a");
        require(mask_b->shape == vol_b.shape, ErrorCode::invariant,
                "sample " + id + ": mask_b shape differs from vol_b");
    }
    if (paired && !misalignment.has_value())
        require(vol_a.shape == vol_b.shape, ErrorCode::invariant,
                "sample " + id + ": paired aligned sample must have identical shapes");
}

void DatasetSplit::validate() const {
    require(!labeled.empty(), ErrorCode::invariant, "split must contain at least one labeled sample");
    std::unordered_set<std::string> ids;
    auto check_list = [&](const std::vector<BimodalSample>& list, bool want_masks,
                          const char* name) {
        for (const auto& s : list) {
            s.validate();
            if (want_masks)
                require(s.labeled(), ErrorCode::invariant,
                        std::string(name) + " sample " + s.id + " is missing masks");
            else
                require(!s.mask_a && !s.mask_b, ErrorCode::invariant,
                        "unlabeled sample " + s.id + " still carries masks");
            require(ids.insert(s.id).second, ErrorCode::invariant,
                    "duplicate sample id " + s.id + " across splits");
        }
    };
    check_list(labeled, true, "labeled");
    check_list(unlabeled, false, "unlabeled");
    check_list(val, true, "val");
    check_list(test, true, "test");
}

DatasetSplit make_split(const std::vector<BimodalSample>& samples, double labeled_fraction,
                        uint64_t seed, int val_count, int test_count) {
    require(labeled_fraction > 0.0 && labeled_fraction <= 1.0, ErrorCode::invalid_argument,
            "labeled_fraction must lie in (0, 1]");
    require(val_count >= 0 && test_count >= 0, ErrorCode::invalid_argument,
            "val/test counts must be nonnegative");
    require(samples.size() > static_cast<size_t>(val_count + test_count),
            ErrorCode::invalid_argument, "not enough samples for the requested val/test carve-out");
    bool any_labeled = std::any_of(samples.begin(), samples.end(),
                                   [](const BimodalSample& s) { return s.labeled(); });
    require(any_labeled, ErrorCode::invalid_argument, "make_split needs at least one labeled sample");

    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::mix(seed, 0x517));
    rng.shuffle(order);

    DatasetSplit split;
    size_t pos = 0;
    auto take_labeled = [&](std::vector<BimodalSample>& dst, int count, const char* name) {
        for (int i = 0; i < count; ++i) {
            const BimodalSample& s = samples[order[pos++]];
            require(s.labeled(), ErrorCode::invalid_argument,
                    std::string("sample ") + s.id + " has no masks and cannot enter the " + name +
                        " split");
            dst.push_back(s);
        }
    };
    take_labeled(split.val, val_count, "val");
    take_labeled(split.test, test_count, "test");

    size_t pool = samples.size() - pos;
    int n_labeled = std::max<int>(1, static_cast<int>(std::llround(labeled_fraction * pool)));
    n_labeled = std::min<int>(n_labeled, static_cast<int>(pool));
    take_labeled(split.labeled, n_labeled, "labeled");
    while (pos < order.size()) {
        BimodalSample s = samples[order[pos++]];
        s.mask_a.reset();
        s.mask_b.reset();
        split.unlabeled.push_back(std::move(s));
    }
    split.validate();
    return split;
}

namespace {

json sample_to_json(const BimodalSample& s, const std::string& dir, bool write_files) {
    json j;
    j["id"] = s.id;
    j["paired"] = s.paired;
    j["vol_a"] = "volumes/" + s.id + "_a.vol";
    j["vol_b"] = "volumes/" + s.id + "_b.vol";
    if (s.labeled()) {
        j["mask_a"] = "masks/" + s.id + "_a.msk";
        j["mask_b"] = "masks/" + s.id + "_b.msk";
    }
    if (s.misalignment) j["misalignment"] = *s.misalignment;
    if (write_files) {
        save_volume(s.vol_a, dir + "/" + j["vol_a"].get<std::string>());
        save_volume(s.vol_b, dir + "/" + j["vol_b"].get<std::string>());
        if (s.labeled()) {
            save_mask(*s.mask_a, dir + "/" + j["mask_a"].get<std::string>());
            save_mask(*s.mask_b, dir + "/" + j["mask_b"].get<std::string>());
        }
    }
    return j;
}

BimodalSample sample_from_json(const json& j, const std::string& dir) {
    BimodalSample s;
    s.id = j.at("id").get<std::string>();
    s.paired = j.at("paired").get<bool>();
    s.vol_a = load_volume(dir + "/" + j.at("vol_a").get<std::string>());
    s.vol_a.modality = Modality::A;
    s.vol_b = load_volume(dir + "/" + j.at("vol_b").get<std::string>());
    s.vol_b.modality = Modality::B;
    if (j.contains("mask_a")) {
        s.mask_a = load_mask(dir + "/" + j.at("mask_a").get<std::string>());
        s.mask_b = load_mask(dir + "/" + j.at("mask_b").get<std::string>());
    }
    if (j.contains("misalignment")) {
        std::array<double, 16> m{};
        auto arr = j.at("misalignment");
        require(arr.size() == 16, ErrorCode::format, "misalignment must have 16 entries");
        for (size_t i = 0; i < 16; ++i) m[i] = arr[i].get<double>();
        s.misalignment = m;
    }
    s.validate();
    return s;
}

}  // namespace

void save_split_dir(const DatasetSplit& split, const std::string& dir) {
    split.validate();
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "volumes", ec);
    fs::create_directories(fs::path(dir) / "masks", ec);
    if (ec) fail(ErrorCode::io, dir + ": cannot create dataset directories: " + ec.message());

    json manifest;
    manifest["format"] = "comodal-split";
    manifest["version"] = 1;
    auto dump_list = [&](const std::vector<BimodalSample>& list, const char* name) {
        json arr = json::array();
        for (const auto& s : list) arr.push_back(sample_to_json(s, dir, true));
        manifest["splits"][name] = arr;
    };
    dump_list(split.labeled, "labeled");
    dump_list(split.unlabeled, "unlabeled");
    dump_list(split.val, "val");
    dump_list(split.test, "test");

    std::ofstream out(fs::path(dir) / "split.json");
    if (!out) fail(ErrorCode::io, dir + "/split.json: cannot open for writing");
    out << manifest.dump(2) << "\n";
    if (!out.good()) fail(ErrorCode::io, dir + "/split.json: write failed");
}

DatasetSplit load_split_dir(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "split.json");
    if (!in) fail(ErrorCode::not_found, dir + "/split.json: cannot open (dataset not generated?)");
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        fail(ErrorCode::format, dir + "/split.json: " + e.what());
    }
    require(manifest.value("format", "") == "comodal-split", ErrorCode::format,
            dir + "/split.json: not a split manifest");
    DatasetSplit split;
    auto load_list = [&](std::vector<BimodalSample>& dst, const char* name) {
        for (const auto& j : manifest.at("splits").at(name)) dst.push_back(sample_from_json(j, dir));
    };
    load_list(split.labeled, "labeled");
    load_list(split.unlabeled, "unlabeled");
    load_list(split.val, "val");
    load_list(split.test, "test");
    split.validate();
    return split;
}

}  // namespace comodal
