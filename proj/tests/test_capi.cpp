#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "comodal/comodal.h"

namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "comodal_capi" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string config_path(const char* name) {
    return std::string(COMODAL_CONFIG_DIR) + "/" + name;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_SUITE("capi") {

TEST_CASE("volume handles round-trip through the C container format") {
    uint32_t dims[3] = {4, 3, 2};
    double spacing[3] = {1.0, 1.5, 2.0};
    std::vector<float> data(24);
    for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i) * 0.25f;

    comodal_volume* vol = nullptr;
    REQUIRE(comodal_volume_create(dims, spacing, data.data(), &vol) == COMODAL_OK);
    std::string path = temp_dir("vol") + "/x.vol";
    REQUIRE(comodal_volume_save(vol, path.c_str()) == COMODAL_OK);

    comodal_volume* back = nullptr;
    REQUIRE(comodal_volume_load(path.c_str(), &back) == COMODAL_OK);
    uint32_t bd[3];
    double bs[3];
    CHECK(comodal_volume_dims(back, bd) == COMODAL_OK);
    CHECK(comodal_volume_spacing(back, bs) == COMODAL_OK);
    for (int i = 0; i < 3; ++i) {
        CHECK(bd[i] == dims[i]);
        CHECK(bs[i] == spacing[i]);
    }
    const float* payload = comodal_volume_data(back);
    REQUIRE(payload);
    for (size_t i = 0; i < data.size(); ++i) CHECK(payload[i] == data[i]);

    comodal_volume* norm = nullptr;
    REQUIRE(comodal_volume_zscore(back, &norm) == COMODAL_OK);
    const float* nd = comodal_volume_data(norm);
    double sum = 0;
    for (size_t i = 0; i < data.size(); ++i) sum += nd[i];
    CHECK(std::fabs(sum / static_cast<double>(data.size())) < 1e-5);

    comodal_volume_free(vol);
    comodal_volume_free(back);
    comodal_volume_free(norm);
}

TEST_CASE("error paths set status codes and messages") {
    comodal_volume* vol = nullptr;
    comodal_status s = comodal_volume_load("/nonexistent/path.vol", &vol);
    CHECK(s == COMODAL_ERR_IO);
    CHECK(std::string(comodal_last_error()).find("path.vol") != std::string::npos);
    CHECK(std::string(comodal_status_name(s)) == "io");

    uint32_t dims[3] = {2, 2, 2};
    double spacing[3] = {1.0, 1.0, -1.0};
    s = comodal_volume_create(dims, spacing, nullptr, &vol);
    CHECK(s == COMODAL_ERR_INVARIANT);

    CHECK(comodal_volume_save(nullptr, "x") == COMODAL_ERR_INVALID_ARGUMENT);

    comodal_options* opts = comodal_options_create();
    CHECK(comodal_options_set_ablation(opts, "bogus") == COMODAL_ERR_INVALID_ARGUMENT);
    CHECK(comodal_options_set_ablation(opts, "full") == COMODAL_OK);
    comodal_options_free(opts);
}

TEST_CASE("mask handles and metrics") {
    uint32_t dims[3] = {8, 8, 8};
    std::vector<int16_t> p(512, 0), g(512, 0);
    p[0] = p[1] = p[2] = p[3] = 1;
    g[2] = g[3] = g[4] = g[5] = 1;
    comodal_mask *mp = nullptr, *mg = nullptr;
    REQUIRE(comodal_mask_create(dims, 2, p.data(), &mp) == COMODAL_OK);
    REQUIRE(comodal_mask_create(dims, 2, g.data(), &mg) == COMODAL_OK);

    double dice = 0;
    REQUIRE(comodal_dice_score(mp, mg, 1, &dice) == COMODAL_OK);
    CHECK(dice == doctest::Approx(0.5));

    double spacing[3] = {1, 1, 1};
    double mm = -1;
    int defined = -1;
    REQUIRE(comodal_assd(mp, mp, 1, spacing, &mm, &defined) == COMODAL_OK);
    CHECK(defined == 1);
    CHECK(mm == 0.0);

    std::string path = temp_dir("mask") + "/m.msk";
    REQUIRE(comodal_mask_save(mp, path.c_str()) == COMODAL_OK);
    comodal_mask* back = nullptr;
    REQUIRE(comodal_mask_load(path.c_str(), &back) == COMODAL_OK);
    uint16_t k = 0;
    CHECK(comodal_mask_num_classes(back, &k) == COMODAL_OK);
    CHECK(k == 2);

    comodal_mask_free(mp);
    comodal_mask_free(mg);
    comodal_mask_free(back);
}

TEST_CASE("end-to-end pipeline through the C API") {
    std::string work = temp_dir("pipeline");
    fs::current_path(work);
    std::string cfg = config_path("smoke.json");

    // generate-data
    comodal_run* gen = nullptr;
    REQUIRE_MESSAGE(comodal_generate_data(cfg.c_str(), nullptr, &gen) == COMODAL_OK,
                    comodal_last_error());
    std::string summary = comodal_run_summary(gen);
    CHECK(summary.find("paired=true") != std::string::npos);
    CHECK(summary.find("N=3 labeled, M=3 unlabeled") != std::string::npos);
    CHECK(fs::exists("data/smoke/split.json"));
    comodal_run_free(gen);

    // train
    comodal_run* train = nullptr;
    REQUIRE_MESSAGE(comodal_train(cfg.c_str(), nullptr, &train) == COMODAL_OK,
                    comodal_last_error());
    std::string run_dir = comodal_run_dir(train);
    CHECK(fs::exists(run_dir + "/training_log.csv"));
    CHECK(fs::exists(run_dir + "/best.ckpt"));
    CHECK(fs::exists(run_dir + "/manifest.json"));
    CHECK(fs::file_size(run_dir + "/val_curve.svg") > 0);
    comodal_run_free(train);

    // evaluate on the test split
    comodal_options* eval_opts = comodal_options_create();
    std::string eval_dir = work + "/evalrun";
    comodal_options_set_out_dir(eval_opts, eval_dir.c_str());
    comodal_run* eval = nullptr;
    std::string ckpt = run_dir + "/best.ckpt";
    REQUIRE_MESSAGE(
        comodal_evaluate(cfg.c_str(), ckpt.c_str(), "test", eval_opts, &eval) == COMODAL_OK,
        comodal_last_error());
    std::string eval_summary = comodal_run_summary(eval);
    CHECK(fs::exists(eval_dir + "/eval.csv"));
    CHECK(fs::file_size(eval_dir + "/per_class_dice.svg") > 0);

    // stdout summary matches the CSV summary rows
    std::string csv = slurp(eval_dir + "/eval.csv");
    size_t pos = csv.find("summary,,a,all,");
    REQUIRE(pos != std::string::npos);
    std::string dice_a = csv.substr(pos + 15, csv.find(',', pos + 15) - pos - 15);
    CHECK(eval_summary.find("modality a: mean Dice " + dice_a) != std::string::npos);
    comodal_options_free(eval_opts);
    comodal_run_free(eval);

    // report over the single evaluation run
    const char* dirs[1] = {eval_dir.c_str()};
    comodal_run* report = nullptr;
    std::string report_dir = work + "/reportrun";
    REQUIRE_MESSAGE(comodal_report(dirs, 1, report_dir.c_str(), &report) == COMODAL_OK,
                    comodal_last_error());
    CHECK(fs::exists(report_dir + "/report.csv"));
    std::string report_csv = slurp(report_dir + "/report.csv");
    CHECK(report_csv.find(dice_a) != std::string::npos);
    comodal_run_free(report);

    // report on a missing run dir errors and names it
    const char* bad_dirs[1] = {"no/such/run"};
    comodal_run* bad = nullptr;
    CHECK(comodal_report(bad_dirs, 1, report_dir.c_str(), &bad) == COMODAL_ERR_NOT_FOUND);
    CHECK(std::string(comodal_last_error()).find("no/such/run") != std::string::npos);
}

}  // TEST_SUITE
