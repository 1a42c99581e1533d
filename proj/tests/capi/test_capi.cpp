#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tlhead/tlhead.h"

namespace {

using nlohmann::json;

constexpr const char* kSynth =
    R"({"backbone": "ResNet18", "species": ["Bird", "Fruit"], "separation": 6.0,
        "classes_per_species": 3, "images_per_class": 20, "dim": 16, "seed": 2})";

constexpr const char* kTask = R"({"kind": ["A:Bird:3"], "split": {"f": 0.2, "J": 20}, "train": {"max_epochs": 5}})";

// Takes ownership of a library string.
std::string take(char* s) {
  std::string out = s ? s : "";
  tlh_string_free(s);
  return out;
}

class CApi : public ::testing::Test {
 protected:
  void SetUp() override { ASSERT_EQ(tlh_dataset_synth(kSynth, &ds_), TLH_OK) << tlh_last_error(); }
  void TearDown() override { tlh_dataset_free(ds_); }

  std::filesystem::path temp(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "tlh_capi_test";
    std::filesystem::create_directories(dir);
    return dir / name;
  }

  tlh_dataset* ds_ = nullptr;
};

TEST(CApiBasics, VersionAndStatusNames) {
  EXPECT_NE(std::string(tlh_version()), "");
  EXPECT_STREQ(tlh_status_name(TLH_OK), "ok");
  EXPECT_NE(std::string(tlh_status_name(TLH_ERR_PARSE)), std::string(tlh_status_name(TLH_ERR_IO)));
  tlh_string_free(nullptr);
  tlh_dataset_free(nullptr);
  tlh_head_free(nullptr);
  tlh_report_free(nullptr);
}

TEST(CApiBasics, NullArgumentsAreReported) {
  EXPECT_EQ(tlh_dataset_synth(kSynth, nullptr), TLH_ERR_NULL_ARG);
  EXPECT_EQ(tlh_dataset_open(nullptr, nullptr, nullptr), TLH_ERR_NULL_ARG);
  double v = 0;
  EXPECT_EQ(tlh_dataset_check_taps(nullptr, &v), TLH_ERR_NULL_ARG);
  EXPECT_NE(std::string(tlh_last_error()), "");
}

TEST(CApiBasics, ErrorsMapToStatusCodes) {
  tlh_dataset* ds = nullptr;
  EXPECT_EQ(tlh_dataset_synth("{not json", &ds), TLH_ERR_CONFIG);
  EXPECT_EQ(tlh_dataset_synth(R"({"colour": 1})", &ds), TLH_ERR_CONFIG);
  EXPECT_NE(std::string(tlh_last_error()).find("colour"), std::string::npos);
  EXPECT_EQ(tlh_dataset_open("/nonexistent/x.ftb", nullptr, &ds), TLH_ERR_IO);
  EXPECT_EQ(ds, nullptr);

  const auto path = std::filesystem::temp_directory_path() / "tlh_capi_bad.ftb";
  std::ofstream(path, std::ios::binary) << "XXXXjunk";
  std::ofstream(std::filesystem::path(path).replace_extension(".json")) << "{}";
  EXPECT_EQ(tlh_dataset_open(path.c_str(), nullptr, &ds), TLH_ERR_PARSE);
  EXPECT_NE(std::string(tlh_last_error()).find("magic"), std::string::npos);
  std::filesystem::remove(path);
}

TEST_F(CApi, InfoDescribesDataset) {
  char* out = nullptr;
  ASSERT_EQ(tlh_dataset_info(ds_, &out), TLH_OK);
  const auto info = json::parse(take(out));
  EXPECT_EQ(info.at("backbone"), "ResNet18");
  EXPECT_EQ(info.at("species").size(), 2u);
  double err = 1;
  ASSERT_EQ(tlh_dataset_check_taps(ds_, &err), TLH_OK);
  EXPECT_LT(err, 1e-4);
}

TEST_F(CApi, SplitAndSimilarity) {
  char* out = nullptr;
  ASSERT_EQ(tlh_dataset_split(ds_, kTask, &out), TLH_OK) << tlh_last_error();
  const auto split = json::parse(take(out));
  EXPECT_NE(split.dump().find("bird_1"), std::string::npos);
  ASSERT_EQ(tlh_dataset_similarity(ds_, &out), TLH_OK) << tlh_last_error();
  const auto sim = json::parse(take(out));
  EXPECT_NE(sim.dump().find("similarity_pct"), std::string::npos);
  EXPECT_EQ(tlh_dataset_split(ds_, R"({"kind": ["A:Cat:3"]})", &out), TLH_ERR_CONFIG);
  EXPECT_EQ(tlh_dataset_split(ds_, R"({"kind": ["A:Bird:3"], "split": {"f": 0.15, "J": 20}})", &out),
            TLH_ERR_CONFIG);
}

TEST_F(CApi, SaveAndReopen) {
  const auto path = temp("ds.ftb");
  ASSERT_EQ(tlh_dataset_save(ds_, path.c_str(), nullptr), TLH_OK) << tlh_last_error();
  tlh_dataset* back = nullptr;
  ASSERT_EQ(tlh_dataset_open(path.c_str(), nullptr, &back), TLH_OK) << tlh_last_error();
  char* a = nullptr;
  char* b = nullptr;
  ASSERT_EQ(tlh_dataset_info(ds_, &a), TLH_OK);
  ASSERT_EQ(tlh_dataset_info(back, &b), TLH_OK);
  EXPECT_EQ(take(a), take(b));
  tlh_dataset_free(back);
}

TEST_F(CApi, TrainEvaluateSaveLoad) {
  tlh_head* head = nullptr;
  char* result = nullptr;
  ASSERT_EQ(tlh_train(ds_, kTask, "proposed", &head, &result), TLH_OK) << tlh_last_error();
  const auto r = json::parse(take(result));
  ASSERT_TRUE(r.at("test_accuracy_pct").is_number());
  EXPECT_LE(r.at("epochs_run").get<int>(), 5);

  double acc = -1;
  ASSERT_EQ(tlh_head_evaluate(head, ds_, kTask, &acc), TLH_OK) << tlh_last_error();
  EXPECT_EQ(acc, r.at("test_accuracy_pct").get<double>());

  std::size_t params = 0;
  ASSERT_EQ(tlh_head_param_count(head, &params), TLH_OK);
  EXPECT_EQ(params, 16u * 1000 + 1000 + 1000 * 3 + 3);

  const auto path = temp("head.ftb");
  ASSERT_EQ(tlh_head_save(head, path.c_str()), TLH_OK) << tlh_last_error();
  tlh_head* loaded = nullptr;
  ASSERT_EQ(tlh_head_load(path.c_str(), &loaded), TLH_OK) << tlh_last_error();
  double acc2 = -1;
  ASSERT_EQ(tlh_head_evaluate(loaded, ds_, kTask, &acc2), TLH_OK);
  EXPECT_EQ(acc, acc2);
  char* info = nullptr;
  ASSERT_EQ(tlh_head_info(loaded, &info), TLH_OK);
  EXPECT_NE(take(info).find("proposed"), std::string::npos);

  EXPECT_EQ(tlh_head_evaluate(loaded, ds_, R"({"kind": ["A:Bird:4"], "split": {"f": 0.2, "J": 20}})", &acc2),
            TLH_ERR_CONFIG);
  tlh_head_free(loaded);
  tlh_head_free(head);
}

TEST_F(CApi, TrainRejectsUnknownHeadKind) {
  char* result = nullptr;
  EXPECT_EQ(tlh_train(ds_, kTask, "middle", nullptr, &result), TLH_ERR_CONFIG);
}

void collect(const char* line, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(line); }

TEST_F(CApi, ExperimentAndReportRendering) {
  std::vector<std::string> log;
  tlh_report* report = nullptr;
  const char* cfg = R"({"kind": ["A:Fruit:3", "B:2"], "split": {"f": 0.2, "J": 20}, "train": {"max_epochs": 3}})";
  ASSERT_EQ(tlh_experiment_run(ds_, cfg, collect, &log, &report), TLH_OK) << tlh_last_error();
  EXPECT_FALSE(log.empty());

  char* text = nullptr;
  ASSERT_EQ(tlh_report_render(report, "text", &text), TLH_OK);
  EXPECT_NE(take(text).find("Average"), std::string::npos);
  char* csv = nullptr;
  ASSERT_EQ(tlh_report_render(report, "csv", &csv), TLH_OK);
  EXPECT_EQ(take(csv).rfind("group,", 0), 0u);
  char* js = nullptr;
  ASSERT_EQ(tlh_report_render(report, "json", &js), TLH_OK);
  const std::string json_text = take(js);
  EXPECT_EQ(tlh_report_render(report, "xml", &text), TLH_ERR_CONFIG);

  tlh_report* back = nullptr;
  ASSERT_EQ(tlh_report_from_json(json_text.c_str(), &back), TLH_OK);
  char* again = nullptr;
  ASSERT_EQ(tlh_report_render(back, "json", &again), TLH_OK);
  EXPECT_EQ(take(again), json_text);
  tlh_report_free(back);
  tlh_report_free(report);

  EXPECT_EQ(tlh_experiment_run(ds_, R"({"kind": ["A:Cat:3"]})", nullptr, nullptr, &report), TLH_ERR_CONFIG);
}

}  // namespace
