#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "lago/io/csv.hpp"
#include "lago/service/http.hpp"

using namespace lago;
using namespace lago::service;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lago_svc_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// One component, no covariates, identity link.
const char* kTrial = R"({"id": "t1", "name": "demo", "link": "identity", "covariates": 0,
  "bounds": {"lower": [0], "upper": [4]}, "cost": {"kind": "linear", "unit_costs": [3]}, "theta": 0.8})";

const char* kStage1Rows = R"({"rows": [
  {"center_id": "c1", "arm": "intervention", "y": 0.5, "a": [1]},
  {"center_id": "c2", "arm": "intervention", "y": 0.9, "a": [2]},
  {"center_id": "c3", "arm": "control", "y": 0.2, "a": [0]}]})";

const char* kStage1Csv =
    "stage,center_id,arm,y,a_1\n"
    "1,c1,intervention,0.5,1\n"
    "1,c2,intervention,0.9,2\n"
    "1,c3,control,0.2,0\n";

// Live server on an ephemeral port, torn down with the fixture.
class LiveServer : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    store_ = std::make_unique<TrialStore>(dir_.string());
    svc_ = std::make_unique<TrialService>(*store_);
    mount(server_, *svc_);
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    server_.stop();
    thread_.join();
    fs::remove_all(dir_);
  }

  std::pair<int, io::json> get(const std::string& path) {
    auto r = client_->Get(path);
    EXPECT_TRUE(r) << path;
    return {r->status, io::json::parse(r->body)};
  }

  std::pair<int, io::json> post(const std::string& path, const std::string& body) {
    auto r = client_->Post(path, body, "application/json");
    EXPECT_TRUE(r) << path;
    return {r->status, io::json::parse(r->body)};
  }

  fs::path dir_;
  std::unique_ptr<TrialStore> store_;
  std::unique_ptr<TrialService> svc_;
  httplib::Server server_;
  std::thread thread_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

}  // namespace

TEST_F(LiveServer, CreateAppendFitMatchesCsvPath) {
  auto [st, created] = post("/api/trials", kTrial);
  ASSERT_EQ(st, 201) << created.dump();
  EXPECT_EQ(created["trial"]["id"], "t1");
  EXPECT_EQ(created["open_stage"], 1);
  auto [st2, rows] = post("/api/trials/t1/stages/1/rows", kStage1Rows);
  ASSERT_EQ(st2, 200) << rows.dump();
  EXPECT_EQ(rows["n_rows"], 3);

  auto [st3, fit] = get("/api/trials/t1/fit");
  ASSERT_EQ(st3, 200) << fit.dump();
  std::istringstream csv(kStage1Csv);
  const auto oracle = fit_gee(io::read_trial_csv(csv), LinkFunction(LinkKind::identity));
  const auto served = io::fit_from_json(fit);
  EXPECT_LE((served.beta_hat.stacked() - oracle.beta_hat.stacked()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE((served.covariance - oracle.covariance).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(fit["through_stage"], 1);
}

TEST_F(LiveServer, StageOrderingAndImmutability) {
  post("/api/trials", kTrial);
  post("/api/trials/t1/stages/1/rows", kStage1Rows);
  EXPECT_EQ(post("/api/trials/t1/stages/2/lock", "").first, 409);
  EXPECT_EQ(post("/api/trials/t1/stages/2/rows", kStage1Rows).first, 409);

  auto [st, locked] = post("/api/trials/t1/stages/1/lock", "");
  ASSERT_EQ(st, 200) << locked.dump();
  EXPECT_TRUE(locked["locked"].get<bool>());
  EXPECT_EQ(locked["recommendation"]["for_stage"], 2);
  EXPECT_TRUE(locked["fit"].contains("beta"));

  EXPECT_EQ(post("/api/trials/t1/stages/1/rows", kStage1Rows).first, 409);
  EXPECT_EQ(post("/api/trials/t1/stages/1/lock", "").first, 409);
  // Stage 2 is open but empty.
  EXPECT_EQ(post("/api/trials/t1/stages/2/lock", "").first, 409);
  const char* stage2 = R"([{"center_id": "d1", "arm": "intervention", "y": 0.8, "a": [1.5]}])";
  EXPECT_EQ(post("/api/trials/t1/stages/2/rows", stage2).first, 200);
  EXPECT_EQ(get("/api/trials/t1").second["stages"].size(), 2u);
}

TEST_F(LiveServer, ErrorsCarryStatusAndPath) {
  EXPECT_EQ(get("/api/trials/nope").first, 404);
  EXPECT_EQ(get("/api/trials/nope/fit").first, 404);
  EXPECT_EQ(get("/api/nothing-here").first, 404);
  post("/api/trials", kTrial);
  EXPECT_EQ(post("/api/trials", kTrial).first, 409);

  auto [st, err] = post("/api/trials/t1/stages/1/rows", R"([{"center_id": "c1", "arm": "intervention", "a": [1]}])");
  EXPECT_EQ(st, 400);
  EXPECT_EQ(err["error"]["path"], "rows[0].y");

  auto [st2, err2] = post("/api/trials/t1/stages/1/rows", R"([{"center_id": "c9", "arm": "control", "y": 1, "a": [2]}])");
  EXPECT_EQ(st2, 400);
  EXPECT_EQ(err2["error"]["path"], "rows[0].a");

  auto [st3, err3] = post("/api/trials", R"({"link": "identity", "bounds": {"lower": [0]}})");
  EXPECT_EQ(st3, 400);
  EXPECT_EQ(err3["error"]["path"], "bounds.upper");

  EXPECT_EQ(post("/api/trials", "{not json").first, 400);
  // No rows yet: nothing to fit.
  EXPECT_EQ(get("/api/trials/t1/fit").first, 409);
  post("/api/trials/t1/stages/1/rows", kStage1Rows);
  EXPECT_EQ(get("/api/trials/t1/confset?increment=0.000001").first, 400);
  EXPECT_EQ(get("/api/trials/t1/recommend?theta=abc").first, 400);
}

TEST_F(LiveServer, UnidentifiableFitIsUnprocessable) {
  post("/api/trials", kTrial);
  post("/api/trials/t1/stages/1/rows", R"([{"center_id": "c1", "arm": "intervention", "y": 0.5, "a": [1]},
                                           {"center_id": "c1", "arm": "intervention", "y": 0.7, "a": [1]}])");
  EXPECT_EQ(get("/api/trials/t1/fit").first, 422);
  // Locking still succeeds and records the failure.
  auto [st, locked] = post("/api/trials/t1/stages/1/lock", "");
  EXPECT_EQ(st, 200);
  EXPECT_TRUE(locked["fit"].contains("error"));
  EXPECT_TRUE(locked["recommendation"].is_null());
}

TEST_F(LiveServer, RecommendIsPureAndMonotone) {
  post("/api/trials", kTrial);
  post("/api/trials/t1/stages/1/rows", kStage1Rows);
  const fs::path log = store_->log_path("t1");
  const std::string before = read_bytes(log);
  auto [s8, r8] = get("/api/trials/t1/recommend?theta=0.8");
  auto [s9, r9] = get("/api/trials/t1/recommend?theta=0.9");
  auto [sc, rc] = get("/api/trials/t1/recommend?theta=0.8&cost=linear:6");
  ASSERT_EQ(s8, 200) << r8.dump();
  ASSERT_EQ(s9, 200);
  ASSERT_EQ(sc, 200);
  EXPECT_EQ(read_bytes(log), before);
  EXPECT_GE(r9["recommendation"]["cost"].get<double>(), r8["recommendation"]["cost"].get<double>());
  EXPECT_EQ(rc["recommendation"]["package"], r8["recommendation"]["package"]);
  EXPECT_NEAR(rc["recommendation"]["cost"].get<double>(), 2.0 * r8["recommendation"]["cost"].get<double>(), 1e-9);
  EXPECT_EQ(get("/api/trials/t1").second["trial"]["theta"], 0.8);
}

TEST_F(LiveServer, EveryBodyHasSchemaVersion) {
  std::vector<io::json> bodies;
  bodies.push_back(post("/api/trials", kTrial).second);
  bodies.push_back(post("/api/trials/t1/stages/1/rows", kStage1Rows).second);
  for (const char* path : {"/api/trials", "/api/trials/t1", "/api/trials/t1/fit", "/api/trials/t1/recommend",
                           "/api/trials/t1/confset", "/api/trials/t1/bands", "/api/trials/zzz", "/api/none"}) {
    bodies.push_back(get(path).second);
  }
  bodies.push_back(post("/api/trials/t1/stages/1/lock", "").second);
  bodies.push_back(post("/api/trials/t1/stages/1/lock", "").second);
  for (const auto& b : bodies) EXPECT_EQ(b.value("schema_version", -1), io::kSchemaVersion) << b.dump();
}

TEST_F(LiveServer, ConfsetAndBands) {
  post("/api/trials", kTrial);
  post("/api/trials/t1/stages/1/rows", kStage1Rows);
  auto [st, cs] = get("/api/trials/t1/confset?increment=0.5&theta=0.6");
  ASSERT_EQ(st, 200) << cs.dump();
  EXPECT_EQ(cs["confidence_set"]["total_grid_points"], 9);
  EXPECT_EQ(cs["theta"], 0.6);
  auto [sb, bands] = get("/api/trials/t1/bands?increment=1");
  ASSERT_EQ(sb, 200);
  EXPECT_EQ(bands["bands"]["entries"].size(), 5u);
  for (const auto& e : bands["bands"]["entries"]) {
    EXPECT_LE(e["band_lower"].get<double>(), e["mean_hat"].get<double>());
    EXPECT_GE(e["band_upper"].get<double>(), e["mean_hat"].get<double>());
  }
}

TEST_F(LiveServer, ConcurrentAppendsAreAllKept) {
  post("/api/trials", kTrial);
  std::vector<std::thread> workers;
  for (int t = 0; t < 4; ++t) {
    workers.emplace_back([this, t] {
      httplib::Client c("127.0.0.1", port_);
      for (int i = 0; i < 10; ++i) {
        const std::string body = R"([{"center_id": "w)" + std::to_string(t) + R"(", "arm": "intervention", "y": )" +
                                 std::to_string(i) + R"(, "a": [)" + std::to_string(t + 1) + "]}]";
        auto r = c.Post("/api/trials/t1/stages/1/rows", body, "application/json");
        EXPECT_TRUE(r && r->status == 200);
      }
    });
  }
  for (auto& w : workers) w.join();
  EXPECT_EQ(get("/api/trials/t1").second["n_rows"], 40);
  // The replayed log agrees with memory.
  TrialStore replay(dir_.string());
  auto e = replay.find("t1");
  EXPECT_EQ(e->state.row_count(), 40u);
}

TEST(TrialStore, ReplayReproducesState) {
  const fs::path dir = scratch_dir("replay");
  io::json before;
  {
    TrialStore store(dir.string());
    TrialService svc(store);
    ASSERT_EQ(svc.create(kTrial).status, 201);
    ASSERT_EQ(svc.append_rows("t1", 1, kStage1Rows).status, 200);
    ASSERT_EQ(svc.lock("t1", 1).status, 200);
    ASSERT_EQ(svc.append_rows("t1", 2, R"([{"center_id": "d1", "arm": "intervention", "y": 0.8, "a": [3]}])").status,
              200);
    ASSERT_EQ(svc.create(R"({"link": "logit", "bounds": {"lower": [0], "upper": [1]},
                             "cost": {"kind": "linear", "unit_costs": [1]}, "theta": 0.5})")
                  .status,
              201);
    before = svc.get("t1").body;
  }
  TrialStore store(dir.string());
  TrialService svc(store);
  EXPECT_EQ(svc.get("t1").body, before);
  EXPECT_EQ(store.ids(), (std::vector<std::string>{"t1", "trial-0001"}));
  // New auto ids skip existing ones.
  EXPECT_EQ(svc.create(R"({"link": "identity", "bounds": {"lower": [0], "upper": [1]},
                           "cost": {"kind": "linear", "unit_costs": [1]}, "theta": 0.5})")
                .body["trial"]["id"],
            "trial-0002");
  fs::remove_all(dir);
}

TEST(TrialStore, CorruptLogNamesFileAndLine) {
  const fs::path dir = scratch_dir("corrupt");
  {
    TrialStore store(dir.string());
    TrialService(store).create(kTrial);
  }
  std::ofstream(dir / "t1.jsonl", std::ios::app) << "{\"event\": \"rows\", \"stage\": 1}\n";
  try {
    TrialStore store(dir.string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("t1.jsonl:2"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(TrialStore, MemoryOnlyWritesNothing) {
  TrialStore store;
  TrialService svc(store);
  EXPECT_EQ(svc.create(kTrial).status, 201);
  EXPECT_TRUE(store.log_path("t1").empty());
  EXPECT_EQ(svc.append_rows("t1", 1, kStage1Rows).status, 200);
}

TEST(TrialMeta, IdRules) {
  EXPECT_TRUE(valid_trial_id("abc-DEF_123"));
  EXPECT_FALSE(valid_trial_id(""));
  EXPECT_FALSE(valid_trial_id("../etc"));
  EXPECT_FALSE(valid_trial_id(std::string(65, 'a')));
}
