#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sonotrap/cli.hpp"
#include "sonotrap/server.hpp"

using namespace sonotrap;
using namespace std::chrono_literals;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "sonotrap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "sonotrap_cli_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Cli, PhasesMatchEngine) {
  const auto r = run({"phases", "--target", "5,-3,90"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "id,phase_rad,delay_cycles");
  const auto layout = presets::flat_8x8();
  const auto frame =
      compute_frame(layout, FocalCommand{Vec3(5, -3, 90)}, make_medium(20.0), QuantizationConfig::for_layout(layout));
  size_t i = 0;
  while (std::getline(in, line)) {
    ASSERT_LT(i, frame.size());
    const auto last = line.rfind(',');
    EXPECT_EQ(std::stoi(line.substr(last + 1)), frame.delays_cycles[i]);
    ++i;
  }
  EXPECT_EQ(i, 64u);
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({"--help"}).code, 0);
  auto r = run({"phases", "--target", "0,0,100", "--bogus"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--target"), std::string::npos) << "usage is printed";
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"phases"}).code, 2);
  EXPECT_EQ(run({"phases", "--target", "0,0,-5"}).code, 2);
  EXPECT_EQ(run({"phases", "--target", "0,0,100", "--temp", "200"}).code, 2);
  EXPECT_EQ(run({"phases", "--target", "0,0,100", "--clock", "1.5e6"}).code, 2);  // 37.5 ticks per period
  EXPECT_EQ(run({"phases", "--target", "0,0,100", "--layout", "hexagon"}).code, 2);
  // An unreadable temperature sensor is a runtime failure.
  r = run({"phases", "--target", "0,0,100", "--temp-file", scratch("no_such_sensor").string()});
  EXPECT_EQ(r.code, 1) << r.err;
}

TEST(Cli, EnvironmentFallsBackBehindFlags) {
  ::setenv("SONOTRAP_FORMAT", "json", 1);
  auto r = run({"phases", "--target", "0,0,100"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(Json::parse(r.out).at("channels").size(), 64u);
  r = run({"phases", "--target", "0,0,100", "--format", "csv"});
  EXPECT_EQ(r.out.substr(0, 3), "id,");
  ::unsetenv("SONOTRAP_FORMAT");

  ::setenv("SONOTRAP_TEMP", "30", 1);
  r = run({"phases", "--target", "0,0,100", "--format", "json"});
  EXPECT_DOUBLE_EQ(Json::parse(r.out).at("medium").at("temperature_c").get<double>(), 30.0);
  ::unsetenv("SONOTRAP_TEMP");
}

TEST(Cli, FieldWidth) {
  const auto r = run({"field", "--width", "--target", "0,0,100"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = Json::parse(r.out);
  const double predicted = doc.at("predicted_mm").get<double>();
  EXPECT_NEAR(predicted, 2.0 * doc.at("wavelength_mm").get<double>() * 100.0 / doc.at("side_length_mm").get<double>(),
              1e-9);
  EXPECT_NEAR(doc.at("width_6db_mm").get<double>() / predicted, 1.0, 0.2);
}

TEST(Cli, FieldSliceFiles) {
  const auto csv = scratch("slice.csv");
  const auto r = run({"field", "--plane", "xy", "--offset", "100", "--u-min", "-3", "--u-max", "3", "--v-min", "-3",
                      "--v-max", "3", "--out", csv.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "x,y,|p|,SPL");
  const auto side = read_json_file(scratch("slice.json"));
  EXPECT_EQ(side.at("nu"), 7);
}

TEST(Cli, Bench) {
  const auto r = run({"bench", "--frames", "16", "--reps", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto doc = Json::parse(r.out);
  EXPECT_EQ(doc.at("batch_size"), 16);
  EXPECT_EQ(doc.at("channels"), 64);
  EXPECT_TRUE(doc.at("refresh_identity").at("ok").get<bool>());
  EXPECT_GT(doc.at("refresh_hz").get<double>(), 0.0);
  EXPECT_TRUE(doc.contains("reference_not_reproduced"));
}

TEST(Cli, EchoWritesAndRereadsTraces) {
  const auto dir = scratch("echo");
  auto r = run({"echo", "--particle", "5,0,100", "--out-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto doc = Json::parse(r.out);
  EXPECT_TRUE(doc.at("detected").get<bool>());
  EXPECT_EQ(doc.at("direction"), "east");
  std::vector<std::string> pcm;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".pcm") pcm.push_back(e.path().string());
  }
  std::sort(pcm.begin(), pcm.end());
  ASSERT_EQ(pcm.size(), 2u);
  std::vector<std::string> args{"echo", "--input", pcm[0], "--input", pcm[1]};
  r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(Json::parse(r.out).at("detected").get<bool>());
}

TEST(Cli, ExperimentPlan) {
  const auto plan = scratch("plan.json");
  write_json_file(plan, Json::parse(R"({"shape":"linear","radius_or_length":5,"speeds":[0,200],"timing":"hardware","iterations":1})"));
  const auto r = run({"experiment", plan.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  std::string line;
  size_t rows = 0;
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 6), "timing");
  while (std::getline(in, line)) {
    EXPECT_EQ(line.substr(0, 15), "hardware,linear");
    ++rows;
  }
  EXPECT_EQ(rows, 2u);
  EXPECT_EQ(run({"experiment", scratch("missing.json").string()}).code, 2);
}

// Launches the real binary and drives it over the socket.
TEST(CliServe, TelemetryFollowsMoveFocus) {
  const std::string command = std::string(SONOTRAP_BINARY) + " serve --port 0 --run-for 6 --particle 2>/dev/null";
  FILE* pipe = ::popen(command.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  char buf[512] = {};
  ASSERT_NE(std::fgets(buf, sizeof buf, pipe), nullptr);
  const auto ready = Json::parse(buf);
  EXPECT_EQ(ready.at("v"), 1);
  const int port = ready.at("port").get<int>();
  {
    LineClient client("127.0.0.1", port);
    const double rate = 10.0;
    ASSERT_EQ(client.request({1, Verb::Subscribe, {{"rate_hz", rate}}}).at("kind"), "ack");
    ASSERT_EQ(client.request({2, Verb::MoveFocus, {{"target", {0, 4, 160}}}}).at("kind"), "ack");
    const auto sent = std::chrono::steady_clock::now();
    bool seen = false;
    while (!seen && std::chrono::steady_clock::now() - sent < 2s) {
      const auto e = client.receive(500ms);
      if (e && e->at("kind") == "telemetry" && e->at("payload").at("focus") == Json::array({0.0, 4.0, 160.0})) {
        seen = true;
      }
    }
    const auto waited = std::chrono::duration<double>(std::chrono::steady_clock::now() - sent).count();
    EXPECT_TRUE(seen);
    EXPECT_LE(waited, 2.0 / rate + 0.05);
  }
  EXPECT_EQ(::pclose(pipe), 0);
}
