#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "moesim/engine.hpp"
#include "moesim/error.hpp"
#include "support.hpp"

using namespace moesim;
namespace fs = std::filesystem;

namespace {

SimReport sample_report(std::uint64_t seed = 1, const char* preset = "config5") {
  SyntheticParams p;
  p.seed = seed;
  p.prefill_tokens = 4;
  p.decode_tokens = 6;
  Trace t = generate_synthetic(builtin_spec("olmoe"), p);
  SimConfig c;
  apply_preset(c, preset);
  return run_simulation(c, t);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("moesim-test-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

PredictionRecord predicted(int pass, int layer, std::vector<int> experts) {
  PredictionRecord p;
  p.source_pass = pass;
  p.source_layer = layer - 1;
  p.target_pass = pass;
  p.target_layer = layer;
  p.experts = std::move(experts);
  return p;
}

AccessRecord demanded(int pass, int layer, int expert) {
  AccessRecord a;
  a.pass = pass;
  a.layer = layer;
  a.expert = expert;
  return a;
}

}  // namespace

TEST_CASE("miss classification") {
  CHECK(classify_miss({}, 0) == MissClass::compulsory);
  CHECK(classify_miss({true, 7}, 7) == MissClass::collision);
  CHECK(classify_miss({true, 6}, 7) == MissClass::capacity);
}

TEST_CASE("preserved mass") {
  CHECK(preserved_mass(0.0, 0.0) == 1.0);
  CHECK(preserved_mass(0.0, 3.0) == 1.0);
  CHECK(preserved_mass(0.75, 3.0) == 0.75);
  CHECK(preserved_mass(4.0, 3.0) == 0.0);
}

TEST_CASE("prefetch precision and recall from the log") {
  EventLog log;
  log.push(predicted(0, 1, {1, 2}));
  log.push(demanded(0, 1, 2));
  log.push(demanded(0, 1, 3));
  auto acc = prefetch_precision_recall(log);
  CHECK(acc.precision == 0.5);
  CHECK(acc.recall == 0.5);

  EventLog over;
  std::vector<int> sixteen;
  for (int e = 0; e < 16; ++e) sixteen.push_back(e);
  over.push(predicted(2, 4, sixteen));
  for (int e = 0; e < 16; e += 2) over.push(demanded(2, 4, e));
  auto o = prefetch_precision_recall(over);
  CHECK(o.precision == 0.5);
  CHECK(o.recall == 1.0);

  EventLog none;
  none.push(demanded(0, 0, 1));
  auto z = prefetch_precision_recall(none);
  CHECK(z.precision == 1.0);
  CHECK(z.zero_denominator);
}

TEST_CASE("micro and macro averages differ when layers differ") {
  EventLog log;
  log.push(predicted(0, 1, {1}));
  log.push(demanded(0, 1, 1));
  log.push(predicted(0, 2, {1, 2, 3}));
  log.push(demanded(0, 2, 9));
  auto acc = prefetch_precision_recall(log);
  CHECK(acc.precision == 0.25);
  CHECK(acc.precision_macro == 0.5);
  CHECK(acc.recall == 0.5);
  CHECK(acc.recall_macro == 0.5);
}

TEST_CASE("online prefetch accuracy matches the log") {
  SyntheticParams p;
  p.seed = 2;
  p.prefill_tokens = 4;
  p.decode_tokens = 8;
  Trace t = generate_synthetic(builtin_spec("olmoe"), p);
  for (const char* preset : {"config1", "config2", "config5"}) {
    SimConfig c;
    apply_preset(c, preset);
    EventLog log;
    auto r = run_simulation(c, t, &log);
    CHECK(r.prefetch == prefetch_precision_recall(log));
  }
}

TEST_CASE("report round trip") {
  for (const char* preset : {"config1", "config2", "config3", "config4", "config5"}) {
    auto r = sample_report(3, preset);
    auto back = parse_report_json(report_json(r));
    CHECK(back == r);
    CHECK(report_json(back) == report_json(r));
  }
  CHECK_THROWS(parse_report_json("{"));
}

TEST_CASE("accounting checks catch broken identities") {
  auto r = sample_report();
  CHECK_NOTHROW(check_accounting(r));

  auto a = r;
  ++a.totals.hits;
  CHECK_THROWS_AS(check_accounting(a), SimError);

  auto b = r;
  ++b.totals.capacity_misses;
  CHECK_THROWS_AS(check_accounting(b), SimError);

  auto c = r;
  c.per_layer.pop_back();
  CHECK_THROWS_AS(check_accounting(c), SimError);

  auto d = r;
  d.routing_fidelity = 1.5;
  CHECK_THROWS_AS(check_accounting(d), SimError);

  auto e = r;
  e.sync_overhead_us += 1;
  CHECK_THROWS_AS(check_accounting(e), SimError);
}

TEST_CASE("rates") {
  SimReport r;
  CHECK(r.hit_rate() == 0.0);
  r.totals.demanded = 10;
  r.totals.hits = 4;
  r.totals.misses = 5;
  r.totals.collision_misses = 2;
  CHECK(r.hit_rate() == 0.4);
  CHECK(r.collision_rate() == 0.2);
  CHECK(r.collision_share_of_misses() == 0.4);
}

TEST_CASE("csv rows") {
  TempDir dir;
  auto path = (dir.path / "rows.csv").string();
  auto r1 = sample_report(1);
  auto r2 = sample_report(2);
  append_csv_rows({r1}, path);
  append_csv_rows({r2}, path);
  std::istringstream in(slurp(path));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] + "\n" == csv_header());
  CHECK(lines[1] + "\n" == csv_row(r1));
  CHECK(lines[2] + "\n" == csv_row(r2));
  auto columns = [](const std::string& s) { return std::count(s.begin(), s.end(), ',') + 1; };
  CHECK(columns(lines[1]) == columns(lines[0]));
}

TEST_CASE("per-layer table") {
  auto r = sample_report();
  std::istringstream in(per_layer_table(r));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  CHECK(lines.size() == 1 + 16);
  CHECK(lines[0].rfind("layer,", 0) == 0);
}

TEST_CASE("writers") {
  TempDir dir;
  auto r = sample_report();
  auto json_path = dir.path / "r.json";
  write_report_json(r, json_path.string());
  CHECK(parse_report_json(slurp(json_path)) == r);

  write_report_json(r, json_path.string());
  CHECK(slurp(json_path) == report_json(r));

  auto bad = (dir.path / "missing" / "r.json").string();
  try {
    write_report_json(r, bad);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find(bad) != std::string::npos);
  }

  auto broken = r;
  ++broken.totals.demanded;
  CHECK_THROWS_AS(write_report_json(broken, (dir.path / "x.json").string()), SimError);
}

TEST_CASE("summary line") {
  auto line = summary_line(sample_report());
  for (auto key : {"hit_rate=", "collision_rate=", "ttft_us=", "decode_tokens_per_sec="})
    CHECK(line.find(key) != std::string::npos);
}

TEST_CASE("report carries both collision normalizations") {
  auto text = report_json(sample_report());
  CHECK(text.find("\"collision_rate\"") != std::string::npos);
  CHECK(text.find("\"collision_share_of_misses\"") != std::string::npos);
}
