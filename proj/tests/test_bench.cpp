#include "doctest.h"
#include "dcd/bench.hpp"

using namespace dcd;

TEST_CASE("latency summary statistics") {
  const LatencyRow one = summarize_latency({5.0});
  CHECK(one.repeats == 1);
  CHECK(one.mean_ms == 5.0);
  CHECK(one.median_ms == 5.0);
  CHECK(one.p95_ms == 5.0);

  std::vector<double> twenty;
  for (int i = 20; i >= 1; --i) twenty.push_back(i);
  const LatencyRow r = summarize_latency(twenty);
  CHECK(r.mean_ms == 10.5);
  CHECK(r.median_ms == 10.5);
  CHECK(r.p95_ms == 19.0);  // nearest rank: ceil(0.95 * 20) = 19

  const LatencyRow odd = summarize_latency({3.0, 1.0, 2.0});
  CHECK(odd.median_ms == 2.0);
  CHECK(odd.p95_ms == 3.0);
  CHECK_THROWS_AS(summarize_latency({}), ConfigError);
}

TEST_CASE("dynamic model against its static counterpart") {
  ModelSpec spec;
  spec.desk.kind = DeskKind::Dcd;
  spec.desk.kernel = 3;
  spec.desk.width = 32;
  BenchOptions o;
  o.repeats = 1;
  const BenchReport single = bench_model(spec, "desk", o);
  REQUIRE(single.rows.size() == 2);
  CHECK(single.rows[0].role == "dynamic");
  CHECK(single.rows[0].repeats == 1);
  CHECK(single.rows[1].role == "static");
  CHECK(single.rows[1].ratio_to_static == 1.0);

  // Generating the kernels is extra work on any hardware.
  o.repeats = 60;
  const BenchReport r = bench_model(spec, "desk", o);
  CHECK(r.rows[0].ratio_to_static > 1.0);
  CHECK(r.rows[0].ratio_to_static == doctest::Approx(r.rows[0].mean_ms / r.rows[1].mean_ms));

  o.repeats = 0;
  CHECK_THROWS_AS(bench_model(spec, "desk", o), ConfigError);
}

TEST_CASE("static model yields one row") {
  ModelSpec spec;
  BenchOptions o;
  o.repeats = 3;
  const BenchReport r = bench_model(spec, "desk-static", o);
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].role == "static");
}

TEST_CASE("report round trips through csv") {
  BenchReport r;
  r.rows.push_back({"m", "dynamic", 7, 0.1, 0.25, 1.0 / 3.0, 1.4});
  r.rows.push_back({"m", "static", 7, 0.07, 0.2, 0.3, 1});
  const std::string csv = r.csv();
  CHECK(csv.rfind("model,role,repeats,mean_ms,median_ms,p95_ms,ratio_to_static\n", 0) == 0);
  const BenchReport back = parse_bench_csv(csv);
  REQUIRE(back.rows.size() == 2);
  CHECK(back.rows[0].p95_ms == 1.0 / 3.0);
  CHECK(back.rows[1].repeats == 7);
  CHECK(back.csv() == csv);
  CHECK_THROWS_AS(parse_bench_csv("model,role\n"), Error);
  CHECK_THROWS_AS(parse_bench_csv("model,role,repeats,mean_ms,median_ms,p95_ms,ratio_to_static\na,b\n"), Error);
}
