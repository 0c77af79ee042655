#include <doctest.h>

#include <fstream>
#include <sstream>

#include "ritini/bench.hpp"
#include "ritini/graph_json.hpp"
#include "test_util.hpp"

using namespace ritini;
using namespace ritini::bench;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

BenchmarkConfig small_config(std::vector<std::string> methods, int replicates) {
  BenchmarkConfig c;
  SystemSpec s;
  s.name = "five-node";
  s.steps = 120;
  c.systems = {s};
  c.methods = std::move(methods);
  c.replicates = replicates;
  c.train.epochs = 5;
  c.train.model.hidden = 4;
  c.baseline.n_perm = 19;
  return c;
}

}  // namespace

TEST_SUITE("bench") {

TEST_CASE("evaluate examples") {
  graph::WeightedDigraph truth(5, {{0, 1}, {0, 2}, {0, 3}, {3, 4}, {4, 3}});
  CHECK(evaluate(truth, truth, Metric::ged).value == 0.0);
  CHECK(evaluate(truth, truth, Metric::precision).value == 1.0);
  CHECK(evaluate(truth, truth, Metric::recall).value == 1.0);
  graph::WeightedDigraph sub(5, {{0, 1}, {0, 2}, {3, 4}});
  CHECK(evaluate(sub, truth, Metric::precision).value == 1.0);
  CHECK(evaluate(sub, truth, Metric::recall).value == doctest::Approx(0.6));
  CHECK(evaluate(sub, truth, Metric::ged).value == 2.0);
  graph::WeightedDigraph a(4, {{0, 1}, {1, 2}}), b(4, {{2, 3}, {3, 0}, {1, 0}});
  CHECK(evaluate(a, b, Metric::ged).value == 5.0);
  auto empty = evaluate(graph::WeightedDigraph(5), truth, Metric::precision);
  CHECK(empty.value == 0.0);
  CHECK(empty.warning.has_value());
  CHECK_THROWS_AS(evaluate(a, truth, Metric::ged), SizeMismatchError);
  CHECK(parse_metric("recall") == Metric::recall);
  CHECK_THROWS_AS(parse_metric("f1"), ConfigError);
}

TEST_CASE("evaluate reads graph files and dataset directories") {
  TempDir dir("eval");
  graph::WeightedDigraph pred(5, {{0, 1}, {2, 4}});
  graph::write_graph(dir.path / "pred.json", pred);
  auto ds = make_system(SystemSpec{"five-node", SystemKind::five_node, 0, 60}, 1);
  data::save_dataset(ds, dir.path / "ds");
  graph::write_graph(dir.path / "truth.json", *ds.ground_truth);
  const double direct = static_cast<double>(graph::graph_edit_distance(pred, *ds.ground_truth));
  CHECK(evaluate(dir.path / "pred.json", dir.path / "truth.json", Metric::ged).value == direct);
  CHECK(evaluate(dir.path / "pred.json", dir.path / "ds", Metric::ged).value == direct);
}

TEST_CASE("system specs") {
  auto s = parse_system_spec("wc", "kind=wilson-cowan nodes=6 steps=300 noise=0.02");
  CHECK(s.kind == SystemKind::wilson_cowan);
  CHECK(s.nodes == 6);
  CHECK(s.steps == 300);
  CHECK(s.noise == doctest::Approx(0.02));
  CHECK_THROWS_AS(parse_system_spec("x", "kind=lorenz"), ConfigError);
  CHECK_THROWS_AS(parse_system_spec("x", "kind=iaf colour=red"), ConfigError);
  for (auto k : {SystemKind::five_node, SystemKind::wilson_cowan, SystemKind::iaf, SystemKind::dmf})
    CHECK(parse_system(system_name(k)) == k);
  auto ds = make_system(s, 3);
  CHECK(ds.vertex_count() == 6);
  CHECK(ds.series.size() == 3);
  CHECK(ds.ground_truth.has_value());
  CHECK(make_system(s, 3).series[1].values() == ds.series[1].values());
}

TEST_CASE("default spiking system fires") {
  auto ds = make_system(parse_system_spec("iaf", "kind=iaf nodes=20"), 1);
  const auto& v = ds.series.front().values();
  CHECK(v.rows() == 201);
  CHECK(v.mean() > 1.0);
  for (Eigen::Index j = 0; j < v.cols(); ++j) CHECK(v.col(j).maxCoeff() > v.col(j).minCoeff());
}

TEST_CASE("config file parsing") {
  TempDir dir("cfg");
  {
    std::ofstream out(dir.path / "bench.ini");
    out << "[systems]\nfive = kind=five-node steps=150 noise=0.15\nwc = kind=wilson-cowan nodes=5\n"
           "[methods]\nlist = ritini, gc, pc\nepochs = 42\nalpha = 0.01\nn_perm = 50\n"
           "[report]\nreplicates = 3\nseed = 7\nworkers = 2\n";
  }
  auto c = load_config(dir.path / "bench.ini");
  REQUIRE(c.systems.size() == 2);
  CHECK(c.systems[0].name == "five");
  CHECK(c.systems[0].steps == 150);
  CHECK(c.systems[1].kind == SystemKind::wilson_cowan);
  CHECK(c.methods == std::vector<std::string>{"ritini", "gc", "pc"});
  CHECK(c.train.epochs == 42);
  CHECK(c.baseline.alpha == 0.01);
  CHECK(c.baseline.n_perm == 50);
  CHECK(c.replicates == 3);
  CHECK(c.seed == 7);
  CHECK(c.workers == 2);
  {
    std::ofstream out(dir.path / "bad.ini");
    out << "[report]\nreplicates = 0\n";
  }
  CHECK_THROWS_AS(load_config(dir.path / "bad.ini"), ConfigError);
  {
    std::ofstream out(dir.path / "typo.ini");
    out << "[methods]\nepoch = 3\n";
  }
  CHECK_THROWS_AS(load_config(dir.path / "typo.ini"), ConfigError);
}

TEST_CASE("large systems need the large flag") {
  BenchmarkConfig c = small_config({"gc"}, 1);
  c.systems[0] = SystemSpec{"iaf-big", SystemKind::iaf, 60, 100};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.large = true;
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("single replicate has no standard deviation") {
  auto r = run_benchmark(small_config({"gc", "pc"}, 1));
  auto a = r.aggregate("five-node", "gc");
  CHECK(a.runs == 1);
  CHECK(a.mean.has_value());
  CHECK_FALSE(a.sd.has_value());
  CHECK(r.csv().find("±") == std::string::npos);
}

TEST_CASE("gc-only report has one column") {
  auto r = run_benchmark(small_config({"gc"}, 2));
  const std::string csv = r.csv();
  CHECK(csv.substr(0, csv.find('\n')) == "system,gc");
  CHECK(csv.find("±") != std::string::npos);
  CHECK(r.cells.size() == 2);
}

TEST_CASE("reports are reproducible and match the metric on saved graphs") {
  TempDir a("bench_a"), b("bench_b");
  auto config = small_config({"ritini", "gc", "mte", "pc"}, 2);
  config.ablation = true;
  config.out = a.path;
  auto ra = run_benchmark(config);
  config.out = b.path;
  config.workers = 2;
  auto rb = run_benchmark(config);
  CHECK(slurp(a.path / "report.csv") == slurp(b.path / "report.csv"));
  CHECK(ra.csv() == rb.csv());
  CHECK(ra.csv().find("ritini-no-perturbation") != std::string::npos);
  int checked = 0;
  for (const auto& cell : ra.cells) {
    REQUIRE(cell.ok);
    auto dir = a.path / "five-node" / ("seed_" + std::to_string(cell.seed));
    auto truth = data::load_dataset(dir / "dataset").ground_truth;
    REQUIRE(truth.has_value());
    auto file = cell.method.rfind("ritini", 0) == 0 ? dir / cell.method / "static_graph.json" : dir / cell.method / "graph.json";
    REQUIRE(std::filesystem::exists(file));
    CHECK(cell.ged == static_cast<double>(graph::graph_edit_distance(graph::read_graph(file), *truth)));
    ++checked;
  }
  CHECK(checked == 10);
  CHECK(std::filesystem::exists(a.path / "report.json"));
}

TEST_CASE("failed cells do not abort the benchmark") {
  auto config = small_config({"gc", "ritini"}, 1);
  config.systems[0].steps = 10;  // too short for 5 Granger lags
  auto r = run_benchmark(config);
  auto gc = r.aggregate("five-node", "gc");
  CHECK(gc.failed == 1);
  CHECK_FALSE(gc.mean.has_value());
  CHECK(r.csv().find("FAILED") != std::string::npos);
}

}
