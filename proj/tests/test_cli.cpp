#include "dgnc/lmo.hpp"
#include "dgnc/pose_graph.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace dgnc;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(DGNC_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dgnc_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage and IO errors exit with 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("solve --method nonsense") == 2);
    CHECK(run("solve --dataset /nonexistent/file.g2o") == 2);
    CHECK(run("deform --mesh /nonexistent.obj --before a --after b -o c.obj") == 2);
    CHECK(run("--help") == 0);
  }

  TEST_CASE("gen then solve") {
    const fs::path dir = scratch_dir("solve");
    CHECK(run("gen --rows 5 --cols 6 --robots 2 --outliers 0.3 -o " + q(dir / "g.g2o")) == 0);
    REQUIRE(fs::exists(dir / "g.g2o"));
    const MultiRobotPoseGraph g = load_dataset(dir / "g.g2o");
    CHECK(g.robots().size() == 2);
    CHECK(g.nodes.size() == 30);

    CHECK(run("solve --dataset " + q(dir / "g.g2o") + " --method D-GNC --ledger " + q(dir / "ledger.csv") +
              " --trajectory " + q(dir / "est.g2o")) == 0);
    CHECK(slurp(dir / "ledger.csv").starts_with("round,from,to,kind,bytes\n"));
    CHECK(read_g2o_vertices(dir / "est.g2o").size() == 30);
    CHECK(run("solve --dataset " + q(dir / "g.g2o") + " --method GNC") == 0);
    fs::remove_all(dir);
  }

  TEST_CASE("bench writes one row per run and is reproducible") {
    const fs::path dir = scratch_dir("bench");
    const std::string args = "bench --rows 4 --cols 5 --robots 2 --ratios 0.1,0.5 --thresholds 0.5 --seeds 2 "
                             "--methods GNC,D-GNC,PCM ";
    REQUIRE(run(args + "-o " + q(dir / "a")) == 0);
    REQUIRE(run(args + "-o " + q(dir / "b")) == 0);
    const std::string a = slurp(dir / "a" / "results.csv");
    CHECK(a == slurp(dir / "b" / "results.csv"));
    std::istringstream lines(a);
    std::string header, line;
    std::getline(lines, header);
    CHECK(header == "method,seed,outlier_ratio,threshold,ate_m,precision,recall,cost,bytes,wall_ms,status");
    std::size_t rows = 0;
    while (std::getline(lines, line)) {
      ++rows;
      CHECK(line.ends_with(",ok"));
    }
    CHECK(rows == 3 * 2 * 2);
    CHECK(fs::exists(dir / "a" / "ledgers" / "D-GNC_r0.5_p0.5_s0.csv"));
    fs::remove_all(dir);
  }

  TEST_CASE("deform follows the trajectory") {
    const fs::path dir = scratch_dir("deform");
    const TriMesh mesh = grid_mesh(8, 8, 0.5);
    save_mesh(mesh, dir / "mesh.obj");
    PoseMap before;
    for (std::uint32_t i = 0; i < 4; ++i) {
      before.emplace(NodeId{0, i}, Pose3d(Rot3d::about_z(0.2 * i), Vector3d(0.8 * i, 0.4 * i, 1.0)));
    }
    write_g2o_vertices(before, dir / "before.g2o");

    REQUIRE(run("deform --mesh " + q(dir / "mesh.obj") + " --before " + q(dir / "before.g2o") + " --after " +
                q(dir / "before.g2o") + " --voxel 0.6 --range 3 -o " + q(dir / "same.obj")) == 0);
    const TriMesh same = load_mesh(dir / "same.obj");
    REQUIRE(same.vertices.size() == mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) CHECK((same.vertices[i] - mesh.vertices[i]).norm() < 1e-9);
    CHECK(same.labels == mesh.labels);

    const Pose3d t(Rot3d::exp(Vector3d(0.05, -0.1, 0.4)), Vector3d(2, -1, 0.5));
    PoseMap after;
    for (const auto& [id, p] : before) after.emplace(id, t * p);
    write_g2o_vertices(after, dir / "after.g2o");
    REQUIRE(run("deform --mesh " + q(dir / "mesh.obj") + " --before " + q(dir / "before.g2o") + " --after " +
                q(dir / "after.g2o") + " --voxel 0.6 --range 3 -o " + q(dir / "moved.obj")) == 0);
    const TriMesh moved = load_mesh(dir / "moved.obj");
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
      CHECK((moved.vertices[i] - t * mesh.vertices[i]).norm() < 1e-6);
    }

    PoseMap short_after = after;
    short_after.erase(short_after.begin());
    write_g2o_vertices(short_after, dir / "short.g2o");
    CHECK(run("deform --mesh " + q(dir / "mesh.obj") + " --before " + q(dir / "before.g2o") + " --after " +
              q(dir / "short.g2o") + " -o " + q(dir / "x.obj")) != 0);
    fs::remove_all(dir);
  }
}
