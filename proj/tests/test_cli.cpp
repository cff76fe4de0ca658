#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "constrex/io.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace constrex;

namespace {

struct Workspace {
    fs::path dir;
    Workspace() {
        dir = fs::temp_directory_path() / ("constrex_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
    std::string write(const std::string& name, const std::string& text) const {
        io::write_text(dir / name, text);
        return path(name);
    }
};

int run(const std::string& args) {
    const std::string cmd = std::string(CONSTREX_CLI) + " " + args + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string matrix_csv(const MatrixXd& m) {
    std::ostringstream ss;
    io::write_csv_matrix(ss, m);
    return ss.str();
}

}  // namespace

TEST_CASE("estimate fits an intercept") {
    Workspace ws;
    const auto x = ws.write("x.csv", "1\n1\n1\n1\n");
    const auto y = ws.write("y.csv", "2\n2\n2\n2\n");
    REQUIRE(run("estimate --x " + x + " --y " + y + " --kind ols -o " + ws.path("b.csv")) == 0);
    CHECK(io::read_text(ws.path("b.csv")) == "2\n");
    const auto side = nlohmann::json::parse(io::read_text(ws.path("b.csv.json")));
    CHECK(side.at("kind") == "ols");
    CHECK(side.contains("gram_condition"));
}

TEST_CASE("estimate requires paired constraint files") {
    Workspace ws;
    const auto x = ws.write("x.csv", "1\n1\n1\n1\n");
    const auto y = ws.write("y.csv", "2\n2\n2\n2\n");
    const auto a = ws.write("a.csv", "1\n");
    CHECK(run("estimate --x " + x + " --y " + y + " --a " + a + " --kind cls -o " + ws.path("b.csv")) == 2);
    CHECK(run("estimate --x " + ws.path("missing.csv") + " --y " + y + " -o " + ws.path("b.csv")) == 2);
    CHECK(run("estimate --x " + x + " --y " + y + " --kind ridge -o " + ws.path("b.csv")) == 2);
    CHECK(run("estimate --x " + x + " --y " + y) == 2);
    CHECK(run("no-such-command") == 2);
}

TEST_CASE("estimate cls matches the KKT oracle") {
    Workspace ws;
    const auto s = testing::small_instance();
    const auto x = ws.write("x.csv", matrix_csv(s.x));
    const auto y = ws.write("y.csv", matrix_csv(s.y));
    const auto a = ws.write("a.csv", matrix_csv(s.a));
    const auto c = ws.write("c.csv", matrix_csv(s.c));
    REQUIRE(run("estimate --x " + x + " --y " + y + " --a " + a + " --c " + c + " --kind cls -o " + ws.path("b.csv")) ==
            0);
    const VectorXd b = io::read_csv_vector(ws.path("b.csv"));
    REQUIRE(b.size() == 3);
    CHECK(b.allFinite());
    CHECK(testing::rel_err(b, testing::kkt_solve(s.x, s.y, s.a, s.c)) < 1e-10);
    const auto side = nlohmann::json::parse(io::read_text(ws.path("b.csv.json")));
    CHECK(side.at("feasibility_residual").get<double>() <= 1e-8);
}

TEST_CASE("estimate reports numerical failures with exit 3") {
    Workspace ws;
    const auto x = ws.write("x.csv", "1,1\n1,1\n1,1\n1,1\n");
    const auto y = ws.write("y.csv", "1\n2\n3\n4\n");
    CHECK(run("estimate --x " + x + " --y " + y + " --kind ols -o " + ws.path("b.csv")) == 3);
    const auto sigma = ws.write("s.csv", "1,2\n2,1\n");
    CHECK(run("estimate --x " + x + " --y " + y + " --kind oracle --sigma " + sigma + " -o " + ws.path("b.csv")) == 3);
}

TEST_CASE("infer writes the inference table") {
    Workspace ws;
    testing::Gen g(81);
    const MatrixXd xm = g.normal_matrix(50, 4);
    const VectorXd ym = xm * Eigen::Vector4d(1, 0, 2, -1) + g.normal_vector(50);
    const auto x = ws.write("x.csv", matrix_csv(xm));
    const auto y = ws.write("y.csv", matrix_csv(ym));
    const auto a = ws.write("a.csv", "1,1,0,0\n");
    const auto c = ws.write("c.csv", "1\n");
    const auto sigma = ws.write("s.csv", matrix_csv(MatrixXd::Identity(4, 4)));
    REQUIRE(run("infer --x " + x + " --y " + y + " --a " + a + " --c " + c + " --sigma " + sigma +
                " --variance cls --sigma-sq 1 -o " + ws.path("i.csv")) == 0);
    const std::string text = io::read_text(ws.path("i.csv"));
    CHECK(text.rfind("index,estimate,std_error,ci_low,ci_high,p_value,p_adjusted,rejected\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 5);
    REQUIRE(run("infer --x " + x + " --y " + y + " --a " + a + " --c " + c + " --variance jackknife -o " +
                ws.path("j.csv")) == 0);
    CHECK(run("infer --x " + x + " --y " + y + " --variance cls --level 1.5") == 2);
}

TEST_CASE("theory reports the isotropic risk") {
    Workspace ws;
    const auto params =
        ws.write("t.json", R"({"n": 200, "p": 100, "q": 50, "sigma_sq": 1, "covariance": {"variant": "isotropic"}})");
    REQUIRE(run("theory " + params + " -o " + ws.path("r.json")) == 0);
    const auto r = nlohmann::json::parse(io::read_text(ws.path("r.json")));
    CHECK(r.at("asymptotic_risk").get<double>() == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
    CHECK(r.at("isotropic_closed_form").get<double>() == doctest::Approx(1.0 / 3.0).epsilon(1e-6));

    const auto zero = ws.write("z.json", R"({"n": 200, "p": 100, "q": 0})");
    REQUIRE(run("theory " + zero + " -o " + ws.path("z_out.json")) == 0);
    CHECK(nlohmann::json::parse(io::read_text(ws.path("z_out.json"))).at("expected_gain").get<double>() == 0.0);

    const auto wide = ws.write("w.json", R"({"n": 100, "p": 120, "q": 10})");
    CHECK(run("theory " + wide) == 2);
}

TEST_CASE("theory with a design reports conditional quantities") {
    Workspace ws;
    testing::Gen g(82);
    ws.write("x.csv", matrix_csv(g.normal_matrix(30, 5)));
    ws.write("a.csv", "1,0,0,0,0\n0,1,1,0,0\n");
    ws.write("c.csv", "0\n0\n");
    const auto params = ws.write(
        "t.json", R"({"n": 30, "p": 5, "q": 2, "x_csv": "x.csv", "a_csv": "a.csv", "c_csv": "c.csv"})");
    REQUIRE(run("theory " + params + " -o " + ws.path("r.json")) == 0);
    const auto r = nlohmann::json::parse(io::read_text(ws.path("r.json")));
    CHECK(r.at("finite_sample_trace_risk").get<double>() > 0.0);
    CHECK(r.at("gain_eigen_weights").size() == 2);
}

TEST_CASE("ustat subcommand") {
    Workspace ws;
    testing::Gen g(83);
    const MatrixXd xm = g.normal_matrix(5, 2);
    const VectorXd ym = g.normal_vector(5);
    const auto x = ws.write("x.csv", matrix_csv(xm));
    const auto y = ws.write("y.csv", matrix_csv(ym));
    REQUIRE(run("ustat --x " + x + " --y " + y + " --ell 1 --k 1 -o " + ws.path("u.csv")) == 0);
    const double v = io::parse_double(io::read_text(ws.path("u.csv")));
    CHECK(v == doctest::Approx(testing::brute_ustat(xm, ym, 1, 1)).epsilon(1e-12));
}

TEST_CASE("simulate smoke config is thread independent") {
    Workspace ws;
    const std::string cfg = std::string(CONSTREX_CONFIG_DIR) + "/s2_m1_smoke.json";
    REQUIRE(run("simulate " + cfg + " --threads 1 -o " + ws.path("one.csv")) == 0);
    REQUIRE(run("simulate " + cfg + " --threads 8 -o " + ws.path("eight.csv")) == 0);
    const std::string one = io::read_text(ws.path("one.csv"));
    CHECK(one == io::read_text(ws.path("eight.csv")));
    CHECK(std::count(one.begin(), one.end(), '\n') == 1 + 21 * 3);
    CHECK(one.find("s2_m1_smoke,200,100,100,cls,nan,nan,nan,nan,nan,nan,nan,0,1\n") != std::string::npos);
    const auto bad = ws.write("bad.json", R"({"n": 10})");
    CHECK(run("simulate " + bad) == 2);
}
