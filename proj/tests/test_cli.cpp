#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "polycouple/io.hpp"

using polycouple::json;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

const char* cli_path() {
    const char* p = std::getenv("POLYCOUPLE_CLI_PATH");
    REQUIRE(p != nullptr);
    return p;
}

std::string config_dir() {
    const char* p = std::getenv("POLYCOUPLE_CONFIG_DIR");
    REQUIRE(p != nullptr);
    return p;
}

CliResult run_cli(const std::string& args) {
    const std::string out = (std::filesystem::temp_directory_path() / "pc_cli_out.txt").string();
    const std::string err = (std::filesystem::temp_directory_path() / "pc_cli_err.txt").string();
    const std::string cmd =
        std::string(cli_path()) + " " + args + " >" + out + " 2>" + err;
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("cli requires a subcommand", "[cli]") {
    CHECK(run_cli("").code == 2);
    CHECK(run_cli("frobnicate").code == 2);
    CHECK(run_cli("couple --no-such-flag").code == 2);
}

TEST_CASE("cli help", "[cli]") {
    const CliResult top = run_cli("--help");
    CHECK(top.code == 0);
    for (const char* sub : {"couple", "sweep", "check-phc", "reduce", "oracle"})
        CHECK(top.out.find(sub) != std::string::npos);

    const CliResult couple = run_cli("couple --help");
    CHECK(couple.code == 0);
    for (const char* flag : {"--scenario", "--R", "--trace", "--strict", "--max-cycles"})
        CHECK(couple.out.find(flag) != std::string::npos);
}

TEST_CASE("rank condition verdicts", "[cli][phc]") {
    const std::string dir = config_dir();
    SECTION("holds for the rotation pair") {
        const CliResult r = run_cli("check-phc " + dir + "/heisenberg.json");
        REQUIRE(r.code == 0);
        const json v = json::parse(r.out);
        CHECK(v.at("holds").get<bool>());
        CHECK(v.at("rank").get<int>() == 1);
    }
    SECTION("fails for the exact form pair") {
        const CliResult r = run_cli("check-phc " + dir + "/exact_form.json");
        REQUIRE(r.code == 3);
        const json v = json::parse(r.out);
        CHECK_FALSE(v.at("holds").get<bool>());
        CHECK(v.at("rank").get<int>() == 0);
    }
    SECTION("missing config is a usage error") {
        const CliResult r = run_cli("check-phc /nonexistent/x.json");
        CHECK(r.code == 2);
        CHECK(json::parse(r.err).contains("error"));
    }
}

TEST_CASE("field pair reduction output", "[cli][reduce]") {
    const CliResult r = run_cli("reduce " + config_dir() + "/heisenberg.json");
    REQUIRE(r.code == 0);
    const json red = json::parse(r.out);
    REQUIRE(red.contains("z"));
    REQUIRE(red.at("z").size() == 1);
    CHECK(red.at("z")[0].at("value").get<double>() == 0.5);
    CHECK(red.at("z")[0].at("value_tilde").get<double>() == 0.0);
    CHECK(red.at("z")[0].at("index").at("a").get<int>() == 1);
    CHECK(red.contains("phi"));
    CHECK(red.contains("psi1"));

    const CliResult bad = run_cli("reduce " + config_dir() + "/exact_form.json");
    CHECK(bad.code == 3);
}

TEST_CASE("single coupling runs", "[cli][couple]") {
    SECTION("default scenario succeeds") {
        const CliResult r = run_cli("couple --seed 42 --strict");
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j.at("record").at("success").get<bool>());
        CHECK(j.at("record").at("scenario").get<std::string>() == "heisenberg");
        CHECK(j.at("outcome").at("cycles").get<long>() >= 1);
    }
    SECTION("strict mode signals failure") {
        const CliResult r = run_cli("couple --seed 42 --max-cycles 1 --tol 1e-14 --strict");
        const json j = json::parse(r.out);
        if (!j.at("record").at("success").get<bool>()) {
            CHECK(r.code == 4);
        } else {
            CHECK(r.code == 0);
        }
        const CliResult lax = run_cli("couple --seed 42 --max-cycles 1 --tol 1e-14");
        CHECK(lax.code == 0);
    }
    SECTION("trace streams cycle stats") {
        const CliResult r = run_cli("couple --seed 7 --trace");
        REQUIRE(r.code == 0);
        const std::vector<std::string> rows = lines_of(r.err);
        REQUIRE(!rows.empty());
        for (const std::string& line : rows) {
            const json cs = json::parse(line);
            CHECK(cs.contains("stage"));
            CHECK(cs.contains("cycle"));
        }
    }
    SECTION("monomial scenario via flags") {
        const CliResult r = run_cli("couple --scenario monomial --a 2 --b 0 --n 2 --seed 3 --strict");
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j.at("record").at("scenario").get<std::string>() == "monomial_2_0");
        CHECK(j.at("record").at("success").get<bool>());
    }
    SECTION("config file plus overrides") {
        const CliResult r = run_cli("couple --config " + config_dir() +
                                    "/monomial_2_0.json --seed 5 --strict");
        REQUIRE(r.code == 0);
        CHECK(json::parse(r.out).at("record").at("success").get<bool>());
    }
}

TEST_CASE("replica sweeps", "[cli][sweep]") {
    const std::string out =
        (std::filesystem::temp_directory_path() / "pc_cli_sweep.csv").string();
    SECTION("writes csv deterministically") {
        const std::string cmd = "sweep --config " + config_dir() +
                                "/heisenberg_sweep.json --replicas 6 --out " + out;
        const CliResult r = run_cli(cmd);
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j.at("scenario").get<std::string>() == "heisenberg");
        CHECK(j.at("records").get<long>() == 6);
        CHECK(j.at("successes").get<long>() >= 5);
        CHECK(j.at("censored").get<long>() == 0);
        REQUIRE(std::filesystem::exists(out));
        const std::string first = slurp(out);
        const std::vector<polycouple::RunRecord> recs = polycouple::parse_run_csv(out);
        CHECK(recs.size() == 6);

        const CliResult again = run_cli(cmd);
        REQUIRE(again.code == 0);
        CHECK(slurp(out) == first);
        std::filesystem::remove(out);
        std::filesystem::remove(out + ".meta.json");
    }
    SECTION("full scenario config") {
        const CliResult r =
            run_cli("sweep --config " + config_dir() + "/full_n2.json --replicas 2");
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j.at("scenario").get<std::string>() == "full_2");
        CHECK(j.at("records").get<long>() == 2);
    }
    SECTION("rank-check config dispatches inline") {
        const CliResult r = run_cli("sweep --config " + config_dir() + "/heisenberg.json");
        REQUIRE(r.code == 0);
        CHECK(json::parse(r.out).at("holds").get<bool>());
    }
    SECTION("oracle config dispatches inline") {
        const CliResult r =
            run_cli("sweep --config " + config_dir() + "/oracle_levy_identity.json");
        REQUIRE(r.code == 0);
        const json j = json::parse(r.out);
        CHECK(j.at("ratios_in_band").get<bool>());
    }
    SECTION("config is required") {
        CHECK(run_cli("sweep").code == 2);
        CHECK(run_cli("sweep --config /nonexistent/x.json").code == 2);
    }
}

TEST_CASE("oracle subcommand", "[cli][oracle]") {
    const CliResult r = run_cli("oracle --name I10_var --t 0.3 --dt 2e-3 --N 1500 --seed 5");
    REQUIRE(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("name").get<std::string>() == "I10_var");
    CHECK(j.at("pass").get<bool>());

    CHECK(run_cli("oracle").code == 2);
    CHECK(run_cli("oracle --name nope").code == 2);
}
