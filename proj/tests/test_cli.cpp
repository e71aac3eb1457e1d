#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

std::string cli_path() {
#ifdef ANCHORATTN_CLI_PATH
    return ANCHORATTN_CLI_PATH;
#else
    const char* env = std::getenv("ANCHORATTN_CLI_PATH");
    REQUIRE(env != nullptr);
    return env;
#endif
}

RunResult run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult result;
    std::array<char, 4096> buf;
    while (std::size_t got = std::fread(buf.data(), 1, buf.size(), pipe)) {
        result.output.append(buf.data(), got);
    }
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

bool file_exists(const std::string& path) {
    std::ifstream in(path);
    return static_cast<bool>(in);
}

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name) : path("/tmp/anchorattn_cli_" + name) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("no subcommand is a usage error") {
    CHECK(run("").exit_code == 2);
}

TEST_CASE("--help exits cleanly") {
    RunResult r = run("--help");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("verify") != std::string::npos);
}

TEST_CASE("unknown flags are usage errors") {
    CHECK(run("verify --definitely-not-a-flag").exit_code == 2);
    CHECK(run("bench --mechanisms bogus --n-values 8,16,32,64").exit_code == 2);
}

TEST_CASE("verify passes and its report is deterministic") {
    const std::string args = "verify --instances 48 --seed 3";
    RunResult first = run(args);
    CHECK(first.exit_code == 0);
    CHECK(first.output.find("PASS fast-equals-explicit") != std::string::npos);
    CHECK(first.output.find("PASS row-stochasticity") != std::string::npos);
    CHECK(first.output.find("PASS memory-contract") != std::string::npos);
    CHECK(first.output.find("FAIL") == std::string::npos);
    RunResult second = run(args);
    CHECK(second.output == first.output);
}

TEST_CASE("verify --poison-delta reports the forced failure and exits nonzero") {
    RunResult r = run("verify --instances 8 --poison-delta");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("poison-delta hook") != std::string::npos);
    CHECK(r.output.find("delta[0]") != std::string::npos);
}

TEST_CASE("gradcheck passes at the default step") {
    RunResult r = run("gradcheck --seed 11");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("head1.W_S") != std::string::npos);
    CHECK(r.output.find("FAIL") == std::string::npos);
}

TEST_CASE("gradcheck warns about steps outside the recommended band") {
    RunResult r = run("gradcheck --n 4 --m 2 --d 2 --heads 1 --step 1e-2 --tol 0.5");
    CHECK(r.output.find("outside the recommended band") != std::string::npos);
}

TEST_CASE("bench --dry-run prints the grid and writes nothing") {
    TempFile csv("dry.csv");
    TempFile jsonl("dry.jsonl");
    const std::string prefix = "/tmp/anchorattn_cli_dry";
    RunResult r = run("bench --dry-run --n-values 16,32 --m 4 --d 8 --out " + prefix);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("cell: mechanism=vanilla n=16") != std::string::npos);
    CHECK(r.output.find("cell: mechanism=anchor-fast n=32") != std::string::npos);
    CHECK_FALSE(file_exists(prefix + ".csv"));
    CHECK_FALSE(file_exists(prefix + ".jsonl"));
}

TEST_CASE("bench writes matching CSV and JSONL artifacts") {
    TempFile csv("run.csv");
    TempFile jsonl("run.jsonl");
    const std::string prefix = "/tmp/anchorattn_cli_run";
    RunResult r = run("bench --n-values 16,32,64,128 --m 4 --d 8 --reps 3 --seed 5 --out " +
                      prefix);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("scaling vanilla") != std::string::npos);

    std::ifstream in(prefix + ".csv");
    REQUIRE(in);
    std::string header;
    std::getline(in, header);
    CHECK(header == "mechanism,n,m,d,heads,reps,wall_ns_median,flops,checksum");
    std::size_t csv_rows = 0;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) ++csv_rows;
    }
    CHECK(csv_rows == 8);  // 2 mechanisms x 4 sizes

    std::ifstream jin(prefix + ".jsonl");
    REQUIRE(jin);
    std::size_t json_rows = 0;
    for (std::string line; std::getline(jin, line);) {
        if (line.empty()) continue;
        ++json_rows;
        CHECK(line.front() == '{');
        CHECK(line.back() == '}');
        CHECK(line.find("\"wall_ns_median\":") != std::string::npos);
    }
    CHECK(json_rows == csv_rows);
}

TEST_CASE("bench warns when m >= n") {
    TempFile csv("warn.csv");
    TempFile jsonl("warn.jsonl");
    RunResult r = run(
        "bench --mechanisms anchor-fast --n-values 8,16,32,64 --m 64 --d 4 "
        "--out /tmp/anchorattn_cli_warn");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("no complexity advantage") != std::string::npos);
}

TEST_CASE("bench cells over the memory ceiling exit with the capacity code") {
    RunResult r = run("bench --mechanisms vanilla --n-values 131072");
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("capacity error") != std::string::npos);
}

TEST_CASE("demo-train at zero epochs reports chance-level accuracy") {
    RunResult r = run("demo-train --epochs 0 --samples 60");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("holdout_accuracy=0.3333") != std::string::npos);
}

TEST_CASE("demo-train exits with the data code on a missing dataset") {
    RunResult r = run("demo-train --images /tmp/anchorattn_cli_missing.idx "
                      "--labels /tmp/anchorattn_cli_missing_lbl.idx");
    CHECK(r.exit_code == 4);
    CHECK(r.output.find("data error") != std::string::npos);
}

TEST_CASE("demo-train advises a smaller lr on divergence") {
    RunResult r = run("demo-train --epochs 2 --samples 24 --lr 1e8");
    CHECK(r.exit_code == 1);
    CHECK(r.output.find("smaller --lr") != std::string::npos);
}

TEST_CASE("anchors-fit writes the binary and CSV artifacts with a falling objective") {
    TempFile bin("fit.anchors");
    TempFile csv("fit.csv");
    const std::string prefix = "/tmp/anchorattn_cli_fit";
    RunResult r = run("anchors-fit --m 3 --iters 12 --n 90 --d 5 --clusters 3 --seed 4 "
                      "--out " + prefix);
    CHECK(r.exit_code == 0);

    // objective trace printed per iteration, non-increasing
    std::istringstream lines(r.output);
    std::vector<double> objectives;
    for (std::string line; std::getline(lines, line);) {
        const auto pos = line.find("objective=");
        if (pos != std::string::npos) {
            objectives.push_back(std::stod(line.substr(pos + 10)));
        }
    }
    REQUIRE(objectives.size() == 13);  // init + 12 iterations
    for (std::size_t i = 1; i < objectives.size(); ++i) {
        CHECK(objectives[i] <= objectives[i - 1] + 1e-12);
    }

    // binary header: "ANCR" magic, u32le m, u32le d
    std::ifstream in(prefix + ".anchors", std::ios::binary);
    REQUIRE(in);
    char magic[4];
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "ANCR");
    unsigned char dims[8];
    in.read(reinterpret_cast<char*>(dims), 8);
    const unsigned m = dims[0] | (dims[1] << 8) | (dims[2] << 16) | (unsigned(dims[3]) << 24);
    const unsigned d = dims[4] | (dims[5] << 8) | (dims[6] << 16) | (unsigned(dims[7]) << 24);
    CHECK(m == 3);
    CHECK(d == 5);
    std::vector<double> payload(m * d);
    in.read(reinterpret_cast<char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(double)));
    CHECK(in.gcount() == static_cast<std::streamsize>(payload.size() * sizeof(double)));

    // CSV mirror holds the same values
    std::ifstream mirror(prefix + ".csv");
    REQUIRE(mirror);
    std::size_t idx = 0;
    for (std::string line; std::getline(mirror, line);) {
        std::istringstream cells(line);
        for (std::string cell; std::getline(cells, cell, ',');) {
            REQUIRE(idx < payload.size());
            CHECK(std::stod(cell) == payload[idx]);
            ++idx;
        }
    }
    CHECK(idx == payload.size());
}

TEST_CASE("anchors-fit keys initializer and key-matrix input") {
    TempFile keys("keys_in.csv");
    {
        std::ofstream out(keys.path);
        out << "1.0,2.0\n1.1,2.1\n5.0,6.0\n5.1,6.1\n";
    }
    TempFile bin("fitk.anchors");
    TempFile csv("fitk.csv");
    RunResult r = run("anchors-fit --m 2 --iters 6 --init keys --keys " + keys.path +
                      " --out /tmp/anchorattn_cli_fitk");
    CHECK(r.exit_code == 0);
    CHECK(file_exists("/tmp/anchorattn_cli_fitk.anchors"));
}

TEST_CASE("config file values apply beneath CLI flags") {
    TempFile cfg("config.txt");
    {
        std::ofstream out(cfg.path);
        out << "# comment line\n";
        out << "seed=5\n";
        out << "instances=24\n";
    }
    RunResult from_config = run("verify --config " + cfg.path);
    RunResult from_flags = run("verify --seed 5 --instances 24");
    CHECK(from_config.exit_code == 0);
    CHECK(from_config.output == from_flags.output);

    // a CLI flag beats the config file
    RunResult overridden = run("verify --config " + cfg.path + " --seed 9");
    RunResult direct = run("verify --seed 9 --instances 24");
    CHECK(overridden.output == direct.output);
    CHECK(overridden.output != from_config.output);
}

TEST_CASE("malformed config lines are data errors") {
    TempFile cfg("bad_config.txt");
    {
        std::ofstream out(cfg.path);
        out << "seed 5\n";
    }
    RunResult r = run("verify --config " + cfg.path);
    CHECK(r.exit_code == 4);
    CHECK(r.output.find("malformed") != std::string::npos);
}

TEST_CASE("ANCHORATTN_THREADS does not change the verify report") {
    RunResult base = run("verify --instances 32 --seed 13");
    const std::string cmd = "ANCHORATTN_THREADS=4 " + cli_path() +
                            " verify --instances 32 --seed 13 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string output;
    std::array<char, 4096> buf;
    while (std::size_t got = std::fread(buf.data(), 1, buf.size(), pipe)) {
        output.append(buf.data(), got);
    }
    const int status = pclose(pipe);
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(output == base.output);
}
