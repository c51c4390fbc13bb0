// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks, one PASS/FAIL line each. With no arguments every criterion
// runs; otherwise only the listed numbers. Exit status is the number of failures.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oracles.hpp"
#include "vgloss/vgloss.hpp"

#ifndef VGLOSS_CLI
#error "VGLOSS_CLI must name the command-line binary"
#endif
#ifndef VGLOSS_FIXTURES
#error "VGLOSS_FIXTURES must name the fixture directory"
#endif

namespace fs = std::filesystem;
using namespace vgloss;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path scratch_dir() {
    const auto d = fs::temp_directory_path() / fmt("vgloss_acceptance_%d", static_cast<int>(::getpid()));
    fs::create_directories(d);
    return d;
}

int run(const std::string& args) {
    const std::string cmd = std::string(VGLOSS_CLI) + " " + args;
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome geometry_oracle() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 gen(2024);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0;
    for (int i = 0; i < 1000; ++i) {
        auto box = [&] {
            const double a = u(gen), b = u(gen), c = u(gen), d = u(gen);
            return CornerBoxd{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
        };
        const auto p = box(), q = box();
        const double r = oracle::raster_iou({p.x1, p.y1, p.x2, p.y2}, {q.x1, q.y1, q.x2, q.y2});
        worst = std::max(worst, std::abs(iou(p, q) - r));
    }
    const double exact = std::abs(iou(CornerBoxd{0, 0, 2, 2}, CornerBoxd{1, 1, 3, 3}) - 1.0 / 7.0);
    const double secs = seconds_since(t0);
    return {worst <= 3e-3 && exact <= 1e-9 && secs < 10.0,
            fmt("max |iou - raster| %.2e over 1000 pairs, 1/7 case error %.1e, %.2fs", worst, exact, secs)};
}

Outcome gradient_suites() {
    const auto t0 = std::chrono::steady_clock::now();
    GradcheckOptions o;
    o.trials = 100;
    bool ok = true;
    double worst = 0;
    std::string failed;
    std::size_t suites = 0;
    for (const auto& s : run_gradcheck(o)) {
        ++suites;
        worst = std::max(worst, s.max_rel_error);
        if (!s.passed || s.trials < 100) {
            ok = false;
            failed += " " + s.name;
        }
    }
    const double secs = seconds_since(t0);
    return {ok && suites > 0 && secs < 30.0,
            fmt("%zu suites x 100 trials, worst relative error %.2e, %.2fs%s%s", suites, worst, secs,
                failed.empty() ? "" : ", failing:", failed.c_str())};
}

Outcome target_invariants() {
    std::mt19937_64 gen(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::exponential_distribution<double> e(1.0);
    std::size_t bad_rows = 0, bad_monotone = 0;
    double reduction_dev = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t k = 2 + gen() % 15;
        const std::size_t c = 2 + gen() % 7;
        std::vector<double> row(k);
        for (double& x : row)
            x = u(gen) < 0.2 ? 0.0 : u(gen);
        std::vector<ClassDistribution> probs(k, ClassDistribution(c));
        for (auto& p : probs) {
            double s = 0;
            for (double& x : p)
                s += (x = e(gen));
            for (double& x : p)
                x /= s;
        }
        std::vector<std::size_t> previous_support;
        bool first = true;
        for (double eta : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
            const auto b = build_target(row, probs, eta, 1e-8);
            bad_rows += !is_class_distribution(b.p_target_row, 1e-9);
            if (!first)
                for (std::size_t z : b.support)
                    bad_monotone += std::find(previous_support.begin(), previous_support.end(), z) ==
                                    previous_support.end();
            previous_support = b.support;
            first = false;
        }
        const auto sem = build_target_from_similarity(row, std::vector<double>(k, 1.0), 0.0, 1e-8);
        const auto plain = build_plain_target(row, 0.0, 1e-8);
        double sum = 0;
        for (double x : row)
            sum += x;
        for (std::size_t z = 0; z < k; ++z) {
            const double want = sum > 0 ? row[z] / sum : (z == best_proposal(row) ? 1.0 : 0.0);
            reduction_dev = std::max({reduction_dev, std::abs(sem.p_target_row[z] - plain.p_target_row[z]),
                                      std::abs(sem.p_target_row[z] - want)});
        }
    }
    return {bad_rows == 0 && bad_monotone == 0 && reduction_dev <= 1e-9,
            fmt("1000 instances: %zu invalid rows, %zu monotonicity violations, reduction deviation %.1e",
                bad_rows, bad_monotone, reduction_dev)};
}

Outcome hand_fixtures() {
    const fs::path dir = VGLOSS_FIXTURES;
    const auto j = nlohmann::json::parse(slurp(dir / "hand_oracles.json"));
    double worst = 0;
    auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

    const auto& st = j.at("semantic_target");
    const auto b = build_target_from_similarity(st.at("u_row").get<std::vector<double>>(),
                                                st.at("c_row").get<std::vector<double>>(), st.at("eta"),
                                                st.at("eps"));
    for (std::size_t z = 0; z < b.p_target_row.size(); ++z) {
        check(b.u_star_row[z], st.at("expected_u_star")[z]);
        check(b.p_target_row[z], st.at("expected_p_target")[z]);
        check(b.u_hat_row[z], st.at("expected_u_hat")[z]);
    }
    const bool support_ok = b.support == st.at("expected_support").get<std::vector<std::size_t>>();

    const auto& kl = j.at("kl");
    const auto pred = kl.at("pred").get<std::vector<double>>();
    const auto target = kl.at("target").get<std::vector<double>>();
    check(kl_grounding_loss(Matrix(1, pred.size(), pred), Matrix(1, target.size(), target)).value,
          kl.at("expected"));

    const auto& ci = j.at("ciou");
    const auto p = ci.at("pred_cxcywh").get<std::vector<double>>();
    const auto g = ci.at("gt_cxcywh").get<std::vector<double>>();
    const auto r = ciou_loss(CenterBoxd{p[0], p[1], p[2], p[3]}, CenterBoxd{g[0], g[1], g[2], g[3]});
    check(r.s, ci.at("expected_s"));
    check(r.d, ci.at("expected_d"));
    check(r.v, ci.at("expected_v"));
    check(r.total, ci.at("expected_total"));

    const auto& acc = j.at("accuracy");
    const auto rep = evaluate_predictions(read_examples((dir / acc.at("data").get<std::string>()).string()),
                                          read_predictions((dir / acc.at("preds").get<std::string>()).string()));
    check(rep.accuracy, acc.at("expected_accuracy"));
    const bool count_ok = rep.n_queries == acc.at("expected_n_queries").get<std::size_t>();

    return {worst <= 1e-6 && support_ok && count_ok,
            fmt("max deviation %.1e (target, KL %.6f, CIoU %.6f, accuracy %.4f)", worst,
                kl_grounding_loss(Matrix(1, 2, pred), Matrix(1, 2, target)).value, r.total, rep.accuracy)};
}

Outcome toy_training() {
    ::setenv("GROUNDING_LOSS_THREADS", "1", 1);
    const auto t0 = std::chrono::steady_clock::now();
    const auto data = gen_synthetic(SynthConfig{});
    TrainConfig cfg; // KL-Sem + CIoU-Sem, Adam lr 1e-3, decay 0.9, 9 epochs
    const auto res = train(data, cfg);
    const double secs = seconds_since(t0);
    const auto& first = res.history.front();
    const auto& last = res.history.back();
    return {res.history.size() == 9 && last.val_accuracy >= 0.70 && last.train_loss < first.train_loss &&
                secs < 300.0,
            fmt("val accuracy %.4f (point game %.4f), train loss %.4f -> %.4f, %.1fs", last.val_accuracy,
                last.val_pointgame, first.train_loss, last.train_loss, secs)};
}

Outcome ablation_harness() {
    const auto dir = scratch_dir();
    const auto data = dir / "ablate.jsonl";
    const auto csv = dir / "ablate.csv";
    if (run("gen --out " + data.string()) != 0)
        return {false, "gen failed"};
    const auto t0 = std::chrono::steady_clock::now();
    if (run("ablate --data " + data.string() + " --out " + csv.string() + " > " + (dir / "ablate.txt").string()) != 0)
        return {false, "ablate failed"};
    const double secs = seconds_since(t0);

    std::istringstream in(slurp(csv));
    std::string line;
    std::getline(in, line);
    const bool header_ok = line == "grounding,refinement,eta,lambda,val_acc,test_acc";
    std::size_t rows = 0, finite = 0;
    std::set<std::string> cells;
    while (std::getline(in, line)) {
        ++rows;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string s; std::getline(ss, s, ',');)
            f.push_back(s);
        if (f.size() != 6)
            continue;
        cells.insert(f[0] + "," + f[1] + "," + f[2] + "," + f[3]);
        const double val = std::strtod(f[4].c_str(), nullptr), test = std::strtod(f[5].c_str(), nullptr);
        finite += std::isfinite(val) && std::isfinite(test);
    }
    std::string observation = slurp(dir / "ablate.txt");
    while (!observation.empty() && observation.back() == '\n')
        observation.pop_back();
    fs::remove_all(dir);
    return {header_ok && rows == 54 && cells.size() == 54 && finite == 54,
            fmt("%zu rows, %zu distinct cells, %zu finite, %.0fs; observation (not asserted): %s", rows,
                cells.size(), finite, secs, observation.c_str())};
}

Outcome determinism() {
    const auto dir = scratch_dir();
    std::string csv[2];
    for (int i = 0; i < 2; ++i) {
        const auto data = dir / fmt("d%d.jsonl", i);
        const auto metrics = dir / fmt("m%d.csv", i);
        if (run("gen --examples 300 --out " + data.string()) != 0 ||
            run("train --epochs 3 --data " + data.string() + " --metrics-out " + metrics.string() + " 2>/dev/null") != 0)
            return {false, "gen or train failed"};
        csv[i] = slurp(metrics);
    }
    const bool data_same = slurp(dir / "d0.jsonl") == slurp(dir / "d1.jsonl");
    fs::remove_all(dir);
    return {!csv[0].empty() && csv[0] == csv[1] && data_same,
            fmt("datasets %s, metrics CSVs %s (%zu bytes)", data_same ? "identical" : "differ",
                csv[0] == csv[1] ? "byte-identical" : "differ", csv[0].size())};
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"IoU agrees with rasterization oracle", geometry_oracle},
        {"analytic gradients match finite differences", gradient_suites},
        {"target construction invariants", target_invariants},
        {"hand-computed fixtures reproduce", hand_fixtures},
        {"toy training reaches accuracy target", toy_training},
        {"ablation grid complete and finite", ablation_harness},
        {"gen + train byte-identical across runs", determinism},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i)
        selected.push_back(std::atoi(argv[i]));
    if (selected.empty())
        for (int i = 1; i <= static_cast<int>(criteria.size()); ++i)
            selected.push_back(i);

    int failures = 0;
    for (int n : selected) {
        if (n < 1 || n > static_cast<int>(criteria.size())) {
            std::printf("FAIL criterion %d: no such criterion\n", n);
            ++failures;
            continue;
        }
        const auto& [name, check] = criteria[n - 1];
        Outcome o;
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s criterion %d: %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
        std::fflush(stdout);
        failures += !o.pass;
    }
    return failures;
}
