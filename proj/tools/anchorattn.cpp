// anchorattn: verification, gradient checks, benchmarks, and a desk-scale
// training demo for anchor attention.
//
// Exit codes: 0 success, 1 property/gradient/numeric failure, 2 usage error,
// 3 capacity error, 4 data error.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "anchorattn/anchor.hpp"
#include "anchorattn/autograd.hpp"
#include "anchorattn/bench.hpp"
#include "anchorattn/idx.hpp"
#include "anchorattn/synthetic.hpp"
#include "anchorattn/train.hpp"
#include "anchorattn/verify.hpp"

namespace aa = anchorattn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitCapacity = 3;
constexpr int kExitData = 4;

// Flat key=value config file; CLI flags override it, it overrides built-in
// defaults.  Keys are the long option names without the leading dashes.
std::map<std::string, std::string> load_config(int argc, char** argv) {
    std::string path;
    for (int i = 1; i + 1 < argc; ++i) {
        if (std::string(argv[i]) == "--config") path = argv[i + 1];
    }
    std::map<std::string, std::string> cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw aa::ParseError("config file " + path + ": cannot open");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw aa::ParseError("config file " + path + ": malformed line '" + line + "'");
        }
        cfg[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return cfg;
}

struct ConfigView {
    const std::map<std::string, std::string>& map;

    template <class T>
    T get(const std::string& key, T fallback) const {
        const auto it = map.find(key);
        if (it == map.end()) return fallback;
        std::istringstream is(it->second);
        T value;
        is >> value;
        if (is.fail()) {
            throw aa::ParseError("config key '" + key + "' has invalid value '" +
                                 it->second + "'");
        }
        return value;
    }

    std::string get(const std::string& key, const char* fallback) const {
        const auto it = map.find(key);
        return it == map.end() ? fallback : it->second;
    }
};

std::size_t env_thread_cap() {
    const char* env = std::getenv("ANCHORATTN_THREADS");
    if (!env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::istringstream is(csv);
    std::string token;
    while (std::getline(is, token, ',')) {
        if (token.empty()) continue;
        out.push_back(static_cast<std::size_t>(std::stoull(token)));
    }
    return out;
}

void write_anchor_files(const std::string& prefix, const aa::Matrix& anchors) {
    // binary: "ANCR" magic, u32le m, u32le d, row-major f64le payload
    std::ofstream bin(prefix + ".anchors", std::ios::binary);
    if (!bin) throw aa::ParseError(prefix + ".anchors: cannot open for writing");
    bin.write("ANCR", 4);
    const std::uint32_t m = static_cast<std::uint32_t>(anchors.rows());
    const std::uint32_t d = static_cast<std::uint32_t>(anchors.cols());
    bin.write(reinterpret_cast<const char*>(&m), 4);
    bin.write(reinterpret_cast<const char*>(&d), 4);
    bin.write(reinterpret_cast<const char*>(anchors.data()),
              static_cast<std::streamsize>(anchors.size() * sizeof(double)));

    std::ofstream csv(prefix + ".csv");
    for (std::size_t i = 0; i < anchors.rows(); ++i) {
        for (std::size_t j = 0; j < anchors.cols(); ++j) {
            csv << (j ? "," : "") << aa::bench::format_checksum(anchors(i, j));
        }
        csv << "\n";
    }
}

aa::Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw aa::ParseError(path + ": cannot open");
    std::vector<double> data;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(is, cell, ',')) {
            data.push_back(std::stod(cell));
            ++c;
        }
        if (rows == 0) {
            cols = c;
        } else if (c != cols) {
            throw aa::ParseError(path + ": ragged row " + std::to_string(rows));
        }
        ++rows;
    }
    return aa::Matrix(rows, cols, std::move(data));
}

int cmd_verify(std::size_t instances, std::uint64_t seed, bool poison) {
    aa::verify::VerifyConfig cfg;
    cfg.instances = instances;
    cfg.seed = seed;
    cfg.threads = env_thread_cap();
    cfg.poison_delta = poison;
    const aa::verify::VerifyReport report = aa::verify::run_verification(cfg);

    for (const auto& p : report.properties) {
        std::printf("%-4s %-26s max_err=%.3e tol=%.0e instances=%zu\n",
                    p.passed ? "PASS" : "FAIL", p.name.c_str(), p.max_error, p.tolerance,
                    p.instances);
        if (!p.passed) {
            std::printf("     replay: %s\n", p.failure_detail.c_str());
        }
    }
    if (poison) {
        std::printf("%s poison-delta hook: %s\n",
                    report.poison_triggered ? "FAIL" : "????", report.poison_message.c_str());
        return kExitFailure;  // forced-failure mode always exits nonzero
    }
    return report.all_passed() ? kExitOk : kExitFailure;
}

int cmd_gradcheck(std::size_t n, std::size_t m, std::size_t d, std::size_t big_d,
                  std::size_t heads, double step, double tol, std::uint64_t seed,
                  bool zero_init) {
    if (step < 1e-7 || step > 1e-3) {
        std::fprintf(stderr,
                     "warning: step %g is outside the recommended band [1e-7, 1e-3]\n",
                     step);
    }
    aa::Rng rng(seed);
    aa::Matrix x = aa::random_matrix(rng, n, big_d);
    aa::MultiHeadParams params{{}, zero_init ? aa::Matrix(heads * d, d)
                                             : aa::random_matrix(rng, heads * d, d)};
    for (std::size_t h = 0; h < heads; ++h) {
        auto mk = [&](std::size_t r, std::size_t c) {
            return zero_init ? aa::Matrix(r, c) : aa::random_matrix(rng, r, c);
        };
        params.heads.push_back(aa::HeadParams{
            aa::ProjectionWeights(mk(big_d, d), mk(big_d, d), mk(big_d, d)),
            aa::AnchorParams(mk(m, d))});
    }

    aa::MultiHeadState cache;
    aa::Matrix out = aa::multi_head_attention(x, params, &cache);
    // a weighted readout; an unweighted sum has zero gradient to the anchors
    // because S_t is symmetric and row-stochastic
    aa::Matrix weights = aa::random_matrix(rng, out.rows(), out.cols());
    aa::MultiHeadGrads grads = aa::backward_multi_head(x, params, cache, weights);

    auto loss = [&] {
        const aa::Matrix y = aa::multi_head_attention(x, params);
        double s = 0.0;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            for (std::size_t j = 0; j < y.cols(); ++j) s += weights(i, j) * y(i, j);
        }
        return s;
    };
    std::vector<aa::FDParam> fd_params = {{"X", &x, &grads.d_X},
                                          {"W_out", &params.W_out, &grads.d_Wout}};
    for (std::size_t h = 0; h < heads; ++h) {
        const std::string tag = "head" + std::to_string(h);
        fd_params.push_back({tag + ".W_K", &params.heads[h].proj.W_K, &grads.d_WK[h]});
        fd_params.push_back({tag + ".W_V", &params.heads[h].proj.W_V, &grads.d_WV[h]});
        fd_params.push_back({tag + ".W_S", &params.heads[h].anchors.W_S, &grads.d_WS[h]});
    }

    bool all_ok = true;
    std::printf("%-12s %-10s %-8s %s\n", "param", "rel_err", "elems", "status");
    for (const auto& rep : aa::finite_difference_check(fd_params, loss, step)) {
        const bool ok = rep.max_rel_err <= tol;
        all_ok = all_ok && ok;
        std::printf("%-12s %-10.3e %-8zu %s\n", rep.param.c_str(), rep.max_rel_err,
                    rep.elements, ok ? "PASS" : "FAIL");
    }
    return all_ok ? kExitOk : kExitFailure;
}

int cmd_bench(const std::string& mechanisms_csv, const std::string& n_csv, std::size_t m,
              std::size_t d, std::size_t reps, std::size_t warmup, std::uint64_t seed,
              const std::string& out_prefix, bool dry_run, bool f32) {
    aa::bench::SweepConfig cfg;
    {
        std::istringstream is(mechanisms_csv);
        std::string token;
        while (std::getline(is, token, ',')) {
            if (!token.empty()) cfg.mechanisms.push_back(aa::bench::mechanism_from_string(token));
        }
    }
    cfg.n_values = parse_size_list(n_csv);
    cfg.m = m;
    cfg.d = d;
    cfg.reps = reps;
    cfg.warmup = warmup;
    cfg.seed = seed;
    cfg.use_f32 = f32;

    if (dry_run) {
        for (aa::bench::Mechanism mech : cfg.mechanisms) {
            for (std::size_t n : cfg.n_values) {
                std::printf("cell: mechanism=%s n=%zu m=%zu d=%zu reps=%zu\n",
                            aa::bench::to_string(mech), n, m, d, reps);
            }
        }
        return kExitOk;
    }

    const auto records = aa::bench::run_sweep(cfg, &std::cerr);
    {
        std::ofstream csv(out_prefix + ".csv");
        aa::bench::write_csv(csv, records);
        std::ofstream jsonl(out_prefix + ".jsonl");
        aa::bench::write_jsonl(jsonl, records);
    }
    std::printf("wrote %s.csv and %s.jsonl (%zu records)\n", out_prefix.c_str(),
                out_prefix.c_str(), records.size());

    bool enough = true;
    for (aa::bench::Mechanism mech : cfg.mechanisms) {
        std::size_t distinct = 0;
        std::size_t last = 0;
        for (const auto& r : records) {
            if (r.mechanism == mech && r.n != last) {
                ++distinct;
                last = r.n;
            }
        }
        enough = enough && distinct >= 4;
    }
    if (enough) {
        for (const auto& fit : aa::bench::fit_scaling(records)) {
            std::printf("scaling %-15s slope=%.3f r2=%.4f n=[%zu, %zu]%s\n",
                        aa::bench::to_string(fit.mechanism), fit.slope, fit.r2, fit.n_min,
                        fit.n_max, fit.r2 >= 0.9 ? "" : " (inconclusive fit)");
        }
    } else {
        std::printf("scaling fit skipped: need >= 4 distinct n values per mechanism\n");
    }
    return kExitOk;
}

int cmd_demo_train(std::size_t epochs, double lr, std::uint64_t seed, std::size_t samples,
                   std::size_t classes, std::size_t tokens, std::size_t dim, std::size_t m,
                   std::size_t heads, const std::string& images, const std::string& labels,
                   std::size_t patch) {
    std::vector<aa::Sample> data;
    std::size_t input_dim = dim;
    if (!images.empty()) {
        const aa::idx::ImageSet set = aa::idx::read_images(images);
        const std::vector<std::uint8_t> lbl = aa::idx::read_labels(labels);
        if (lbl.size() != set.count) {
            throw aa::ParseError("image count " + std::to_string(set.count) +
                                 " does not match label count " + std::to_string(lbl.size()));
        }
        std::size_t max_label = 0;
        for (std::size_t i = 0; i < set.count; ++i) {
            data.push_back(aa::Sample{aa::idx::patchify(set, i, patch), lbl[i]});
            max_label = std::max<std::size_t>(max_label, lbl[i]);
        }
        classes = max_label + 1;
        input_dim = patch * patch;
    } else {
        aa::SyntheticSpec spec;
        spec.classes = classes;
        spec.samples = samples;
        spec.tokens = tokens;
        spec.dim = dim;
        spec.seed = seed;
        data = aa::generate_synthetic(spec);
    }

    aa::ModelConfig mc;
    mc.input_dim = input_dim;
    mc.classes = classes;
    mc.anchors = m;
    mc.heads = heads;
    mc.seed = seed;
    aa::DemoModel model = aa::DemoModel::init(mc);

    try {
        const aa::TrainResult result = aa::train(model, data, epochs, lr, seed + 1);
        for (const auto& log : result.log) {
            std::printf("epoch %zu mean_loss=%.6f\n", log.epoch, log.mean_loss);
        }
        std::printf("train_accuracy=%.4f holdout_accuracy=%.4f\n", result.train_accuracy,
                    result.holdout_accuracy);
    } catch (const aa::NumericError& e) {
        std::fprintf(stderr, "training diverged: %s; try a smaller --lr\n", e.what());
        return kExitFailure;
    }
    return kExitOk;
}

int cmd_anchors_fit(std::size_t m, std::size_t iters, const std::string& init,
                    std::uint64_t seed, const std::string& keys_csv,
                    std::size_t synth_n, std::size_t synth_d, std::size_t clusters,
                    const std::string& out_prefix) {
    aa::Matrix keys(1, 1);
    if (!keys_csv.empty()) {
        keys = read_matrix_csv(keys_csv);
    } else {
        // clustered synthetic keys
        aa::Rng rng(seed);
        std::vector<aa::Matrix> centers;
        for (std::size_t c = 0; c < clusters; ++c) {
            centers.push_back(aa::gaussian_matrix(rng, 1, synth_d, 4.0));
        }
        keys = aa::Matrix(synth_n, synth_d);
        for (std::size_t i = 0; i < synth_n; ++i) {
            const aa::Matrix& center = centers[i % clusters];
            for (std::size_t j = 0; j < synth_d; ++j) {
                keys(i, j) = center(0, j) + 0.3 * rng.normal();
            }
        }
    }

    aa::Rng rng(seed + 1);
    aa::Matrix start =
        init == "keys"
            ? aa::anchors_from_keys(rng, keys, m, 0)
            : aa::gaussian_matrix(rng, m, keys.cols(),
                                  1.0 / std::sqrt(static_cast<double>(keys.cols())));
    const aa::FixedPointTrace trace = aa::run_fixed_point(keys, std::move(start), iters);
    for (std::size_t i = 0; i < trace.objective.size(); ++i) {
        std::printf("iteration %zu objective=%.12f\n", i, trace.objective[i]);
    }
    write_anchor_files(out_prefix, trace.anchors);
    std::printf("wrote %s.anchors and %s.csv\n", out_prefix.c_str(), out_prefix.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"anchor attention verification, benchmarking, and training harness"};
    app.require_subcommand(1);

    try {
        const auto config_map = load_config(argc, argv);
        const ConfigView cfg{config_map};
        std::string config_path;
        app.add_option("--config", config_path, "flat key=value config file");

        // verify
        auto* verify = app.add_subcommand("verify", "run the randomized invariant suite");
        verify->fallthrough();
        std::size_t v_instances = cfg.get("instances", std::size_t(1000));
        std::uint64_t v_seed = cfg.get("seed", std::uint64_t(1));
        bool v_poison = false;
        verify->add_option("--instances", v_instances, "randomized instances");
        verify->add_option("--seed", v_seed, "RNG seed");
        verify->add_flag("--poison-delta", v_poison, "fault-injection hook: corrupt one mass entry");

        // gradcheck
        auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
        gradcheck->fallthrough();
        std::size_t g_n = cfg.get("n", std::size_t(8));
        std::size_t g_m = cfg.get("m", std::size_t(4));
        std::size_t g_d = cfg.get("d", std::size_t(4));
        std::size_t g_D = cfg.get("input-dim", std::size_t(6));
        std::size_t g_heads = cfg.get("heads", std::size_t(2));
        double g_step = cfg.get("step", 1e-5);
        double g_tol = cfg.get("tol", 1e-5);
        std::uint64_t g_seed = cfg.get("seed", std::uint64_t(1));
        bool g_zero = false;
        gradcheck->add_option("--n", g_n, "token count");
        gradcheck->add_option("--m", g_m, "anchor count");
        gradcheck->add_option("--d", g_d, "head dimension");
        gradcheck->add_option("--input-dim", g_D, "token input dimension");
        gradcheck->add_option("--heads", g_heads, "head count");
        gradcheck->add_option("--step", g_step, "finite-difference step");
        gradcheck->add_option("--tol", g_tol, "max relative error");
        gradcheck->add_option("--seed", g_seed, "RNG seed");
        gradcheck->add_flag("--zero-init", g_zero, "zero-initialize all parameters");

        // bench
        auto* bench = app.add_subcommand("bench", "timed sweep with FLOP accounting");
        bench->fallthrough();
        std::string b_mech = cfg.get("mechanisms", "vanilla,anchor-fast");
        std::string b_n = cfg.get("n-values", "512,1024,2048,4096,8192");
        std::size_t b_m = cfg.get("m", std::size_t(30));
        std::size_t b_d = cfg.get("d", std::size_t(64));
        std::size_t b_reps = cfg.get("reps", std::size_t(3));
        std::size_t b_warmup = cfg.get("warmup", std::size_t(1));
        std::uint64_t b_seed = cfg.get("seed", std::uint64_t(1));
        std::string b_out = cfg.get("out", "bench");
        bool b_dry = false, b_f32 = false;
        bench->add_option("--mechanisms", b_mech, "comma list: vanilla,anchor-fast,anchor-explicit");
        bench->add_option("--n-values", b_n, "comma list of token counts");
        bench->add_option("--m", b_m, "anchor count");
        bench->add_option("--d", b_d, "dimension");
        bench->add_option("--reps", b_reps, "timed reps per cell");
        bench->add_option("--warmup", b_warmup, "warmup reps per cell");
        bench->add_option("--seed", b_seed, "RNG seed");
        bench->add_option("--out", b_out, "output path prefix");
        bench->add_flag("--dry-run", b_dry, "print the cell grid, write nothing");
        bench->add_flag("--f32", b_f32, "32-bit throughput mode (timings only)");

        // demo-train
        auto* demo = app.add_subcommand("demo-train", "train the desk-scale classifier");
        demo->fallthrough();
        std::size_t t_epochs = cfg.get("epochs", std::size_t(30));
        double t_lr = cfg.get("lr", 0.05);
        std::uint64_t t_seed = cfg.get("seed", std::uint64_t(1));
        std::size_t t_samples = cfg.get("samples", std::size_t(2000));
        std::size_t t_classes = cfg.get("classes", std::size_t(3));
        std::size_t t_tokens = cfg.get("tokens", std::size_t(16));
        std::size_t t_dim = cfg.get("dim", std::size_t(6));
        std::size_t t_m = cfg.get("m", std::size_t(30));
        std::size_t t_heads = cfg.get("heads", std::size_t(2));
        std::string t_images = cfg.get("images", "");
        std::string t_labels = cfg.get("labels", "");
        std::size_t t_patch = cfg.get("patch", std::size_t(7));
        demo->add_option("--epochs", t_epochs, "training epochs");
        demo->add_option("--lr", t_lr, "SGD learning rate");
        demo->add_option("--seed", t_seed, "RNG seed");
        demo->add_option("--samples", t_samples, "synthetic sample count");
        demo->add_option("--classes", t_classes, "synthetic class count");
        demo->add_option("--tokens", t_tokens, "tokens per sample");
        demo->add_option("--dim", t_dim, "token dimension");
        demo->add_option("--m", t_m, "anchor count");
        demo->add_option("--heads", t_heads, "head count");
        demo->add_option("--images", t_images, "IDX image file (optional)");
        demo->add_option("--labels", t_labels, "IDX label file");
        demo->add_option("--patch", t_patch, "patch size for IDX images");

        // anchors-fit
        auto* fit = app.add_subcommand("anchors-fit", "fixed-point anchor fitting");
        fit->fallthrough();
        std::size_t f_m = cfg.get("m", std::size_t(30));
        std::size_t f_iters = cfg.get("iters", std::size_t(20));
        std::string f_init = cfg.get("init", "gaussian");
        std::uint64_t f_seed = cfg.get("seed", std::uint64_t(1));
        std::string f_keys = cfg.get("keys", "");
        std::size_t f_n = cfg.get("n", std::size_t(300));
        std::size_t f_d = cfg.get("d", std::size_t(8));
        std::size_t f_clusters = cfg.get("clusters", std::size_t(3));
        std::string f_out = cfg.get("out", "anchors");
        fit->add_option("--m", f_m, "anchor count");
        fit->add_option("--iters", f_iters, "fixed-point iterations");
        fit->add_option("--init", f_init, "initializer: gaussian or keys")
            ->check(CLI::IsMember({"gaussian", "keys"}));
        fit->add_option("--seed", f_seed, "RNG seed");
        fit->add_option("--keys", f_keys, "CSV file holding the key matrix");
        fit->add_option("--n", f_n, "synthetic key count");
        fit->add_option("--d", f_d, "synthetic key dimension");
        fit->add_option("--clusters", f_clusters, "synthetic cluster count");
        fit->add_option("--out", f_out, "output path prefix");

        try {
            app.parse(argc, argv);
        } catch (const CLI::ParseError& e) {
            const int rc = app.exit(e);
            return rc == 0 ? kExitOk : kExitUsage;
        }

        if (verify->parsed()) return cmd_verify(v_instances, v_seed, v_poison);
        if (gradcheck->parsed()) {
            return cmd_gradcheck(g_n, g_m, g_d, g_D, g_heads, g_step, g_tol, g_seed, g_zero);
        }
        if (bench->parsed()) {
            return cmd_bench(b_mech, b_n, b_m, b_d, b_reps, b_warmup, b_seed, b_out, b_dry,
                             b_f32);
        }
        if (demo->parsed()) {
            return cmd_demo_train(t_epochs, t_lr, t_seed, t_samples, t_classes, t_tokens,
                                  t_dim, t_m, t_heads, t_images, t_labels, t_patch);
        }
        if (fit->parsed()) {
            return cmd_anchors_fit(f_m, f_iters, f_init, f_seed, f_keys, f_n, f_d,
                                   f_clusters, f_out);
        }
        return kExitUsage;
    } catch (const aa::CapacityError& e) {
        std::fprintf(stderr, "capacity error: %s\n", e.what());
        return kExitCapacity;
    } catch (const aa::ParseError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return kExitData;
    } catch (const aa::SingularMassError& e) {
        std::fprintf(stderr, "singular-mass error: %s\n", e.what());
        return kExitFailure;
    } catch (const aa::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitFailure;
    } catch (const aa::DimensionError& e) {
        std::fprintf(stderr, "dimension error: %s\n", e.what());
        return kExitUsage;
    } catch (const aa::ArgumentError& e) {
        std::fprintf(stderr, "argument error: %s\n", e.what());
        return kExitUsage;
    }
}
