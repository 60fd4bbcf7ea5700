#include "bem/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "bem/checkpoint.hpp"
#include "bem/config.hpp"
#include "bem/error.hpp"
#include "bem/inference.hpp"
#include "bem/metrics.hpp"
#include "bem/ops.hpp"
#include "bem/ppm.hpp"
#include "bem/synthdata.hpp"
#include "bem/train.hpp"

namespace bem {

namespace {

namespace fs = std::filesystem;

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

void ensure_dir(const fs::path& dir) {
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& path) {
    ensure_dir(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    return f;
}

struct Options {
    std::string config;
    int stage = 1;
    std::optional<std::string> mode;
    std::optional<std::size_t> k;
    std::optional<std::size_t> threads;
    std::string in, out, dump, pred, ref, csv;
    std::size_t size = 256;
};

AppConfig load(const Options& o) { return o.config.empty() ? parse_config("") : load_config(o.config); }

int cmd_synth(const AppConfig& cfg, std::ostream& out) {
    const auto manifest = cfg.manifest_path();
    const auto samples = gen_one_to_many(cfg.seed, cfg.synth);
    const auto written = write_dataset(manifest.parent_path().empty() ? fs::path(".") : manifest.parent_path(), samples);
    if (written.filename() != manifest.filename()) fs::rename(written, manifest);
    out << manifest.string() << '\n';
    return kExitOk;
}

int cmd_train(const AppConfig& cfg, int stage, std::ostream& out) {
    if (stage != 1 && stage != 2) throw ConfigError("--stage must be 1 or 2");
    const Dataset data = load_dataset(cfg.manifest_path());
    if (data.empty()) throw ConfigError("dataset " + cfg.manifest_path().string() + " is empty");
    ensure_dir(cfg.out_dir);
    const fs::path log_path = cfg.out_dir / ("train_stage" + std::to_string(stage) + ".csv");
    auto log = open_out(log_path);
    log << "step,data_term,kl_term,total,lr\n";
    TrainHooks hooks;
    hooks.on_step = [&log](const StepRecord& r) {
        log << r.step << ',' << fmt(r.data_term) << ',' << fmt(r.kl_term) << ',' << fmt(r.total) << ',' << fmt(r.lr)
            << '\n';
    };
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    if (stage == 1) {
        const auto kind = cfg.stage1_bayesian ? ModelKind::Bayesian : ModelKind::Deterministic;
        Model f = Model::build(cfg.stage1, kind, cfg.seed, tc.precision);
        AdaptivePrior prior;
        if (f.bayesian()) {
            prior = tc.prior == PriorKind::Adaptive ? AdaptivePrior::from_posterior(f.posterior(), tc.ema_beta)
                                                     : AdaptivePrior::standard_normal(f.posterior());
        }
        train_stage1(data, f, prior, tc, cfg.pipeline, hooks);
        save_checkpoint(cfg.stage1_path(), 1, f, f.bayesian() ? &prior : nullptr);
        out << cfg.stage1_path().string() << '\n';
    } else {
        Model g = Model::build(cfg.stage2, ModelKind::Deterministic, cfg.seed, tc.precision);
        train_stage2(data, g, tc, cfg.pipeline, hooks);
        save_checkpoint(cfg.stage2_path(), 2, g);
        out << cfg.stage2_path().string() << '\n';
    }
    log.flush();
    if (!log) throw IoError("write failed for " + log_path.string());
    return kExitOk;
}

InferenceConfig infer_config(const AppConfig& cfg, const Options& o) {
    InferenceConfig ic = cfg.infer;
    ic.seed = cfg.seed;
    if (o.mode) ic.mode = parse_mode(*o.mode);
    if (o.k) ic.k = *o.k;
    if (o.threads) ic.threads = *o.threads;
    if (ic.mode == InferenceMode::Rank && ic.iqa_id.empty()) ic.iqa_id = "stat";
    ic.validate();
    return ic;
}

int cmd_infer(const AppConfig& cfg, const Options& o, std::ostream& out) {
    if (o.in.empty() || o.out.empty()) throw ConfigError("infer needs --in and --out");
    const InferenceConfig ic = infer_config(cfg, o);
    const Checkpoint c1 = load_checkpoint(cfg.stage1_path(), 1);
    const Checkpoint c2 = load_checkpoint(cfg.stage2_path(), 2);
    const Tensor x = read_ppm(o.in);
    const EnhanceResult res = enhance(x, c1.model, c2.model, cfg.pipeline, ic);
    ensure_dir(fs::path(o.out).parent_path());
    write_ppm(o.out, res.y);
    if (!o.dump.empty()) {
        ensure_dir(o.dump);
        CandidateSet cs = res.candidates;
        const auto metric = make_iqa(ic.iqa_id.empty() ? "stat" : ic.iqa_id);
        const std::size_t best = rank_select(x, cs, cfg.pipeline, *metric);
        const Tensor coarse = coarse_input(x, cfg.pipeline);
        auto csv = open_out(fs::path(o.dump) / "scores.csv");
        csv << "k,score,selected\n";
        for (std::size_t k = 0; k < cs.size(); ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "candidate_%03zu.ppm", k);
            write_ppm(fs::path(o.dump) / name, compose_illumination(coarse, cs.z[k], cfg.pipeline.alpha));
            const bool selected = res.selected ? *res.selected == k : (ic.mode == InferenceMode::Rank && best == k);
            csv << k << ',' << fmt(cs.scores[k]) << ',' << (selected ? 1 : 0) << '\n';
        }
    }
    out << o.out << '\n';
    return kExitOk;
}

int cmd_eval(const AppConfig& cfg, const Options& o, std::ostream& out, std::ostream& err) {
    if (o.pred.empty() || o.ref.empty()) throw ConfigError("eval needs --pred and --ref");
    const fs::path ref_manifest = o.ref;
    const auto entries = read_manifest(ref_manifest);
    if (entries.empty()) throw ConfigError("reference manifest " + ref_manifest.string() + " is empty");
    std::vector<std::string> missing;
    for (const auto& e : entries) {
        const fs::path p = fs::path(o.pred) / (e.scene_id + ".ppm");
        if (!fs::exists(p)) missing.push_back(p.string());
    }
    if (!missing.empty()) {
        for (const auto& m : missing) err << "missing prediction: " << m << '\n';
        throw IoError(std::to_string(missing.size()) + " prediction file(s) missing");
    }
    const fs::path csv_path = o.csv.empty() ? cfg.out_dir / "metrics.csv" : fs::path(o.csv);
    auto csv = open_out(csv_path);
    csv << "scene_id,target,psnr,ssim\n";
    double sum_psnr = 0.0, sum_ssim = 0.0;
    const fs::path root = ref_manifest.parent_path();
    for (const auto& e : entries) {
        const Tensor pred = read_ppm(fs::path(o.pred) / (e.scene_id + ".ppm"));
        double best_psnr = -std::numeric_limits<double>::infinity(), best_ssim = -1.0;
        for (const auto& t : e.target_paths) {
            const Tensor ref = read_ppm(root / t);
            const double p = psnr(pred, ref);
            const double s = ssim(pred, ref);
            best_psnr = std::max(best_psnr, p);
            best_ssim = std::max(best_ssim, s);
            csv << e.scene_id << ',' << fs::path(t).stem().string() << ',' << fmt(p) << ',' << fmt(s) << '\n';
        }
        csv << e.scene_id << ",best," << fmt(best_psnr) << ',' << fmt(best_ssim) << '\n';
        sum_psnr += best_psnr;
        sum_ssim += best_ssim;
    }
    const double n = static_cast<double>(entries.size());
    csv << "mean,best," << fmt(sum_psnr / n) << ',' << fmt(sum_ssim / n) << '\n';
    out << "psnr " << fmt(sum_psnr / n) << "  ssim " << fmt(sum_ssim / n) << "  (" << csv_path.string() << ")\n";
    return kExitOk;
}

template <typename F>
double seconds(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int cmd_bench(const AppConfig& cfg, const Options& o, std::ostream& out) {
    InferenceConfig ic = infer_config(cfg, o);
    const std::size_t n = o.size;
    const Model f = Model::build(cfg.stage1, ModelKind::Bayesian, cfg.seed);
    const Model g = Model::build(cfg.stage2, ModelKind::Deterministic, cfg.seed);
    EpsilonSource img_eps(cfg.seed, "bench");
    Tensor x({cfg.channels, n, n});
    for (auto& v : x.data()) v = std::clamp(0.3 + 0.1 * img_eps.next(), 0.0, 1.0);
    x.publish("bench");
    f.validate_input(coarse_input(x, cfg.pipeline));
    f.validate_input(x);
    g.validate_input(concat_channels(x, x));

    struct Row {
        std::string method;
        double secs;
        std::uint64_t stage1_calls, stage2_calls;
    };
    std::vector<Row> rows;

    f.reset_counter();
    g.reset_counter();
    const double two_stage = seconds([&] { (void)enhance(x, f, g, cfg.pipeline, ic); });
    rows.push_back({"two_stage", two_stage, f.counter().calls(), g.counter().calls()});

    // K full-resolution posterior passes, each carried through Stage II.
    f.reset_counter();
    g.reset_counter();
    const double naive = seconds([&] {
        Tensor acc;
        for (std::size_t k = 0; k < ic.k; ++k) {
            EpsilonSource eps(ic.seed, candidate_stream(k));
            const Tensor y = stage2_forward(x, f.forward(x, &eps), g);
            if (acc.empty()) {
                acc = y;
            } else {
                for (std::size_t i = 0; i < acc.numel(); ++i) acc[i] += y[i];
            }
        }
    });
    rows.push_back({"naive_full_bnn", naive, f.counter().calls(), g.counter().calls()});

    f.reset_counter();
    g.reset_counter();
    const double single = seconds([&] { (void)stage2_forward(x, x, g); });
    rows.push_back({"single_deterministic", single, f.counter().calls(), g.counter().calls()});

    const fs::path csv_path = o.csv.empty() ? cfg.out_dir / "bench.csv" : fs::path(o.csv);
    auto csv = open_out(csv_path);
    csv << "method,k,size,seconds,stage1_forwards,stage2_forwards\n";
    for (const auto& r : rows) {
        csv << r.method << ',' << ic.k << ',' << n << ',' << fmt(r.secs) << ',' << r.stage1_calls << ','
            << r.stage2_calls << '\n';
        out << std::left << std::setw(22) << r.method << fmt(r.secs) << " s\n";
    }
    out << "naive / two-stage: " << fmt(naive / two_stage) << '\n';
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bayesian two-stage low-light enhancement"};
    app.name("bem");
    app.require_subcommand(1);
    Options o;
    app.add_option("-c,--config", o.config, "key=value config file");

    auto* synth = app.add_subcommand("synth", "generate a synthetic one-to-many dataset");
    auto* train = app.add_subcommand("train", "train one stage and write its checkpoint");
    train->add_option("--stage", o.stage, "1 or 2")->required();
    auto* infer = app.add_subcommand("infer", "enhance one image");
    infer->add_option("--mode", o.mode, "mc or rank");
    infer->add_option("--k", o.k, "number of candidates");
    infer->add_option("--in", o.in, "input PPM")->required();
    infer->add_option("--out", o.out, "output PPM")->required();
    infer->add_option("--dump-candidates", o.dump, "directory for candidate composites and scores.csv");
    infer->add_option("--threads", o.threads, "sampling threads");
    auto* eval = app.add_subcommand("eval", "full-reference metrics against a manifest");
    eval->add_option("--pred", o.pred, "directory of <scene_id>.ppm predictions")->required();
    eval->add_option("--ref", o.ref, "reference manifest")->required();
    eval->add_option("--csv", o.csv, "metrics CSV path");
    auto* bench = app.add_subcommand("bench", "time two-stage vs naive full-resolution sampling");
    bench->add_option("--k", o.k, "number of candidates");
    bench->add_option("--size", o.size, "image side length");
    bench->add_option("--threads", o.threads, "sampling threads");
    bench->add_option("--csv", o.csv, "report CSV path");

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        const AppConfig cfg = load(o);
        if (synth->parsed()) return cmd_synth(cfg, out);
        if (train->parsed()) return cmd_train(cfg, o.stage, out);
        if (infer->parsed()) return cmd_infer(cfg, o, out);
        if (eval->parsed()) return cmd_eval(cfg, o, out, err);
        if (bench->parsed()) return cmd_bench(cfg, o, out);
        return kExitConfig;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DivergenceError& e) {
        err << "diverged at step " << e.step() << ": " << e.what() << '\n';
        return kExitDivergence;
    } catch (const CheckpointError& e) {
        err << "checkpoint error: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const IoError& e) {
        err << "I/O error: " << e.what() << '\n';
        return kExitIo;
    } catch (const ParseError& e) {
        err << "parse error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace bem
