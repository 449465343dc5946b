#pragma once

#include <CLI11.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "maekit/checkpoint.hpp"
#include "maekit/data.hpp"
#include "maekit/errors.hpp"
#include "maekit/gradcheck_suite.hpp"
#include "maekit/heads.hpp"
#include "maekit/metrics.hpp"
#include "maekit/model.hpp"
#include "maekit/pretrain.hpp"

namespace maekit {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int check_failed = 1;
inline constexpr int usage = 2;
inline constexpr int numeric = 3;
}  // namespace exit_code

/// Output root used when --out is absent: $MAEKIT_OUT/<command>, else ./maekit-runs/<command>.
inline constexpr const char* kOutEnv = "MAEKIT_OUT";

namespace cli {

// Plain-text `key = value` lines; '#' starts a comment line.
inline std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        std::string key = trim(t.substr(0, eq));
        for (auto& c : key) c = c == '_' ? '-' : c;
        out[key] = trim(t.substr(eq + 1));
    }
    return out;
}

template <class V>
V parse_value(const std::string& key, const std::string& text) {
    V v{};
    if (!CLI::detail::lexical_conversion<V, V>({text}, v)) {
        throw ConfigError("config value for '" + key + "' is not valid: " + text);
    }
    return v;
}

template <class V>
std::string format_value(const V& v) {
    if constexpr (std::is_same_v<V, std::string>) {
        return v;
    } else if constexpr (std::is_floating_point_v<V>) {
        char buf[40];
        const auto r = std::to_chars(buf, buf + sizeof buf, v);
        return std::string(buf, r.ptr);
    } else {
        return std::to_string(v);
    }
}

/// Options of one subcommand, readable from flags or a config file and
/// written back out as the resolved config.
class Options {
public:
    explicit Options(CLI::App* app) : app_(app) {
        app_->add_option("--config", config_path_, "File of 'key = value' lines; flags take precedence");
    }

    template <class V>
    CLI::Option* add(const std::string& name, V& var, const std::string& help) {
        auto* opt = app_->add_option("--" + name, var, help)->capture_default_str();
        bindings_.push_back({name, opt, [&var, name](const std::string& s) { var = parse_value<V>(name, s); },
                             [&var] { return format_value(var); }});
        return opt;
    }

    /// Apply config-file values to every option not given on the command line.
    void apply_config_file() {
        if (config_path_.empty()) return;
        const auto fields = parse_config_text(read_file_bytes(config_path_), config_path_);
        for (const auto& [key, value] : fields) {
            auto it = std::find_if(bindings_.begin(), bindings_.end(), [&](const auto& b) { return b.name == key; });
            if (it == bindings_.end()) throw ConfigError(config_path_ + ": unknown key '" + key + "'");
            if (it->option->count() == 0) it->assign(value);
        }
    }

    std::string resolved(const std::string& command) const {
        std::string out = "# maekit " + command + "\n";
        for (const auto& b : bindings_) out += b.name + " = " + b.format() + "\n";
        return out;
    }

private:
    struct Binding {
        std::string name;
        CLI::Option* option;
        std::function<void(const std::string&)> assign;
        std::function<std::string()> format;
    };
    CLI::App* app_;
    std::string config_path_;
    std::vector<Binding> bindings_;
};

inline fs::path output_dir(const std::string& out, const std::string& command) {
    if (!out.empty()) return out;
    if (const char* root = std::getenv(kOutEnv); root != nullptr && *root != '\0') return fs::path(root) / command;
    return fs::path("maekit-runs") / command;
}

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ConfigError(what);
}

// Scan a dataset directory; rejections go to <out>/<dir name>.rejections.tsv.
inline DatasetManifest load_dataset(const std::string& dir, TaskKind task, const fs::path& out, std::ostream& log) {
    const auto scan = scan_and_validate(dir, task);
    for (const auto& w : scan.warnings) log << "warning: " << w << "\n";
    const fs::path report = out / (fs::path(dir).filename().string() + ".rejections.tsv");
    if (!scan.rejected.empty()) {
        write_file_bytes(report, format_rejections(scan.rejected));
        log << scan.rejected.size() << " file(s) rejected, see " << report.string() << "\n";
    }
    if (scan.manifest.empty()) {
        if (scan.rejected.empty()) write_file_bytes(report, "");
        throw LoadError("no usable " + to_string(task) + " data in '" + dir + "'; rejection report: " + report.string());
    }
    return scan.manifest;
}

inline void write_history(const HeadTrainResult& r, const std::string& metric, const fs::path& path) {
    std::string text = "epoch\tloss\t" + metric + "\n";
    char line[96];
    for (std::size_t e = 0; e < r.loss_history.size(); ++e) {
        std::snprintf(line, sizeof line, "%zu\t%.9g\t%.9g\n", e, r.loss_history[e], r.metric_history[e]);
        text += line;
    }
    write_file_bytes(path, text);
}

struct PretrainArgs {
    std::string data, preset = "desk", out;
    std::size_t image_size = 0, patch_size = 0;
    double mask_ratio = 0.75;
    std::size_t epochs = 100, batch = 8;
    double lr = 1e-3, weight_decay = 0.05, warmup = 0.05;
    std::uint64_t seed = 0;
};

inline int cmd_pretrain(const PretrainArgs& a, const fs::path& out, std::ostream& log) {
    ArchConfig cfg = ArchConfig::preset(a.preset);
    if (a.image_size != 0) cfg.patch.image_size = a.image_size;
    if (a.patch_size != 0) cfg.patch.patch_size = a.patch_size;
    cfg.validate();
    require(a.warmup >= 0.0 && a.warmup <= 1.0, "--warmup must lie in [0, 1]");

    const auto manifest = load_dataset(a.data, TaskKind::pretrain, out, log);
    const auto images = load_images<float>(manifest, cfg.patch.image_size);

    PretrainOptions opts;
    opts.mask_ratio = a.mask_ratio;
    opts.optim = OptimConfig::pretrain(a.epochs);
    opts.optim.warmup_epochs = a.warmup * static_cast<double>(a.epochs);
    opts.optim.batch_size = a.batch;
    opts.optim.base_lr = a.lr;
    opts.optim.weight_decay = a.weight_decay;
    opts.optim.seed = a.seed;

    auto model = init_params<float>(cfg, a.seed);
    RunLog run_log(out / "run.log");
    std::string epochs = "epoch\tloss\n";
    double best = std::numeric_limits<double>::infinity();
    pretrain(model, images, opts, &run_log, [&](std::size_t epoch, double loss) {
        char line[64];
        std::snprintf(line, sizeof line, "%zu\t%.9g\n", epoch, loss);
        epochs += line;
        save_checkpoint(model, out / "checkpoint_latest.ckpt");
        if (loss < best) {
            best = loss;
            save_checkpoint(model, out / "checkpoint_best.ckpt");
        }
    });
    write_file_bytes(out / "epochs.tsv", epochs);
    log << "pretrained " << manifest.size() << " images for " << a.epochs << " epochs; best epoch loss " << best
        << "\ncheckpoints in " << out.string() << "\n";
    return exit_code::ok;
}

struct HeadArgs {
    std::string ckpt, data, test_data, mode = "linear", out;
    std::size_t classes = 2, epochs = 30, batch = 8;
    double lr = 1e-2;
    std::uint64_t seed = 0;
};

struct HeadData {
    DatasetManifest train, test;
    std::optional<DatasetManifest> val;
};

inline HeadData head_data(const HeadArgs& a, TaskKind task, const fs::path& out, std::ostream& log) {
    HeadData d;
    const auto all = load_dataset(a.data, task, out, log);
    if (!a.test_data.empty()) {
        d.train = all;
        d.test = load_dataset(a.test_data, task, out, log);
        return d;
    }
    auto parts = split(all, SplitSpec{0.70, 0.15, 0.15, a.seed});
    for (const auto& w : parts.warnings) log << "warning: " << w << "\n";
    require(!parts.train.empty() && !parts.test.empty(), "dataset too small for a train/test split");
    d.train = std::move(parts.train);
    d.test = std::move(parts.test);
    if (!parts.val.empty()) d.val = std::move(parts.val);
    return d;
}

inline OptimConfig head_optim(const HeadArgs& a) {
    auto o = OptimConfig::head(a.epochs);
    o.base_lr = a.lr;
    o.batch_size = a.batch;
    o.seed = a.seed;
    return o;
}

// In linear mode the encoder must come out bit-identical; a drift is a failed check.
inline int report_backbone(std::uint64_t before, const MaeModel<float>& model, TrainMode mode, const fs::path& out,
                           std::ostream& log) {
    const auto after = backbone_checksum(model);
    char line[128];
    std::snprintf(line, sizeof line, "backbone checksum %016llx -> %016llx", static_cast<unsigned long long>(before),
                  static_cast<unsigned long long>(after));
    log << line;
    if (mode == TrainMode::full_finetune) {
        save_checkpoint(model, out / "backbone.ckpt");
        log << " (fine-tuned, saved backbone.ckpt)\n";
        return exit_code::ok;
    }
    if (before != after) {
        log << " CHANGED: frozen backbone was modified\n";
        return exit_code::check_failed;
    }
    log << " (unchanged)\n";
    return exit_code::ok;
}

inline int cmd_probe(const HeadArgs& a, const fs::path& out, std::ostream& log) {
    const auto mode = parse_train_mode(a.mode);
    auto model = load_checkpoint<float>(a.ckpt);
    const auto data = head_data(a, TaskKind::classify, out, log);
    const std::size_t size = model.cfg.patch.image_size;
    const auto before = backbone_checksum(model);

    auto head = init_linear_head<float>(model.cfg.enc_dim, a.classes, a.seed);
    const auto labels = labels_of(data.train);
    RunLog run_log(out / "run.log");
    const auto result = train_head(model, head, load_images<float>(data.train, size), std::span<const int>(labels), mode,
                                   head_optim(a), &run_log);

    std::vector<std::pair<std::string, double>> metrics;
    auto evaluate = [&](const DatasetManifest& m, const std::string& name) {
        const auto preds = predict_classes(load_images<float>(m, size), model, head);
        const auto truth = labels_of(m);
        metrics.emplace_back(name + "_accuracy", accuracy(std::span<const int>(preds), std::span<const int>(truth)));
    };
    if (data.val) evaluate(*data.val, "val");
    evaluate(data.test, "test");

    save_head(head, out / "head.ckpt");
    write_metrics(metrics, out / "metrics.tsv");
    write_history(result, "train_accuracy", out / "history.tsv");
    log << format_metrics(metrics);
    return report_backbone(before, model, mode, out, log);
}

inline int cmd_segment(const HeadArgs& a, const fs::path& out, std::ostream& log) {
    const auto mode = parse_train_mode(a.mode);
    auto model = load_checkpoint<float>(a.ckpt);
    require_segmentable(model.cfg.patch);
    const auto data = head_data(a, TaskKind::segment, out, log);
    const std::size_t size = model.cfg.patch.image_size;
    const auto before = backbone_checksum(model);

    auto head = init_segmentation_head<float>(model.cfg.enc_dim, a.seed);
    RunLog run_log(out / "run.log");
    const auto result = train_head(model, head, load_images<float>(data.train, size), load_masks<float>(data.train, size),
                                   mode, head_optim(a), &run_log);

    std::vector<std::pair<std::string, double>> metrics;
    auto evaluate = [&](const DatasetManifest& m, const std::string& name) {
        const auto pred = predict_masks(load_images<float>(m, size), model, head);
        const auto truth = load_masks<float>(m, size);
        metrics.emplace_back(name + "_f_score", f_score(segmentation_confusion(pred, truth)));
        metrics.emplace_back(name + "_mean_image_f_score", mean_image_f_score(pred, truth));
    };
    if (data.val) evaluate(*data.val, "val");
    evaluate(data.test, "test");

    save_head(head, out / "head.ckpt");
    write_metrics(metrics, out / "metrics.tsv");
    write_history(result, "train_f_score", out / "history.tsv");
    log << format_metrics(metrics);
    return report_backbone(before, model, mode, out, log);
}

struct ReconstructArgs {
    std::string ckpt, image, out;
    double mask_ratio = 0.75;
    std::uint64_t seed = 0;
};

inline constexpr std::uint8_t kMaskedGray = 128;

inline int cmd_reconstruct(const ReconstructArgs& a, const fs::path& out, std::ostream& log) {
    const auto model = load_checkpoint<float>(a.ckpt);
    const auto& pc = model.cfg.patch;
    const auto image = load_image<float>(a.image);
    if (image.dim(1) != pc.image_size || image.dim(2) != pc.image_size) {
        throw ConfigError("image is " + std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(1)) +
                          " but the checkpoint expects " + std::to_string(pc.image_size) + "x" +
                          std::to_string(pc.image_size));
    }
    Rng rng(a.seed);
    const auto plan = make_mask_plan(pc.num_patches(), a.mask_ratio, rng);

    NoGradGuard guard;
    const auto patches = patchify(image, pc);
    const std::size_t d = pc.patch_dim();
    std::vector<float> recon(patches.data().begin(), patches.data().end());
    if (plan.masked_count() > 0) {
        const Tensor<float> batch({1, 1, pc.image_size, pc.image_size},
                                  std::vector<float>(image.data().begin(), image.data().end()));
        const std::vector<MaskPlan> plans{plan};
        const auto pred = decode(encode(batch, std::span<const MaskPlan>(plans), model), std::span<const MaskPlan>(plans), model);
        const auto p = pred.data();
        for (auto i : plan.masked()) {
            // Predictions live in per-patch normalized units; invert with the original patch statistics.
            double mu = 0.0, var = 0.0;
            for (std::size_t k = 0; k < d; ++k) mu += patches.data()[i * d + k];
            mu /= static_cast<double>(d);
            for (std::size_t k = 0; k < d; ++k) {
                const double c = patches.data()[i * d + k] - mu;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const double sd = std::sqrt(var + 1e-6);
            for (std::size_t k = 0; k < d; ++k) recon[i * d + k] = static_cast<float>(p[i * d + k] * sd + mu);
        }
    }
    std::vector<float> grayed(patches.data().begin(), patches.data().end());
    for (auto i : plan.masked())
        for (std::size_t k = 0; k < d; ++k) grayed[i * d + k] = static_cast<float>(kMaskedGray) / 255.0f;

    write_image(image, out / "original.pgm");
    write_image(unpatchify(Tensor<float>(patches.shape(), std::move(grayed)), pc), out / "masked.pgm");
    write_image(unpatchify(Tensor<float>(patches.shape(), std::move(recon)), pc), out / "reconstruction.pgm");
    log << plan.masked_count() << " of " << pc.num_patches() << " patches masked; images in " << out.string() << "\n";
    return exit_code::ok;
}

inline int cmd_gradcheck(const std::vector<std::string>& corrupt, std::ostream& log) {
    auto& corrupted = detail::corrupted_backward_ops();
    corrupted.clear();
    corrupted.insert(corrupt.begin(), corrupt.end());
    std::vector<GradCheckOutcome> outcomes;
    try {
        outcomes = worst_per_op(run_gradcheck_suite());
    } catch (...) {
        corrupted.clear();
        throw;
    }
    corrupted.clear();

    std::vector<std::string> failing;
    char line[160];
    for (const auto& o : outcomes) {
        std::snprintf(line, sizeof line, "%-24s %.3e  %s  (worst: %s)\n", o.op.c_str(), o.max_error,
                      o.ok() ? "ok  " : "FAIL", o.label.c_str());
        log << line;
        if (!o.ok()) failing.push_back(o.op);
    }
    if (failing.empty()) {
        log << "all " << outcomes.size() << " ops within " << kGradCheckTolerance << "\n";
        return exit_code::ok;
    }
    log << "failing ops:";
    for (const auto& f : failing) log << " " << f;
    log << "\n";
    return exit_code::check_failed;
}

struct GenArgs {
    std::string kind = "classify", out;
    std::size_t n = 100, size = 64;
    std::uint64_t seed = 0;
};

inline int cmd_gen_synthetic(const GenArgs& a, const fs::path& out, std::ostream& log) {
    const auto m = gen_synthetic(parse_task_kind(a.kind), a.n, a.size, a.seed, out);
    log << "wrote " << m.size() << " " << a.kind << " samples to " << out.string() << "\n";
    return exit_code::ok;
}

}  // namespace cli

/// Entry point shared by the maekit executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"maekit: masked-autoencoder pre-training and downstream heads"};
    app.require_subcommand(1);

    cli::PretrainArgs pre;
    auto* sp = app.add_subcommand("pretrain", "Masked-autoencoder pre-training");
    cli::Options po(sp);
    po.add("data", pre.data, "Dataset directory");
    po.add("preset", pre.preset, "Architecture preset: desk or vit-b");
    po.add("image-size", pre.image_size, "Override the preset image size (0 keeps it)");
    po.add("patch-size", pre.patch_size, "Override the preset patch size (0 keeps it)");
    po.add("mask-ratio", pre.mask_ratio, "Fraction of patches masked");
    po.add("epochs", pre.epochs, "Training epochs");
    po.add("batch", pre.batch, "Batch size");
    po.add("lr", pre.lr, "Base learning rate");
    po.add("weight-decay", pre.weight_decay, "Decoupled weight decay");
    po.add("warmup", pre.warmup, "Warmup length as a fraction of the run");
    po.add("seed", pre.seed, "Seed for init, shuffling and masks");
    po.add("out", pre.out, "Output directory");

    cli::HeadArgs probe;
    auto* sprobe = app.add_subcommand("probe", "Train a classification head on a pre-trained encoder");
    cli::Options pb(sprobe);
    cli::HeadArgs seg;
    seg.lr = 5e-3;
    auto* sseg = app.add_subcommand("segment", "Train a segmentation head on a pre-trained encoder");
    cli::Options sg(sseg);
    for (auto [opts, args] : {std::pair{&pb, &probe}, std::pair{&sg, &seg}}) {
        opts->add("ckpt", args->ckpt, "Pre-trained checkpoint");
        opts->add("data", args->data, "Training dataset directory (split 70/15/15 unless --test-data is given)");
        opts->add("test-data", args->test_data, "Separate test dataset directory");
        opts->add("mode", args->mode, "linear (frozen encoder) or full (fine-tune everything)");
        opts->add("epochs", args->epochs, "Training epochs");
        opts->add("batch", args->batch, "Batch size");
        opts->add("lr", args->lr, "Learning rate");
        opts->add("seed", args->seed, "Seed for head init, split and shuffling");
        opts->add("out", args->out, "Output directory");
    }
    pb.add("classes", probe.classes, "Number of classes");

    cli::ReconstructArgs rec;
    auto* srec = app.add_subcommand("reconstruct", "Mask an image and reconstruct it");
    cli::Options ro(srec);
    ro.add("ckpt", rec.ckpt, "Pre-trained checkpoint");
    ro.add("image", rec.image, "Input P5 image at the checkpoint's resolution");
    ro.add("mask-ratio", rec.mask_ratio, "Fraction of patches masked");
    ro.add("seed", rec.seed, "Mask seed");
    ro.add("out", rec.out, "Output directory");

    std::vector<std::string> corrupt;
    auto* sgc = app.add_subcommand("gradcheck", "Finite-difference check of every backward rule");
    sgc->add_option("--corrupt-op", corrupt)->group("");

    cli::GenArgs gen;
    auto* sgen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset");
    cli::Options go(sgen);
    go.add("kind", gen.kind, "pretrain, classify or segment");
    go.add("n", gen.n, "Number of samples");
    go.add("size", gen.size, "Image side in pixels");
    go.add("seed", gen.seed, "Generator seed");
    go.add("out", gen.out, "Output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, log, err);
        return code == 0 ? exit_code::ok : exit_code::usage;
    }

    auto prepare = [&](cli::Options& opts, const std::string& out, const std::string& command) {
        const fs::path dir = cli::output_dir(out, command);
        fs::create_directories(dir);
        write_file_bytes(dir / "config.txt", opts.resolved(command));
        return dir;
    };

    try {
        if (sp->parsed()) {
            po.apply_config_file();
            cli::require(!pre.data.empty(), "pretrain: --data is required");
            return cli::cmd_pretrain(pre, prepare(po, pre.out, "pretrain"), log);
        }
        for (auto [sub, opts, args, name] : {std::tuple{sprobe, &pb, &probe, "probe"}, std::tuple{sseg, &sg, &seg, "segment"}}) {
            if (!sub->parsed()) continue;
            opts->apply_config_file();
            cli::require(!args->ckpt.empty(), std::string(name) + ": --ckpt is required");
            cli::require(!args->data.empty(), std::string(name) + ": --data is required");
            const auto dir = prepare(*opts, args->out, name);
            return sub == sprobe ? cli::cmd_probe(*args, dir, log) : cli::cmd_segment(*args, dir, log);
        }
        if (srec->parsed()) {
            ro.apply_config_file();
            cli::require(!rec.ckpt.empty() && !rec.image.empty(), "reconstruct: --ckpt and --image are required");
            return cli::cmd_reconstruct(rec, prepare(ro, rec.out, "reconstruct"), log);
        }
        if (sgc->parsed()) return cli::cmd_gradcheck(corrupt, log);
        if (sgen->parsed()) {
            go.apply_config_file();
            cli::require(gen.n > 0, "gen-synthetic: --n must be positive");
            return cli::cmd_gen_synthetic(gen, prepare(go, gen.out, "gen-synthetic"), log);
        }
    } catch (const NumericError& e) {
        err << "numeric abort: " << e.what() << "\n";
        return exit_code::numeric;
    } catch (const ContractError& e) {
        err << "internal check failed: " << e.what() << "\n";
        return exit_code::check_failed;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_code::usage;
    }
    return exit_code::usage;
}

}  // namespace maekit
