// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and time
// budgets are fixed below; the process exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "maekit/cli.hpp"
#include "maekit/maekit.hpp"

using namespace maekit;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTol = 1e-5;
constexpr double kMeanTol = 1e-6;
constexpr double kVarTol = 1e-4;
constexpr double kOverfitFactor = 0.1;
constexpr double kProbeAccuracy = 0.95;
constexpr double kSegmentFScore = 0.90;
constexpr double kFScoreTol = 1e-12;

constexpr double kBudgetGrad = 60, kBudgetFast = 5, kBudgetOverfit = 600, kBudgetPipeline = 1200;

// Fixed seeds for the pipeline criteria.
constexpr std::uint64_t kPretrainDataSeed = 5, kModelSeed = 1, kPretrainOptimSeed = 3;
constexpr std::uint64_t kTrainSetSeed = 11, kTestSetSeed = 12, kHeadInitSeed = 9, kHeadOptimSeed = 4;

struct Verdict {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path workdir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "maekit_acceptance";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int cli(std::vector<std::string> args) {
    args.insert(args.begin(), "maekit");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

// ---------------------------------------------------------------- 1
Verdict gradients() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_op;
    for (const auto& o : run_gradcheck_suite()) {
        if (o.max_error >= worst) {
            worst = o.max_error;
            worst_op = o.op + " " + o.label;
        }
    }
    const double t = seconds_since(t0);
    return {worst < kGradTol && t < kBudgetGrad,
            fmt("max rel err %.2e (%s) < %.0e; %.1f s < %.0f s", worst, worst_op.c_str(), kGradTol, t, kBudgetGrad)};
}

// ---------------------------------------------------------------- 2
Verdict masking() {
    const auto t0 = Clock::now();
    Rng draw(2024);
    std::size_t bad = 0;
    for (int i = 0; i < 1000; ++i) {
        const std::size_t n = 1 + draw.below(400);
        const std::size_t permille = draw.below(1000);  // r = permille / 1000
        const double r = static_cast<double>(permille) / 1000.0;
        const std::size_t want_keep = n * (1000 - permille) / 1000;
        Rng rng(i);
        const auto plan = make_mask_plan(n, r, rng);
        bool ok = plan.keep_count == want_keep && plan.num_patches() == n;
        std::vector<std::size_t> round(n);
        for (std::size_t j = 0; j < n; ++j) round[j] = plan.shuffle_idx[plan.restore_idx[j]];
        for (std::size_t j = 0; j < n; ++j) ok &= round[j] == j;
        std::set<std::size_t> seen(plan.visible().begin(), plan.visible().end());
        const std::set<std::size_t> masked(plan.masked().begin(), plan.masked().end());
        for (auto m : masked) ok &= seen.insert(m).second;
        ok &= seen.size() == n && *seen.rbegin() == n - 1;
        for (std::size_t j = 0; j < n; ++j) ok &= (plan.mask_flags[j] == 1) == (masked.count(j) == 1);
        bad += ok ? 0 : 1;
    }
    Rng rng(7);
    const auto vit = make_mask_plan(196, 0.75, rng);
    const double t = seconds_since(t0);
    return {bad == 0 && vit.keep_count == 49 && t < kBudgetFast,
            fmt("%zu/1000 draws violate invariants; N=196 r=0.75 keeps %zu (want 49); %.2f s", bad, vit.keep_count, t)};
}

// ---------------------------------------------------------------- 3
Verdict locality() {
    const auto t0 = Clock::now();
    const PatchConfig cfg{16, 4};
    Rng rng(31);
    const auto images = detail::random_tensor({2, 1, 16, 16}, rng, 0.0, 1.0);
    std::vector<MaskPlan> plans{make_mask_plan(16, 0.75, rng), make_mask_plan(16, 0.75, rng)};
    const auto span = std::span<const MaskPlan>(plans);
    const auto pred = detail::random_tensor({2, 16, 16}, rng);
    const double base = mae_loss(pred, images, span, cfg).item();
    std::size_t visible_changes = 0, masked_silent = 0, probes = 0;
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t k = 0; k < 16; ++k) {
            for (std::size_t j = 0; j < 16; j += 5) {
                auto p = pred.detach();
                p.mutable_data()[(b * 16 + k) * 16 + j] += 0.5;
                const double l = mae_loss(p, images, span, cfg).item();
                ++probes;
                if (plans[b].mask_flags[k]) {
                    masked_silent += l == base ? 1 : 0;
                } else {
                    visible_changes += l != base ? 1 : 0;
                }
            }
        }
    }
    const double t = seconds_since(t0);
    return {visible_changes == 0 && masked_silent == 0 && t < kBudgetFast,
            fmt("%zu probes: %zu visible perturbations moved the loss, %zu masked ones did not; %.2f s", probes,
                visible_changes, masked_silent, t)};
}

// ---------------------------------------------------------------- 4
Verdict normalized_targets() {
    const auto t0 = Clock::now();
    Rng rng(41);
    double worst_mean = 0.0, worst_var = 0.0, worst_const = 0.0;
    for (std::size_t d : {16u, 64u, 256u}) {
        auto patches = detail::random_tensor({50, d}, rng, 0.0, 1.0);
        for (std::size_t k = 0; k < d; ++k) patches.mutable_data()[49 * d + k] = 0.37;  // one constant patch
        const auto t = normalize_patch_targets(patches);
        for (std::size_t i = 0; i < 49; ++i) {
            double mu = 0.0, var = 0.0;
            for (std::size_t k = 0; k < d; ++k) mu += t.data()[i * d + k];
            mu /= static_cast<double>(d);
            for (std::size_t k = 0; k < d; ++k) var += std::pow(t.data()[i * d + k] - mu, 2);
            var /= static_cast<double>(d);
            worst_mean = std::max(worst_mean, std::abs(mu));
            worst_var = std::max(worst_var, std::abs(var - 1.0));
        }
        for (std::size_t k = 0; k < d; ++k) worst_const = std::max(worst_const, std::abs(t.data()[49 * d + k]));
    }
    const double t = seconds_since(t0);
    return {worst_mean < kMeanTol && worst_var < kVarTol && worst_const == 0.0 && t < kBudgetFast,
            fmt("|mean| %.1e < %.0e, |var-1| %.1e < %.0e, constant patch max %.1e; %.2f s", worst_mean, kMeanTol,
                worst_var, kVarTol, worst_const, t)};
}

// ---------------------------------------------------------------- 5
Verdict overfit() {
    const auto t0 = Clock::now();
    const auto m = gen_synthetic(TaskKind::pretrain, 8, 64, kTrainSetSeed, workdir() / "overfit");
    const auto images = load_images<float>(m, 64);
    auto model = init_params<float>(ArchConfig::desk(), kModelSeed);
    PretrainOptions opts;
    opts.optim = OptimConfig::pretrain(300);  // 8 images at batch 8: one step per epoch
    opts.optim.seed = kPretrainOptimSeed;
    RunLog log;
    pretrain(model, images, opts, &log);
    const auto& lines = log.lines();
    auto loss_of = [](const std::string& line) { return std::stod(line.substr(line.rfind('\t') + 1)); };
    const double first = loss_of(lines.front()), last = loss_of(lines.back());
    const double t = seconds_since(t0);
    return {lines.size() == 300 && last < kOverfitFactor * first && t < kBudgetOverfit,
            fmt("%zu steps, loss %.4f -> %.4f (ratio %.3f < %.1f); %.1f s", lines.size(), first, last, last / first,
                kOverfitFactor, t)};
}

// ---------------------------------------------------------------- 6, 7
struct Backbone {
    MaeModel<float> model;
    double seconds;
};

const Backbone& backbone() {
    static const Backbone b = [] {
        const auto t0 = Clock::now();
        const auto m = gen_synthetic(TaskKind::pretrain, 256, 64, kPretrainDataSeed, workdir() / "pretrain");
        auto model = init_params<float>(ArchConfig::desk(), kModelSeed);
        PretrainOptions opts;
        opts.optim = OptimConfig::pretrain(5);
        opts.optim.seed = kPretrainOptimSeed;
        pretrain(model, load_images<float>(m, 64), opts);
        return Backbone{model, seconds_since(t0)};
    }();
    return b;
}

Verdict linear_probe() {
    const auto& b = backbone();
    const auto t0 = Clock::now();
    auto model = b.model;
    const auto before = backbone_checksum(model);
    const auto train = gen_synthetic(TaskKind::classify, 200, 64, kTrainSetSeed, workdir() / "cls_train");
    const auto test = gen_synthetic(TaskKind::classify, 50, 64, kTestSetSeed, workdir() / "cls_test");
    auto head = init_linear_head<float>(model.cfg.enc_dim, 2, kHeadInitSeed);
    auto opts = OptimConfig::head(30);
    opts.base_lr = 1e-2;
    opts.seed = kHeadOptimSeed;
    const auto labels = labels_of(train);
    train_head(model, head, load_images<float>(train, 64), std::span<const int>(labels), TrainMode::linear_probe, opts);
    const auto preds = predict_classes(load_images<float>(test, 64), model, head);
    const auto truth = labels_of(test);
    const double acc = accuracy(std::span<const int>(preds), std::span<const int>(truth));
    const bool frozen = backbone_checksum(model) == before;
    const double t = b.seconds + seconds_since(t0);
    return {acc >= kProbeAccuracy && frozen && t < kBudgetPipeline,
            fmt("test accuracy %.3f >= %.2f, backbone checksum %s; %.0f s incl. pretraining", acc, kProbeAccuracy,
                frozen ? "unchanged" : "CHANGED", t)};
}

Verdict segmentation() {
    const auto& b = backbone();
    const auto t0 = Clock::now();
    auto model = b.model;
    const auto train = gen_synthetic(TaskKind::segment, 200, 64, kTrainSetSeed, workdir() / "seg_train");
    const auto test = gen_synthetic(TaskKind::segment, 50, 64, kTestSetSeed, workdir() / "seg_test");
    auto head = init_segmentation_head<float>(model.cfg.enc_dim, kHeadInitSeed);
    auto opts = OptimConfig::head(30);
    opts.base_lr = 5e-3;
    opts.seed = kHeadOptimSeed;
    train_head(model, head, load_images<float>(train, 64), load_masks<float>(train, 64), TrainMode::linear_probe, opts);
    const auto images = load_images<float>(test, 64);
    const auto pred = predict_masks(images, model, head);
    const double f = f_score(segmentation_confusion(pred, load_masks<float>(test, 64)));
    const bool same_res = pred.shape() == images.shape();
    const double t = b.seconds + seconds_since(t0);
    return {f >= kSegmentFScore && same_res && t < kBudgetPipeline,
            fmt("test micro f-score %.3f >= %.2f, output %s for input %s; %.0f s incl. pretraining", f, kSegmentFScore,
                to_string(pred.shape()).c_str(), to_string(images.shape()).c_str(), t)};
}

// ---------------------------------------------------------------- 8
Verdict f_score_oracle() {
    std::size_t bad = 0;
    for (std::uint64_t tp = 0; tp <= 10; ++tp)
        for (std::uint64_t fp = 0; fp <= 10; ++fp)
            for (std::uint64_t fn = 0; fn <= 10; ++fn) {
                const double f = f_score({tp, fp, fn, 0});
                // Brute force: precision and recall from counts, then their harmonic mean.
                double want = 0.0;
                if (tp > 0) {
                    const long double p = static_cast<long double>(tp) / (tp + fp);
                    const long double r = static_cast<long double>(tp) / (tp + fn);
                    want = static_cast<double>(2 * p * r / (p + r));
                }
                bad += std::abs(f - want) <= kFScoreTol ? 0 : 1;
            }
    const double two_thirds = f_score({2, 1, 1, 0});
    return {bad == 0 && std::abs(two_thirds - 2.0 / 3.0) <= kFScoreTol,
            fmt("%zu/1331 triples disagree beyond %.0e; (2,1,1) -> %.15f", bad, kFScoreTol, two_thirds)};
}

// ---------------------------------------------------------------- 9
Verdict determinism() {
    const auto dir = workdir() / "determinism";
    if (cli({"gen-synthetic", "--kind", "pretrain", "--n", "16", "--size", "64", "--seed", "8", "--out",
             (dir / "data").string()}) != 0)
        return {false, "could not generate data"};
    for (const char* run : {"a", "b"}) {
        if (cli({"pretrain", "--data", (dir / "data").string(), "--epochs", "2", "--seed", "6", "--out",
                 (dir / run).string()}) != 0)
            return {false, std::string("pretrain run ") + run + " failed"};
    }
    const bool logs = read_file_bytes(dir / "a" / "run.log") == read_file_bytes(dir / "b" / "run.log");
    const bool ckpts = read_file_bytes(dir / "a" / "checkpoint_latest.ckpt") ==
                       read_file_bytes(dir / "b" / "checkpoint_latest.ckpt");
    const auto model = load_checkpoint<float>(dir / "a" / "checkpoint_latest.ckpt");
    save_checkpoint(model, dir / "resaved.ckpt");
    const bool resave = read_file_bytes(dir / "resaved.ckpt") == read_file_bytes(dir / "a" / "checkpoint_latest.ckpt");
    return {logs && ckpts && resave, fmt("run logs %s, checkpoints %s, save-load-save %s", logs ? "identical" : "DIFFER",
                                         ckpts ? "identical" : "DIFFER", resave ? "identical" : "DIFFERS")};
}

// ---------------------------------------------------------------- 10
Verdict split_arithmetic() {
    DatasetManifest m{"/acceptance", TaskKind::pretrain, {}};
    for (int i = 0; i < 612; ++i) m.entries.push_back({"img" + std::to_string(i) + ".pgm", std::nullopt, std::nullopt});
    const auto parts = split(m, SplitSpec{0.70, 0.15, 0.15, 1});
    std::multiset<std::string> all;
    for (const auto* p : {&parts.train, &parts.val, &parts.test})
        for (const auto& e : p->entries) all.insert(e.image);
    std::multiset<std::string> want;
    for (const auto& e : m.entries) want.insert(e.image);
    const bool sizes = parts.train.size() == 429 && parts.val.size() == 92 && parts.test.size() == 91;
    return {sizes && all == want, fmt("%zu/%zu/%zu (want 429/92/91), partition %s", parts.train.size(),
                                      parts.val.size(), parts.test.size(), all == want ? "exact" : "BROKEN")};
}

// ---------------------------------------------------------------- 11
Verdict reconstruction() {
    const auto dir = workdir() / "reconstruct";
    fs::create_directories(dir);
    ArchConfig cfg = ArchConfig::desk();
    cfg.patch = {224, 16};
    save_checkpoint(init_params<float>(cfg, kModelSeed), dir / "model.ckpt");
    const auto m = gen_synthetic(TaskKind::pretrain, 1, 224, 13, dir / "image");
    const auto image = m.image_path(m.entries.front());
    const std::uint64_t seed = 17;

    if (cli({"reconstruct", "--ckpt", (dir / "model.ckpt").string(), "--image", image.string(), "--mask-ratio", "0",
             "--out", (dir / "r0").string()}) != 0)
        return {false, "reconstruct at ratio 0 failed"};
    const bool exact = read_file_bytes(dir / "r0" / "reconstruction.pgm") == read_file_bytes(image);

    if (cli({"reconstruct", "--ckpt", (dir / "model.ckpt").string(), "--image", image.string(), "--mask-ratio",
             "0.75", "--seed", std::to_string(seed), "--out", (dir / "r75").string()}) != 0)
        return {false, "reconstruct at ratio 0.75 failed"};
    bool three = true;
    for (const char* f : {"original.pgm", "masked.pgm", "reconstruction.pgm"}) three &= fs::exists(dir / "r75" / f);
    const auto masked = parse_pgm(read_file_bytes(dir / "r75" / "masked.pgm"));
    std::set<std::size_t> gray;
    for (std::size_t k = 0; k < 196; ++k) {
        bool all = true;
        for (std::size_t y = 0; y < 16; ++y)
            for (std::size_t x = 0; x < 16; ++x) all &= masked.pixels[((k / 14) * 16 + y) * 224 + (k % 14) * 16 + x] == 128;
        if (all) gray.insert(k);
    }
    Rng rng(seed);
    const auto plan = make_mask_plan(196, 0.75, rng);
    const std::set<std::size_t> want(plan.masked().begin(), plan.masked().end());
    return {exact && three && gray.size() == 147 && gray == want,
            fmt("ratio 0 %s; ratio 0.75 grayed %zu of 196 patches (want 147)%s", exact ? "byte-exact" : "DIFFERS",
                gray.size(), gray == want ? ", matching the mask plan" : ", NOT the plan's patches")};
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
        {"gradient correctness", gradients},
        {"masking invariants", masking},
        {"loss locality", locality},
        {"normalized targets", normalized_targets},
        {"overfit run", overfit},
        {"linear-probe pipeline", linear_probe},
        {"segmentation pipeline", segmentation},
        {"f-score oracle", f_score_oracle},
        {"determinism and persistence", determinism},
        {"split arithmetic", split_arithmetic},
        {"reconstruction demo", reconstruction},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += v.pass ? 0 : 1;
        std::printf("%s %2zu %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failed, criteria.size());
    fs::remove_all(workdir());
    return failed == 0 ? 0 : 1;
}
