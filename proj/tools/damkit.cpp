// damkit: command-line front end for geometry, toy training, description,
// gradient checking, benchmark scoring and pipeline runs.
//
// Machine-readable results go to stdout as JSON; progress and summaries go to
// stderr. Exit codes: 0 ok, 1 internal failure, 2 usage / parse / IO error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <regex>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "damkit/bench.hpp"
#include "damkit/bench_http.hpp"
#include "damkit/captioner.hpp"
#include "damkit/dataset.hpp"
#include "damkit/geometry.hpp"
#include "damkit/image_io.hpp"
#include "damkit/pipeline.hpp"
#include "damkit/squares.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

// Thrown for bad flag values that CLI11 cannot catch on its own.
struct UsageError : damkit::Error {
    using Error::Error;
};

damkit::PixelBox parse_box(const std::string& s) {
    static const std::regex re(R"(^\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*,\s*(-?\d+)\s*$)");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw UsageError("--box must be x0,y0,x1,y1 (integers), got '" + s + "'");
    return {std::stoi(m[1]), std::stoi(m[2]), std::stoi(m[3]), std::stoi(m[4])};
}

std::pair<int, int> parse_size(const std::string& s) {
    static const std::regex re(R"(^\s*(\d+)\s*[xX]\s*(\d+)\s*$)");
    std::smatch m;
    if (!std::regex_match(s, m, re)) throw UsageError("--image-size must be WxH, got '" + s + "'");
    return {std::stoi(m[1]), std::stoi(m[2])};
}

damkit::CaptionerConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    auto cfg = damkit::read_json_file(path).get<damkit::CaptionerConfig>();
    cfg.validate();
    return cfg;
}

damkit::Vocab load_vocab(const std::string& path) {
    return path.empty() ? damkit::Vocab::toy() : damkit::vocab_from_json(damkit::read_json_file(path));
}

// {"config": ..., "vocab": [...]} written next to every checkpoint.
fs::path sidecar(const fs::path& ckpt) { return fs::path(ckpt.string() + ".json"); }

/// Model restored from a checkpoint. Config and vocabulary come from the
/// checkpoint's sidecar when present, else defaults; --config overrides.
damkit::CaptionerModel<double> load_model(const std::string& ckpt, const std::string& config_path) {
    damkit::CaptionerConfig cfg;
    auto vocab = damkit::Vocab::toy();
    if (fs::exists(sidecar(ckpt))) {
        const auto side = damkit::read_json_file(sidecar(ckpt));
        cfg = side.at("config").get<damkit::CaptionerConfig>();
        vocab = damkit::vocab_from_json(side.at("vocab"));
    }
    if (!config_path.empty()) cfg = load_config(config_path);
    cfg.validate();
    auto model = damkit::CaptionerModel<double>::init(cfg, std::move(vocab), 0);
    model.load_checkpoint(damkit::num::read_bytes(ckpt));
    return model;
}

json describe_json(const damkit::CaptionerModel<double>& model, const std::vector<int>& tokens) {
    std::string text;
    for (auto id : tokens) {
        if (model.vocab.is_special(id)) continue;
        text += (text.empty() ? "" : " ") + model.vocab.token(id);
    }
    return {{"tokens", tokens}, {"words", model.vocab.decode(tokens)}, {"text", text}};
}

// --- subcommands ----------------------------------------------------------------

struct ExpandBoxArgs {
    std::string box, image_size;
    double alpha = damkit::kDefaultAlpha;
    int min_side = damkit::kDefaultMinSide;
};

int run_expand_box(const ExpandBoxArgs& a) {
    const auto box = parse_box(a.box);
    const auto [w, h] = parse_size(a.image_size);
    const auto out = damkit::expand_box(box, a.alpha, w, h, a.min_side);
    std::cout << json{{"x0", out.x0}, {"y0", out.y0}, {"x1", out.x1}, {"y1", out.y1}}.dump() << '\n';
    return kExitOk;
}

struct GenSquaresArgs {
    std::size_t count = 400;
    std::uint64_t seed = 0;
    std::string out;
    bool ablate = false;
};

int run_gen_squares(const GenSquaresArgs& a) {
    const auto vocab = damkit::Vocab::toy();
    const auto samples = damkit::squares::make_dataset(a.count, a.seed, vocab, a.ablate);
    const auto index = damkit::write_caption_dataset(a.out, samples, vocab);
    std::cout << json{{"dataset", index.string()}, {"samples", samples.size()}}.dump() << '\n';
    return kExitOk;
}

struct TrainArgs {
    std::string dataset, eval, config, vocab, out, precision = "float32";
    int epochs = 1;
    std::uint64_t seed = 0;
    double lr = 2e-3;
    int batch_size = 16;
    int max_steps = 0;
};

template <class T>
int train_with(const TrainArgs& a) {
    const auto cfg = load_config(a.config);
    const auto vocab = load_vocab(a.vocab);
    const auto data = damkit::read_caption_dataset(a.dataset, vocab);
    std::optional<std::vector<damkit::CaptionSample>> eval;
    if (!a.eval.empty()) eval = damkit::read_caption_dataset(a.eval, vocab);

    auto model = damkit::CaptionerModel<T>::init(cfg, vocab, a.seed);
    damkit::TrainOptions opt;
    opt.epochs = a.epochs;
    opt.lr = a.lr;
    opt.batch_size = a.batch_size;
    opt.seed = a.seed;
    opt.max_steps = a.max_steps;

    json epochs = json::array();
    damkit::TrainHistory hist;
    if (a.epochs > 0) {
        hist = damkit::train_toy(model, data, opt, eval ? &*eval : nullptr, [&](const damkit::EpochMetrics& m) {
            std::fprintf(stderr, "epoch %d  steps %d  loss %.4f  accuracy %.3f\n", m.epoch, m.steps, m.loss, m.accuracy);
            epochs.push_back({{"epoch", m.epoch}, {"steps", m.steps}, {"loss", m.loss}, {"accuracy", m.accuracy}});
        });
    }
    damkit::num::write_bytes(a.out, model.checkpoint_bytes());
    damkit::bench::write_file_atomic(sidecar(a.out), json{{"config", cfg}, {"vocab", vocab.tokens()}}.dump(2) + "\n");
    std::cout << json{{"checkpoint", a.out},
                      {"precision", a.precision},
                      {"samples", data.size()},
                      {"initial_loss", hist.initial_loss},
                      {"epochs", epochs}}
                     .dump()
              << '\n';
    return kExitOk;
}

int run_train(const TrainArgs& a) {
    return a.precision == "float64" ? train_with<double>(a) : train_with<float>(a);
}

struct DescribeArgs {
    std::string ckpt, config, image, mask;
    std::size_t max_len = 7;
};

int run_describe(const DescribeArgs& a) {
    auto model = load_model(a.ckpt, a.config);
    const auto image = damkit::read_ppm(fs::path(a.image));
    const auto mask = damkit::read_mask(a.mask);
    const auto tokens = damkit::describe(model, image, mask, a.max_len);
    std::cout << describe_json(model, tokens).dump() << '\n';
    return kExitOk;
}

struct GradcheckArgs {
    std::string config;
    std::uint64_t seed = 0;
    double tol = 1e-4;
    std::size_t entries = 8;
};

int run_gradcheck(const GradcheckArgs& a) {
    damkit::num::GradCheckOptions opt;
    opt.tol = a.tol;
    opt.max_entries_per_param = a.entries;
    opt.seed = a.seed;
    const auto rep = damkit::end_to_end_grad_check(load_config(a.config), a.seed, opt);
    std::size_t entries = 0, checked = 0;
    json params = json::array();
    for (const auto& p : rep.params) {
        entries += p.entries;
        checked += p.entries_checked;
        params.push_back({{"name", p.name},
                          {"entries", p.entries},
                          {"entries_checked", p.entries_checked},
                          {"max_rel_err", p.max_rel_err},
                          {"directional_rel_err", p.directional_rel_err}});
    }
    std::fprintf(stderr, "gradcheck: %zu params, %zu/%zu entries probed singly, max rel err %.3g (tol %.1g) %s\n",
                 rep.params.size(), checked, entries, rep.max_rel_err, rep.tol, rep.passed ? "PASS" : "FAIL");
    std::cout << json{{"max_rel_err", rep.max_rel_err}, {"tol", rep.tol}, {"passed", rep.passed}, {"params", params}}.dump()
              << '\n';
    return rep.passed ? kExitOk : kExitInternal;
}

struct BenchArgs {
    std::string bench, predictions, judge = "mock", judge_url, judge_model = "judge", report, csv;
    std::size_t workers = 1;
    int retries = 3;
};

int run_bench_score(const BenchArgs& a) {
    namespace b = damkit::bench;
    const auto regions = b::parse_bench(damkit::read_json_file(a.bench));
    const auto preds = b::parse_predictions(damkit::read_json_file(a.predictions));

    std::unique_ptr<b::Judge> judge;
    if (a.judge == "mock") {
        judge = std::make_unique<b::MockJudge>();
    } else {
        if (a.judge_url.empty()) throw UsageError("--judge http needs --judge-url");
        b::LlmJudgeConfig cfg;
        cfg.model = a.judge_model;
        cfg.max_attempts = a.retries;
        judge = std::make_unique<b::LlmJudge>(std::make_shared<b::HttplibTransport>(a.judge_url, b::judge_key_from_env()),
                                              cfg);
    }
    const auto rep = b::score_run(preds, regions, *judge, a.workers);
    const auto report = b::report_to_json(rep);
    b::write_file_atomic(a.report, report.dump(2) + "\n");
    const auto csv = a.csv.empty() ? fs::path(a.report).replace_extension(".csv") : fs::path(a.csv);
    b::write_file_atomic(csv, b::report_to_csv(rep));
    for (const auto& line : rep.log) std::fprintf(stderr, "%s\n", line.c_str());
    std::fprintf(stderr, "pos %.2f  neg %.2f  avg %.2f\n", rep.pos_pct, rep.neg_pct, rep.avg_pct);
    std::cout << json{{"pos_pct", rep.pos_pct},
                      {"neg_pct", rep.neg_pct},
                      {"avg_pct", rep.avg_pct},
                      {"report", a.report},
                      {"csv", csv.string()}}
                     .dump()
              << '\n';
    return kExitOk;
}

/// Describes manifest candidates with a trained captioner.
class CaptionerDescriber final : public damkit::pipeline::Describer {
public:
    CaptionerDescriber(damkit::CaptionerModel<double> model, fs::path base) : model_(std::move(model)), base_(std::move(base)) {}

    std::string describe(const damkit::pipeline::UnlabeledImage& img, std::size_t index) const override {
        const auto image = damkit::read_ppm(resolve(img.image));
        const auto mask = damkit::read_mask(resolve(img.candidates.at(index).mask));
        auto model = model_;  // decoding builds graphs over the parameters
        return describe_json(model, damkit::describe(model, image, mask, 7))["text"].get<std::string>();
    }

private:
    fs::path resolve(const std::string& p) const { return fs::path(p).is_absolute() ? fs::path(p) : base_ / p; }
    damkit::CaptionerModel<double> model_;
    fs::path base_;
};

struct PipelineArgs {
    std::string manifest, out, rejections, scorer = "proposal", ckpt, config;
    double threshold = 0.5;
    double class_name_prob = 0.5;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

int run_pipeline(const PipelineArgs& a) {
    namespace p = damkit::pipeline;
    p::PipelineConfig cfg;
    cfg.conf_threshold = a.threshold;
    cfg.class_name_prob = a.class_name_prob;
    try {
        cfg.validate();
    } catch (const damkit::Error& e) {
        throw UsageError(e.what());
    }
    const auto images = p::read_manifest(a.manifest);

    std::unique_ptr<p::Describer> describer;
    if (a.ckpt.empty())
        describer = std::make_unique<p::TemplateDescriber>();
    else
        describer = std::make_unique<CaptionerDescriber>(load_model(a.ckpt, a.config), fs::path(a.manifest).parent_path());
    std::unique_ptr<p::SimilarityScorer> scorer;
    if (a.scorer == "cosine")
        scorer = std::make_unique<p::CosineScorer>();
    else
        scorer = std::make_unique<p::ProposalScorer>();

    const auto result = p::stage2_selftrain(images, *describer, *scorer, cfg, a.workers);
    p::emit_training_set(result.accepted, a.out, cfg.class_name_prob, a.seed);
    const auto rej = a.rejections.empty() ? fs::path(a.out + ".rejections.csv") : fs::path(a.rejections);
    damkit::bench::write_file_atomic(rej, p::rejections_csv(result.rejected));

    std::size_t candidates = 0;
    for (const auto& img : images) candidates += img.candidates.size();
    std::fprintf(stderr, "pipeline: %zu images, %zu candidates, %zu accepted, %zu rejected\n", images.size(), candidates,
                 result.accepted.size(), result.rejected.size());
    std::cout << json{{"images", images.size()},
                      {"candidates", candidates},
                      {"accepted", result.accepted.size()},
                      {"rejected", result.rejected.size()},
                      {"out", a.out},
                      {"rejections", rej.string()}}
                     .dump()
              << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"damkit: localized captioning toolkit"};
    app.require_subcommand(1);
    int code = kExitOk;

    ExpandBoxArgs eb;
    auto* c_eb = app.add_subcommand("expand-box", "Expand a region box into its focal crop window");
    c_eb->add_option("--box", eb.box, "Box as x0,y0,x1,y1 (half-open)")->required();
    c_eb->add_option("--image-size", eb.image_size, "Image size as WxH")->required();
    c_eb->add_option("--alpha", eb.alpha, "Expansion factor per axis")->capture_default_str();
    c_eb->add_option("--min-side", eb.min_side, "Minimum crop side in pixels")->capture_default_str();
    c_eb->callback([&] { code = run_expand_box(eb); });

    GenSquaresArgs gs;
    auto* c_gs = app.add_subcommand("gen-squares", "Write a coloured-squares captioning dataset");
    c_gs->add_option("--count", gs.count, "Number of samples")->capture_default_str();
    c_gs->add_option("--seed", gs.seed, "Random seed")->required();
    c_gs->add_option("--out", gs.out, "Output directory")->required();
    c_gs->add_flag("--ablate-masks", gs.ablate, "Use whole-image masks");
    c_gs->callback([&] { code = run_gen_squares(gs); });

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train-toy", "Train the toy captioner and write a checkpoint");
    c_tr->add_option("--dataset", tr.dataset, "Captioner JSONL dataset")->required()->check(CLI::ExistingFile);
    c_tr->add_option("--eval", tr.eval, "Held-out JSONL dataset for accuracy")->check(CLI::ExistingFile);
    c_tr->add_option("--config", tr.config, "Model config JSON (defaults if omitted)")->check(CLI::ExistingFile);
    c_tr->add_option("--vocab", tr.vocab, "Vocabulary JSON list (toy vocabulary if omitted)")->check(CLI::ExistingFile);
    c_tr->add_option("--epochs", tr.epochs, "Epochs (0 writes the initial model)")->capture_default_str()->check(CLI::NonNegativeNumber);
    c_tr->add_option("--seed", tr.seed, "Random seed")->required();
    c_tr->add_option("--out", tr.out, "Checkpoint path")->required();
    c_tr->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str()->check(CLI::PositiveNumber);
    c_tr->add_option("--batch-size", tr.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
    c_tr->add_option("--max-steps", tr.max_steps, "Step cap (0: none)")->capture_default_str()->check(CLI::NonNegativeNumber);
    c_tr->add_option("--precision", tr.precision, "float32 or float64")
        ->capture_default_str()
        ->check(CLI::IsMember({"float32", "float64"}));
    c_tr->callback([&] { code = run_train(tr); });

    DescribeArgs ds;
    auto* c_ds = app.add_subcommand("describe", "Describe a masked region with a checkpoint");
    c_ds->add_option("--ckpt", ds.ckpt, "Checkpoint path")->required()->check(CLI::ExistingFile);
    c_ds->add_option("--config", ds.config, "Model config JSON (overrides the checkpoint sidecar)")->check(CLI::ExistingFile);
    c_ds->add_option("--image", ds.image, "Binary PPM image")->required()->check(CLI::ExistingFile);
    c_ds->add_option("--mask", ds.mask, "RLE mask JSON")->required()->check(CLI::ExistingFile);
    c_ds->add_option("--max-len", ds.max_len, "Maximum generated tokens")->capture_default_str()->check(CLI::PositiveNumber);
    c_ds->callback([&] { code = run_describe(ds); });

    GradcheckArgs gc;
    auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the end-to-end gradient");
    c_gc->add_option("--config", gc.config, "Model config JSON (defaults if omitted)")->check(CLI::ExistingFile);
    c_gc->add_option("--seed", gc.seed, "Random seed")->required();
    c_gc->add_option("--tol", gc.tol, "Maximum relative error")->capture_default_str();
    c_gc->add_option("--entries", gc.entries, "Entries probed singly per parameter (0: all)")->capture_default_str();
    c_gc->callback([&] { code = run_gradcheck(gc); });

    BenchArgs bs;
    auto* c_bs = app.add_subcommand("bench-score", "Score region descriptions against a benchmark");
    c_bs->add_option("--bench", bs.bench, "Benchmark JSON")->required()->check(CLI::ExistingFile);
    c_bs->add_option("--predictions", bs.predictions, "Predictions JSON (region_id -> description)")
        ->required()
        ->check(CLI::ExistingFile);
    c_bs->add_option("--judge", bs.judge, "mock or http")->capture_default_str()->check(CLI::IsMember({"mock", "http"}));
    c_bs->add_option("--judge-url", bs.judge_url, "Chat-completions endpoint URL (key from DAMKIT_JUDGE_KEY)");
    c_bs->add_option("--judge-model", bs.judge_model, "Model name sent to the endpoint")->capture_default_str();
    c_bs->add_option("--retries", bs.retries, "Attempts per question")->capture_default_str()->check(CLI::PositiveNumber);
    c_bs->add_option("--workers", bs.workers, "Parallel judge workers")->capture_default_str()->check(CLI::PositiveNumber);
    c_bs->add_option("--report", bs.report, "Report JSON path")->required();
    c_bs->add_option("--csv", bs.csv, "Per-question CSV path (default: report with .csv)");
    c_bs->callback([&] { code = run_bench_score(bs); });

    PipelineArgs pl;
    auto* c_pl = app.add_subcommand("pipeline", "Self-label a manifest and emit a training set");
    c_pl->add_option("--manifest", pl.manifest, "Manifest JSONL")->required()->check(CLI::ExistingFile);
    c_pl->add_option("--threshold", pl.threshold, "Confidence threshold in [0, 1]")->capture_default_str();
    c_pl->add_option("--out", pl.out, "Training-set JSONL path")->required();
    c_pl->add_option("--rejections", pl.rejections, "Rejection CSV path (default: <out>.rejections.csv)");
    c_pl->add_option("--seed", pl.seed, "Random seed for prompt class names")->required();
    c_pl->add_option("--class-name-prob", pl.class_name_prob, "Probability a prompt names the class")->capture_default_str();
    c_pl->add_option("--scorer", pl.scorer, "proposal or cosine")->capture_default_str()->check(CLI::IsMember({"proposal", "cosine"}));
    c_pl->add_option("--ckpt", pl.ckpt, "Describe candidates with this checkpoint")->check(CLI::ExistingFile);
    c_pl->add_option("--config", pl.config, "Model config for --ckpt")->check(CLI::ExistingFile);
    c_pl->add_option("--workers", pl.workers, "Parallel image workers")->capture_default_str()->check(CLI::PositiveNumber);
    c_pl->callback([&] { code = run_pipeline(pl); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const damkit::FormatError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const damkit::IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const damkit::InvalidBox& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const damkit::FixtureError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const damkit::VocabOverflow& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kExitInternal;
    }
    return code;
}
