// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "damkit/backbone.hpp"
#include "damkit/bench.hpp"
#include "damkit/captioner.hpp"
#include "damkit/image_io.hpp"
#include "damkit/pipeline.hpp"
#include "damkit/squares.hpp"
#include "oracles.hpp"

using namespace damkit;

namespace {

const std::filesystem::path kFixtures = DAMKIT_FIXTURES;

struct Outcome {
    bool ok = false;
    std::string detail;
};

Image random_image(int w, int h, CounterRng& rng) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = rng.uniform();
    return img;
}

RegionMask random_mask(int w, int h, CounterRng& rng) {
    RegionMask m(w, h);
    const int x0 = static_cast<int>(rng.below(w - 1)), y0 = static_cast<int>(rng.below(h - 1));
    const int x1 = x0 + 1 + static_cast<int>(rng.below(w - x0)), y1 = y0 + 1 + static_cast<int>(rng.below(h - y0));
    m.fill({x0, y0, std::min(x1, w), std::min(y1, h)});
    for (int k = 0; k < 5; ++k) m.set(static_cast<int>(rng.below(w)), static_cast<int>(rng.below(h)));
    return m;
}

Outcome zero_init_equivalence() {
    CounterRng rng(2024);
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        BackboneConfig cfg;
        cfg.patch = 2 + 2 * static_cast<int>(rng.below(2));
        cfg.enc_res = cfg.patch * (2 + static_cast<int>(rng.below(4)));
        cfg.dim = 8 * (1 + static_cast<int>(rng.below(3)));
        cfg.heads = 1 + static_cast<int>(rng.below(2));
        cfg.adapter_heads = 1 + static_cast<int>(rng.below(2));
        cfg.layers = 1 + static_cast<int>(rng.below(3));
        cfg.ffn_mult = 1 + static_cast<int>(rng.below(4));
        auto params = BackboneParams<double>::init(cfg, static_cast<std::uint64_t>(seed));
        const int w = 16 + static_cast<int>(rng.below(64)), h = 16 + static_cast<int>(rng.below(64));
        const auto prompt = build_focal_prompt(random_image(w, h, rng), random_mask(w, h, rng), kDefaultAlpha,
                                               kDefaultMinSide, cfg.enc_res);
        worst = std::max(worst, num::max_abs_diff(encode_prompt(prompt, params, cfg), plain_focal_encoding(prompt, params, cfg)));
    }
    return {worst == 0.0, "100 seeds/configs, max |diff| = " + std::to_string(worst)};
}

Outcome gradient_fidelity() {
    num::GradCheckOptions opt;
    opt.h = 1e-5;
    opt.tol = 1e-4;
    opt.max_entries_per_param = 8;
    opt.seed = 7;
    const auto rep = end_to_end_grad_check(CaptionerConfig{}, 7, opt);
    std::size_t entries = 0, checked = 0;
    for (const auto& p : rep.params) {
        entries += p.entries;
        checked += p.entries_checked;
    }
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu params, %zu/%zu entries probed singly + 1 directional probe each, max rel err %.3g",
                  rep.params.size(), checked, entries, rep.max_rel_err);
    return {rep.passed && rep.max_rel_err <= 1e-4, buf};
}

Outcome expand_box_oracle() {
    constexpr int kSide = 24;
    struct Setting {
        long long num, den;
        int min_side;
    };
    const Setting settings[] = {{3, 1, kDefaultMinSide}, {3, 1, 8}, {2, 1, 5}, {3, 2, 11}};
    std::size_t cases = 0, mismatches = 0;
    for (const auto& s : settings)
        for (int x0 = 0; x0 < kSide; ++x0)
            for (int x1 = x0 + 1; x1 <= kSide; ++x1)
                for (int y0 = 0; y0 < kSide; ++y0)
                    for (int y1 = y0 + 1; y1 <= kSide; ++y1) {
                        const PixelBox b{x0, y0, x1, y1};
                        const double alpha = static_cast<double>(s.num) / static_cast<double>(s.den);
                        if (expand_box(b, alpha, kSide, kSide, s.min_side) !=
                            oracle::expand_box(b, s.num, s.den, kSide, kSide, s.min_side))
                            ++mismatches;
                        ++cases;
                    }
    return {mismatches == 0, std::to_string(cases) + " boxes over 4 (alpha, min_side) settings, " +
                                 std::to_string(mismatches) + " mismatches"};
}

Outcome token_count() {
    const CaptionerConfig cfg;
    auto model = CaptionerModel<double>::init(cfg, Vocab::toy(), 7);
    perturb_zero_init(model, 7);
    CounterRng rng(99);
    const std::size_t expected = static_cast<std::size_t>((cfg.backbone.enc_res / cfg.backbone.patch) *
                                                          (cfg.backbone.enc_res / cfg.backbone.patch));
    std::size_t bad = 0;
    for (int i = 0; i < 50; ++i) {
        const int w = 20 + static_cast<int>(rng.below(120)), h = 20 + static_cast<int>(rng.below(120));
        const auto prompt = model.prompt_for(random_image(w, h, rng), random_mask(w, h, rng));
        num::Graph<double> g;
        const auto vision = backbone_forward(g, prompt, model.backbone, cfg.backbone);
        if (vision.length() != expected) ++bad;
        const auto logits = decode_logits(vision, {model.vocab.bos()}, model.decoder, cfg).value();
        if (logits.rows() != 1) ++bad;
    }
    return {bad == 0, "50 prompts, expected " + std::to_string(expected) + " tokens, " + std::to_string(bad) + " off"};
}

Outcome squares_mechanism() {
    const auto vocab = Vocab::toy();
    auto run = [&](bool ablate, double target) {
        auto model = CaptionerModel<float>::init(CaptionerConfig{}, vocab, 7);
        const auto train = squares::make_dataset(400, 7, vocab, ablate);
        const auto eval = squares::make_dataset(200, 1007, vocab, ablate);
        TrainOptions opt;
        opt.epochs = 1000;
        opt.lr = 2e-3;
        opt.batch_size = 16;
        opt.seed = 7;
        opt.max_steps = 300;
        opt.target_accuracy = target;
        const auto h = train_toy(model, train, opt, &eval);
        double best = 0.0;
        for (const auto& e : h.epochs) best = std::max(best, e.accuracy);
        return std::make_pair(h.epochs.back(), best);
    };
    const auto [focal, focal_best] = run(false, 0.95);
    const auto [ablated, ablated_best] = run(true, 0.0);
    char buf[200];
    std::snprintf(buf, sizeof buf, "focal acc %.3f at step %d; mask-ablated acc %.3f after %d steps (peak %.3f)",
                  focal.accuracy, focal.steps, ablated.accuracy, ablated.steps, ablated_best);
    (void)focal_best;
    return {focal.accuracy >= 0.95 && focal.steps <= 300 && ablated_best <= 0.40, buf};
}

bench::ScoreReport score_fixture(const std::string& bench_file, const std::string& pred_file, std::size_t workers = 1) {
    const auto b = bench::parse_bench(read_json_file(kFixtures / "bench" / bench_file));
    const auto p = bench::parse_predictions(read_json_file(kFixtures / "bench" / pred_file));
    return bench::score_run(p, b, bench::MockJudge{}, workers);
}

Outcome scoring_arithmetic() {
    const auto main = score_fixture("bench.json", "predictions.json");
    const auto best = score_fixture("boundary_bench.json", "boundary_best.json");
    const auto worst = score_fixture("boundary_bench.json", "boundary_worst.json");
    const auto fail = score_fixture("recognition_failure_bench.json", "recognition_failure_predictions.json");
    bool gated_ok = true;
    for (const auto& r : fail.regions) {
        gated_ok = gated_ok && !r.recognition_ok;
        for (const auto& q : r.questions)
            if (!q.is_recognition && q.points > 0.0) gated_ok = false;
    }
    const bool ok = main.pos_pct == 50.0 && main.neg_pct == 75.0 && main.avg_pct == 62.5 && best.pos_pct == 100.0 &&
                    best.neg_pct == 100.0 && best.avg_pct == 100.0 && worst.pos_pct == -100.0 && gated_ok;
    char buf[200];
    std::snprintf(buf, sizeof buf, "fixture %g/%g/%g, best %g/%g/%g, worst pos %g, gated contributions <= 0: %s",
                  main.pos_pct, main.neg_pct, main.avg_pct, best.pos_pct, best.neg_pct, best.avg_pct, worst.pos_pct,
                  gated_ok ? "yes" : "no");
    return {ok, buf};
}

Outcome scoring_determinism() {
    std::set<std::string> reports;
    for (std::size_t w : {1u, 4u, 16u}) {
        const auto rep = score_fixture("bench.json", "predictions.json", w);
        reports.insert(bench::report_to_json(rep).dump(2) + "\n" + bench::report_to_csv(rep));
    }
    return {reports.size() == 1, "workers 1/4/16 gave " + std::to_string(reports.size()) + " distinct report(s)"};
}

Outcome pipeline_invariants() {
    namespace p = pipeline;
    const auto images = p::synthetic_images(1000, 7);
    std::size_t input = 0;
    for (const auto& img : images) input += img.candidates.size();
    bool ok = true;
    std::string detail;
    std::set<std::pair<std::string, std::size_t>> previous;
    std::size_t prev_count = 0;
    bool first = true;
    for (double t : {0.3, 0.5, 0.7}) {
        p::PipelineConfig cfg;
        cfg.conf_threshold = t;
        const auto res = p::stage2_selftrain(images, p::TemplateDescriber{}, p::ProposalScorer{}, cfg, 4);
        std::map<std::string, std::set<std::string>> classes;
        std::map<std::string, std::size_t> counts;
        std::set<std::pair<std::string, std::size_t>> kept;
        for (const auto& r : res.accepted) {
            classes[r.image].insert(r.keyword);
            ++counts[r.image];
            kept.insert({r.image, r.region_index});
            ok = ok && r.confidence >= t;
        }
        for (const auto& [img, n] : counts) ok = ok && n <= 2 && classes[img].size() == n;
        ok = ok && res.accepted.size() + res.rejected.size() == input;
        if (!first) {
            ok = ok && kept.size() <= prev_count && std::includes(previous.begin(), previous.end(), kept.begin(), kept.end());
        }
        detail += (first ? "" : ", ") + std::string("t=") + std::to_string(t).substr(0, 3) + ": " +
                  std::to_string(res.accepted.size()) + " kept";
        previous = std::move(kept);
        prev_count = res.accepted.size();
        first = false;
    }
    return {ok, "1000 images, " + std::to_string(input) + " candidates; " + detail};
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        double limit_s;
        std::function<Outcome()> fn;
    };
    const Criterion criteria[] = {
        {"1 zero-init equivalence", 10, zero_init_equivalence},
        {"2 gradient fidelity", 60, gradient_fidelity},
        {"3 expand_box oracle equivalence", 5, expand_box_oracle},
        {"4 token-count preservation", 5, token_count},
        {"5 squares mechanism demonstration", 180, squares_mechanism},
        {"6 scoring arithmetic", 1, scoring_arithmetic},
        {"7 scoring concurrency determinism", 5, scoring_determinism},
        {"8 pipeline invariants", 10, pipeline_invariants},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool ok = o.ok && secs < c.limit_s;
        failures += ok ? 0 : 1;
        std::printf("%s  %-36s %7.2fs (limit %gs)  %s\n", ok ? "PASS" : "FAIL", c.name, secs, c.limit_s, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failures, std::size(criteria));
    return failures == 0 ? 0 : 1;
}
