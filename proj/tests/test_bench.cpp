#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <mutex>

#include "damkit/bench.hpp"
#include "damkit/image_io.hpp"

using namespace damkit;
using namespace damkit::bench;

namespace {

const std::filesystem::path kFixtures = DAMKIT_FIXTURES;

std::vector<BenchRegion> load_bench(const std::string& name) { return parse_bench(read_json_file(kFixtures / "bench" / name)); }

std::map<std::string, std::string> load_predictions(const std::string& name) {
    return parse_predictions(read_json_file(kFixtures / "bench" / name));
}

BenchQuestion question(const std::string& id, QuestionKind kind, std::vector<double> points, bool recognition = false) {
    BenchQuestion q;
    q.id = id;
    q.region_id = "r";
    q.kind = kind;
    q.is_recognition = recognition;
    for (std::size_t i = 0; i < points.size(); ++i) q.options.push_back({std::string(1, static_cast<char>('A' + i)), "", points[i]});
    return q;
}

JudgeVerdict pick(const std::string& qid, std::optional<std::string> label) { return {qid, std::move(label), "", 1}; }

class ScriptedTransport final : public JudgeTransport {
public:
    explicit ScriptedTransport(std::vector<HttpReply> replies) : replies_(std::move(replies)) {}
    HttpReply post(const std::string& body) const override {
        std::lock_guard lock(mu_);
        bodies.push_back(nlohmann::json::parse(body));
        const auto i = std::min(calls_++, replies_.size() - 1);
        return replies_[i];
    }
    mutable std::vector<nlohmann::json> bodies;

private:
    std::vector<HttpReply> replies_;
    mutable std::size_t calls_ = 0;
    mutable std::mutex mu_;
};

HttpReply completion(const std::string& content) {
    return {200, nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump(), ""};
}

LlmJudgeConfig fast_config() {
    LlmJudgeConfig c;
    c.backoff_ms = 0;
    return c;
}

BenchQuestion abc_question() {
    auto q = question("q", QuestionKind::Positive, {1, 0.5, 0});
    q.text = "Where are the controls?";
    q.options[0].text = "front";
    q.options[1].text = "back";
    q.options[2].text = "not mentioned";
    return q;
}

}  // namespace

TEST(BenchFixture, MockJudgeTotals) {
    const auto rep = score_run(load_predictions("predictions.json"), load_bench("bench.json"), MockJudge{});
    EXPECT_DOUBLE_EQ(rep.pos_pct, 50.0);
    EXPECT_DOUBLE_EQ(rep.neg_pct, 75.0);
    EXPECT_DOUBLE_EQ(rep.avg_pct, 62.5);
    EXPECT_EQ(rep.judge, "mock");
}

TEST(BenchFixture, GatedRegionContributesNothingPositive) {
    const auto rep = score_run(load_predictions("predictions.json"), load_bench("bench.json"), MockJudge{});
    const auto& r2 = rep.regions.at(1);
    ASSERT_EQ(r2.region_id, "r2");
    EXPECT_FALSE(r2.recognition_ok);
    for (const auto& q : r2.questions) EXPECT_LE(q.points, 0.0);
}

TEST(BenchFixture, BoundaryExtremes) {
    const auto bench = load_bench("boundary_bench.json");
    const auto best = score_run(load_predictions("boundary_best.json"), bench, MockJudge{});
    EXPECT_DOUBLE_EQ(best.pos_pct, 100.0);
    EXPECT_DOUBLE_EQ(best.neg_pct, 100.0);
    EXPECT_DOUBLE_EQ(best.avg_pct, 100.0);
    const auto worst = score_run(load_predictions("boundary_worst.json"), bench, MockJudge{});
    EXPECT_DOUBLE_EQ(worst.pos_pct, -100.0);
}

TEST(BenchFixture, RecognitionFailureNeverAddsPoints) {
    const auto rep = score_run(load_predictions("recognition_failure_predictions.json"),
                               load_bench("recognition_failure_bench.json"), MockJudge{});
    ASSERT_EQ(rep.regions.size(), 1u);
    EXPECT_FALSE(rep.regions[0].recognition_ok);
    std::vector<double> contributions;
    for (const auto& q : rep.regions[0].questions)
        if (!q.is_recognition) contributions.push_back(q.points);
    EXPECT_EQ(contributions, (std::vector<double>{0, -1, 0, -1}));
}

TEST(Scoring, RegionExample) {
    BenchRegion r;
    r.region_id = "r";
    r.questions = {question("p1", QuestionKind::Positive, {1, 0}), question("p2", QuestionKind::Positive, {1, 0.5, 0}),
                   question("p3", QuestionKind::Positive, {1, -1}), question("n1", QuestionKind::Negative, {1, 0}),
                   question("n2", QuestionKind::Negative, {1, 0})};
    const auto s = score_verdicts(r, {pick("p1", "A"), pick("p2", "B"), pick("p3", "B"), pick("n1", "A"), pick("n2", "A")});
    EXPECT_DOUBLE_EQ(s.pos_pts, 0.5);
    EXPECT_DOUBLE_EQ(s.pos_max, 3.0);
    EXPECT_DOUBLE_EQ(s.neg_pts, 2.0);
    EXPECT_DOUBLE_EQ(s.neg_max, 2.0);
    EXPECT_THROW(score_verdicts(r, {pick("p1", "A")}), ShapeMismatch);
}

TEST(Scoring, RecognitionGateClampsPositiveContributions) {
    BenchRegion r;
    r.region_id = "r";
    r.questions = {question("rec", QuestionKind::Positive, {1, 0}, true), question("p", QuestionKind::Positive, {1, -1}),
                   question("n", QuestionKind::Negative, {1, -0.5})};
    auto s = score_verdicts(r, {pick("rec", "B"), pick("p", "A"), pick("n", "A")});
    EXPECT_FALSE(s.recognition_ok);
    EXPECT_EQ(s.questions[1].points, 0.0);
    EXPECT_TRUE(s.questions[1].gated);
    EXPECT_EQ(s.pos_max, 1.0);  // recognition excluded from the max
    s = score_verdicts(r, {pick("rec", "B"), pick("p", "B"), pick("n", "B")});
    EXPECT_EQ(s.pos_pts, -1.0);
    EXPECT_EQ(s.neg_pts, -0.5);
    s = score_verdicts(r, {pick("rec", std::nullopt), pick("p", "A"), pick("n", "A")});
    EXPECT_FALSE(s.recognition_ok);
    s = score_verdicts(r, {pick("rec", "A"), pick("p", "A"), pick("n", "A")});
    EXPECT_TRUE(s.recognition_ok);
    EXPECT_EQ(s.pos_pts, 1.0);
    EXPECT_EQ(s.neg_pts, 1.0);
}

TEST(Scoring, UnansweredScoresZeroButKeepsMax) {
    BenchRegion r;
    r.region_id = "r";
    r.questions = {question("p", QuestionKind::Positive, {1, 0})};
    const auto s = score_verdicts(r, {pick("p", std::nullopt)});
    EXPECT_EQ(s.pos_pts, 0.0);
    EXPECT_EQ(s.pos_max, 1.0);
    EXPECT_TRUE(s.recognition_ok);
}

TEST(Scoring, PercentOfEmptyMaxIsZero) { EXPECT_EQ(percent(3.0, 0.0), 0.0); }

TEST(BenchParsing, ValidationErrors) {
    const auto base = read_json_file(kFixtures / "bench" / "bench.json");
    auto bad = base;
    bad["regions"][0]["questions"][1]["options"][1]["label"] = "A";
    EXPECT_THROW(parse_bench(bad), FormatError);
    bad = base;
    bad["regions"][0]["questions"][1]["kind"] = "neutral";
    EXPECT_THROW(parse_bench(bad), FormatError);
    bad = base;
    bad["regions"][1]["region_id"] = "r1";
    EXPECT_THROW(parse_bench(bad), FormatError);
    bad = base;
    bad["regions"][0]["questions"][1]["is_recognition"] = true;
    EXPECT_THROW(parse_bench(bad), FormatError);
    EXPECT_THROW(parse_bench(nlohmann::json::object()), FormatError);
    EXPECT_THROW(parse_predictions(nlohmann::json::array()), FormatError);
    EXPECT_THROW(parse_predictions(nlohmann::json{{"r1", 3}}), FormatError);
}

TEST(MockJudge, TriggerFallbackAndCase) {
    auto q = abc_question();
    q.mock = MockScript{{{"A", {"front"}}, {"B", {"back"}}, {"C", {"coil", "back"}}}, "C"};
    MockJudge j;
    EXPECT_EQ(j.judge("Coil burners at the BACK", q).chosen_label, "B");
    EXPECT_EQ(j.judge("", q).chosen_label, "C");
    EXPECT_EQ(j.judge("front and back", q).chosen_label, "A");
    q.mock->fallback.reset();
    EXPECT_THROW(j.judge("x", q), FixtureError);
    q.mock.reset();
    EXPECT_THROW(j.judge("x", q), FixtureError);
}

TEST(MockJudge, TriggerOnLaterOption) {
    auto q = abc_question();
    q.mock = MockScript{{{"C", {"back"}}}, "A"};
    EXPECT_EQ(MockJudge{}.judge("coil burners at the back", q).chosen_label, "C");
}

TEST(LlmJudge, ParsesLabels) {
    const auto q = abc_question();
    EXPECT_EQ(parse_label("B", q), "B");
    EXPECT_EQ(parse_label("The answer is (B) because...", q), "B");
    EXPECT_EQ(parse_label("Answer: C.", q), "C");
    EXPECT_EQ(parse_label("banana", q), std::nullopt);
    EXPECT_EQ(completion_content("not json"), std::nullopt);
    EXPECT_EQ(completion_content("{\"choices\": []}"), std::nullopt);
}

TEST(LlmJudge, FirstReplyAccepted) {
    auto t = std::make_shared<ScriptedTransport>(std::vector<HttpReply>{completion("The answer is (B) because...")});
    LlmJudge j(t, fast_config());
    const auto v = j.judge("controls at the back", abc_question());
    EXPECT_EQ(v.chosen_label, "B");
    EXPECT_EQ(v.attempts, 1);
    ASSERT_EQ(t->bodies.size(), 1u);
    const auto& body = t->bodies[0];
    EXPECT_EQ(body["model"], "judge");
    EXPECT_EQ(body["temperature"], 0.0);
    ASSERT_EQ(body["messages"].size(), 2u);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    const auto user = body["messages"][1]["content"].get<std::string>();
    EXPECT_NE(user.find("controls at the back"), std::string::npos);
    EXPECT_NE(user.find("B. back"), std::string::npos);
    EXPECT_EQ(j.prompt_version(), "damkit-judge-v1");
}

TEST(LlmJudge, RetriesThenGivesUp) {
    auto t = std::make_shared<ScriptedTransport>(std::vector<HttpReply>{completion("garbage")});
    const auto v = LlmJudge(t, fast_config()).judge("d", abc_question());
    EXPECT_FALSE(v.answered());
    EXPECT_EQ(v.attempts, 3);
    ASSERT_EQ(t->bodies.size(), 3u);
    EXPECT_EQ(t->bodies[1]["temperature"], 0.7);
    EXPECT_EQ(t->bodies[2]["temperature"], 0.7);
}

TEST(LlmJudge, RecoversAfterTransportErrors) {
    auto t = std::make_shared<ScriptedTransport>(
        std::vector<HttpReply>{{0, "", "connection refused"}, {500, "oops", ""}, completion("A")});
    const auto v = LlmJudge(t, fast_config()).judge("d", abc_question());
    EXPECT_EQ(v.chosen_label, "A");
    EXPECT_EQ(v.attempts, 3);
    EXPECT_NE(v.raw_response.find("connection refused"), std::string::npos);
}

TEST(ScoreRun, WorkerCountDoesNotChangeReport) {
    const auto bench = load_bench("bench.json");
    const auto preds = load_predictions("predictions.json");
    const auto ref = report_to_json(score_run(preds, bench, MockJudge{}, 1)).dump();
    for (std::size_t w : {2u, 4u, 16u}) EXPECT_EQ(report_to_json(score_run(preds, bench, MockJudge{}, w)).dump(), ref);
    EXPECT_EQ(report_to_csv(score_run(preds, bench, MockJudge{}, 7)), report_to_csv(score_run(preds, bench, MockJudge{}, 1)));
}

TEST(ScoreRun, RegionOrderDoesNotChangeReport) {
    auto bench = load_bench("bench.json");
    const auto preds = load_predictions("predictions.json");
    const auto ref = report_to_json(score_run(preds, bench, MockJudge{})).dump();
    std::reverse(bench.begin(), bench.end());
    EXPECT_EQ(report_to_json(score_run(preds, bench, MockJudge{})).dump(), ref);
}

TEST(ScoreRun, UpgradingAnAnswerNeverLowersTotals) {
    BenchRegion r;
    r.region_id = "r";
    r.questions = {question("p", QuestionKind::Positive, {1, 0.5, -1})};
    r.questions[0].mock = MockScript{{{"A", {"best"}}, {"B", {"ok"}}}, "C"};
    double prev = -1e9;
    for (const char* d : {"bad", "ok", "best"}) {
        const auto rep = score_run({{"r", d}}, {r}, MockJudge{});
        EXPECT_GE(rep.pos_pct, prev);
        prev = rep.pos_pct;
    }
    EXPECT_EQ(prev, 100.0);
}

TEST(ScoreRun, MissingPredictionIsLoggedAndScoredEmpty) {
    auto preds = load_predictions("predictions.json");
    preds.erase("r4");
    const auto rep = score_run(preds, load_bench("bench.json"), MockJudge{});
    EXPECT_TRUE(rep.regions.at(3).description_missing);
    EXPECT_TRUE(std::any_of(rep.log.begin(), rep.log.end(), [](const std::string& s) { return s.find("r4") != std::string::npos; }));
}

TEST(ScoreRun, JudgeFailureBecomesUnanswered) {
    struct Failing final : Judge {
        JudgeVerdict judge(const std::string&, const BenchQuestion&) const override { throw JudgeFailure("down"); }
        std::string name() const override { return "failing"; }
    };
    const auto rep = score_run(load_predictions("predictions.json"), load_bench("bench.json"), Failing{}, 3);
    for (const auto& r : rep.regions)
        for (const auto& q : r.questions) EXPECT_FALSE(q.label.has_value());
    EXPECT_EQ(rep.pos_pts, 0.0);
    EXPECT_GT(rep.pos_max, 0.0);
}

TEST(ScoreRun, OutOfRangeLabelIsUnanswered) {
    struct Wrong final : Judge {
        JudgeVerdict judge(const std::string&, const BenchQuestion& q) const override { return {q.id, "Z", "Z", 1}; }
        std::string name() const override { return "wrong"; }
    };
    const auto rep = score_run(load_predictions("predictions.json"), load_bench("bench.json"), Wrong{});
    EXPECT_FALSE(rep.regions[0].questions[0].label.has_value());
}

TEST(Report, CsvLayout) {
    const auto rep = score_run(load_predictions("predictions.json"), load_bench("bench.json"), MockJudge{});
    const auto csv = report_to_csv(rep);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "region_id,question_id,kind,label,points");
    EXPECT_NE(csv.find("\nr1,r1-q0,recognition,A,0\n"), std::string::npos);
    EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
    EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    const auto j = report_to_json(rep);
    EXPECT_EQ(j["avg_pct"], 62.5);
    EXPECT_EQ(j["regions"].size(), 4u);
}

TEST(Report, AtomicWriteReplacesFile) {
    const auto dir = std::filesystem::temp_directory_path() / "damkit_bench_atomic";
    std::filesystem::create_directories(dir);
    const auto path = dir / "report.json";
    write_file_atomic(path, "first");
    write_file_atomic(path, "second");
    EXPECT_EQ(read_text_file(path), "second");
    EXPECT_FALSE(std::filesystem::exists(dir / "report.json.tmp"));
    EXPECT_THROW(write_file_atomic(dir / "no" / "such" / "dir.json", "x"), IoError);
    std::filesystem::remove_all(dir);
}
