#pragma once

// Reference-free benchmark scoring for localized descriptions.
//
// Each region carries positive questions (details a good description should
// state correctly) and negative questions (details it should not claim). A
// judge picks one option per question; options carry points:
//   positive: +1 correct, +0.5 partially correct, 0 not mentioned, -1 wrong
//   negative: +1 correctly excluded, 0, -1 hallucinated
// An optional recognition question gates the region: when the object is not
// recognized, every positive and negative contribution is clamped to <= 0.
// Scores are normalized by the maximum attainable points per kind.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "damkit/error.hpp"
#include "damkit/parallel.hpp"

namespace damkit::bench {

enum class QuestionKind { Positive, Negative };

inline std::string to_string(QuestionKind k) { return k == QuestionKind::Positive ? "positive" : "negative"; }

inline QuestionKind kind_from_string(const std::string& s) {
    if (s == "positive") return QuestionKind::Positive;
    if (s == "negative") return QuestionKind::Negative;
    throw FormatError("question kind must be \"positive\" or \"negative\", got \"" + s + "\"");
}

struct BenchOption {
    std::string label;
    std::string text;
    double points = 0.0;
};

/// Deterministic judge script stored under the "x-mock" key of a question.
struct MockScript {
    std::vector<std::pair<std::string, std::vector<std::string>>> triggers;  // option label -> keywords, file order
    std::optional<std::string> fallback;
};

struct BenchQuestion {
    std::string id;
    std::string region_id;
    QuestionKind kind = QuestionKind::Positive;
    std::string text;
    std::vector<BenchOption> options;
    bool is_recognition = false;
    std::optional<MockScript> mock;

    const BenchOption* option(const std::string& label) const {
        for (const auto& o : options)
            if (o.label == label) return &o;
        return nullptr;
    }

    double max_points() const {
        double m = options.front().points;
        for (const auto& o : options) m = std::max(m, o.points);
        return m;
    }
};

struct BenchRegion {
    std::string region_id;
    std::string image;
    std::string mask;
    std::vector<BenchQuestion> questions;

    const BenchQuestion* recognition() const {
        for (const auto& q : questions)
            if (q.is_recognition) return &q;
        return nullptr;
    }
};

struct JudgeVerdict {
    std::string question_id;
    std::optional<std::string> chosen_label;  // empty: unanswered
    std::string raw_response;
    int attempts = 0;

    bool answered() const noexcept { return chosen_label.has_value(); }
};

/// A judge must be callable concurrently from several threads.
class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeVerdict judge(const std::string& description, const BenchQuestion& question) const = 0;
    virtual std::string name() const = 0;
    virtual std::string prompt_version() const { return "none"; }
};

// --- validation and JSON ---------------------------------------------------

inline void validate_question(const BenchQuestion& q) {
    if (q.id.empty()) throw FormatError("question without id");
    if (q.options.empty()) throw FormatError("question " + q.id + " has no options");
    std::set<std::string> labels;
    for (const auto& o : q.options) {
        if (o.label.empty()) throw FormatError("question " + q.id + " has an option without label");
        if (!labels.insert(o.label).second) throw FormatError("question " + q.id + " repeats label " + o.label);
        if (q.is_recognition) continue;
        const bool ok = q.kind == QuestionKind::Positive
                            ? (o.points == 1.0 || o.points == 0.5 || o.points == 0.0 || o.points == -1.0)
                            : (o.points == 1.0 || o.points == 0.0 || o.points == -1.0);
        if (!ok)
            throw FormatError("question " + q.id + " option " + o.label + " has points " + std::to_string(o.points) +
                              " outside the " + to_string(q.kind) + " schedule");
    }
    if (q.mock) {
        for (const auto& [label, _] : q.mock->triggers)
            if (!labels.count(label)) throw FormatError("question " + q.id + " mock trigger names unknown label " + label);
        if (q.mock->fallback && !labels.count(*q.mock->fallback))
            throw FormatError("question " + q.id + " mock fallback names unknown label " + *q.mock->fallback);
    }
}

inline void validate_region(const BenchRegion& r) {
    if (r.region_id.empty()) throw FormatError("region without region_id");
    if (r.questions.empty()) throw FormatError("region " + r.region_id + " has no questions");
    int recognition = 0;
    for (const auto& q : r.questions) {
        if (q.region_id != r.region_id)
            throw FormatError("question " + q.id + " names region " + q.region_id + " inside region " + r.region_id);
        recognition += q.is_recognition ? 1 : 0;
        validate_question(q);
    }
    if (recognition > 1) throw FormatError("region " + r.region_id + " has more than one recognition question");
}

inline void from_json(const nlohmann::json& j, BenchOption& o) {
    o.label = j.at("label").get<std::string>();
    o.text = j.value("text", "");
    o.points = j.at("points").get<double>();
}

inline void to_json(nlohmann::json& j, const BenchOption& o) {
    j = {{"label", o.label}, {"text", o.text}, {"points", o.points}};
}

inline BenchQuestion question_from_json(const nlohmann::json& j, const std::string& region_id) {
    BenchQuestion q;
    q.id = j.at("id").get<std::string>();
    q.region_id = j.value("region_id", region_id);
    q.kind = kind_from_string(j.at("kind").get<std::string>());
    q.text = j.value("text", "");
    q.options = j.at("options").get<std::vector<BenchOption>>();
    q.is_recognition = j.value("is_recognition", false);
    if (auto it = j.find("x-mock"); it != j.end()) {
        MockScript m;
        // triggers: [{"label": "A", "keywords": [...]}, ...] keeps file order
        for (const auto& t : it->value("triggers", nlohmann::json::array()))
            m.triggers.emplace_back(t.at("label").get<std::string>(), t.at("keywords").get<std::vector<std::string>>());
        if (auto fb = it->find("fallback"); fb != it->end()) m.fallback = fb->get<std::string>();
        q.mock = std::move(m);
    }
    return q;
}

inline std::vector<BenchRegion> parse_bench(const nlohmann::json& j) {
    std::vector<BenchRegion> out;
    try {
        for (const auto& rj : j.at("regions")) {
            BenchRegion r;
            r.region_id = rj.at("region_id").get<std::string>();
            r.image = rj.value("image", "");
            r.mask = rj.value("mask", "");
            for (const auto& qj : rj.at("questions")) r.questions.push_back(question_from_json(qj, r.region_id));
            validate_region(r);
            out.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed benchmark: ") + e.what());
    }
    std::set<std::string> ids;
    for (const auto& r : out)
        if (!ids.insert(r.region_id).second) throw FormatError("duplicate region " + r.region_id);
    return out;
}

inline std::map<std::string, std::string> parse_predictions(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("predictions must be a JSON object of region_id -> description");
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : j.items()) {
        if (!v.is_string()) throw FormatError("prediction for " + k + " is not a string");
        out.emplace(k, v.get<std::string>());
    }
    return out;
}

// --- mock judge --------------------------------------------------------------

inline std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

/// Picks the first option (in file order) whose trigger keywords all occur in
/// the description, case-insensitively; otherwise the fallback option.
class MockJudge final : public Judge {
public:
    JudgeVerdict judge(const std::string& description, const BenchQuestion& q) const override {
        if (!q.mock || !q.mock->fallback) throw FixtureError("question " + q.id + " has no mock fallback option");
        const auto desc = lowercase(description);
        JudgeVerdict v{q.id, std::nullopt, {}, 1};
        for (const auto& [label, keywords] : q.mock->triggers) {
            if (keywords.empty()) continue;
            const bool all = std::all_of(keywords.begin(), keywords.end(),
                                         [&](const std::string& k) { return desc.find(lowercase(k)) != std::string::npos; });
            if (all) {
                v.chosen_label = label;
                v.raw_response = "mock:trigger:" + label;
                return v;
            }
        }
        v.chosen_label = *q.mock->fallback;
        v.raw_response = "mock:fallback:" + *q.mock->fallback;
        return v;
    }
    std::string name() const override { return "mock"; }
    std::string prompt_version() const override { return "mock-v1"; }
};

// --- LLM judge -------------------------------------------------------------------

inline constexpr const char* kJudgePromptVersion = "damkit-judge-v1";

struct HttpReply {
    int status = 0;  // 0: transport error
    std::string body;
    std::string error;
};

/// Posts a JSON body to the chat-completions endpoint.
class JudgeTransport {
public:
    virtual ~JudgeTransport() = default;
    virtual HttpReply post(const std::string& json_body) const = 0;
};

struct LlmJudgeConfig {
    std::string model = "judge";
    int max_attempts = 3;
    double first_temperature = 0.0;
    double retry_temperature = 0.7;
    int backoff_ms = 250;  // doubled after each failed attempt
};

inline std::string judge_system_prompt() {
    return "You grade a description of an image region against one multiple-choice question. "
           "Reply with the label of the single best option and nothing else.";
}

inline std::string judge_user_prompt(const std::string& description, const BenchQuestion& q) {
    std::ostringstream out;
    out << "Description:\n" << (description.empty() ? "(empty)" : description) << "\n\n";
    out << "Question: " << q.text << "\nOptions:\n";
    for (const auto& o : q.options) out << o.label << ". " << o.text << '\n';
    out << "Answer with one label only.";
    return out.str();
}

inline nlohmann::json judge_request(const std::string& model, double temperature, const std::string& description,
                                    const BenchQuestion& q) {
    return {{"model", model},
            {"messages",
             nlohmann::json::array({{{"role", "system"}, {"content", judge_system_prompt()}},
                                    {{"role", "user"}, {"content", judge_user_prompt(description, q)}}})},
            {"temperature", temperature}};
}

/// First maximal alphanumeric token of `reply` that equals an option label.
inline std::optional<std::string> parse_label(const std::string& reply, const BenchQuestion& q) {
    std::size_t i = 0;
    while (i < reply.size()) {
        while (i < reply.size() && !std::isalnum(static_cast<unsigned char>(reply[i]))) ++i;
        std::size_t j = i;
        while (j < reply.size() && std::isalnum(static_cast<unsigned char>(reply[j]))) ++j;
        if (j > i) {
            const auto tok = reply.substr(i, j - i);
            if (q.option(tok)) return tok;
        }
        i = j;
    }
    return std::nullopt;
}

/// Extracts choices[0].message.content; nullopt if the body has another shape.
inline std::optional<std::string> completion_content(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
        return std::nullopt;
    }
}

class LlmJudge final : public Judge {
public:
    LlmJudge(std::shared_ptr<const JudgeTransport> transport, LlmJudgeConfig cfg = {})
        : transport_(std::move(transport)), cfg_(std::move(cfg)) {
        if (!transport_) throw Error("LlmJudge needs a transport");
        if (cfg_.max_attempts < 1) throw Error("LlmJudge needs at least one attempt");
    }

    JudgeVerdict judge(const std::string& description, const BenchQuestion& q) const override {
        JudgeVerdict v{q.id, std::nullopt, {}, 0};
        std::string audit;
        int backoff = cfg_.backoff_ms;
        for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
            if (attempt > 0 && backoff > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
            const double temp = attempt == 0 ? cfg_.first_temperature : cfg_.retry_temperature;
            const auto reply = transport_->post(judge_request(cfg_.model, temp, description, q).dump());
            v.attempts = attempt + 1;
            if (!audit.empty()) audit += " | ";
            if (reply.status != 200) {
                audit += "attempt " + std::to_string(attempt + 1) + ": http " + std::to_string(reply.status) +
                         (reply.error.empty() ? "" : " " + reply.error);
                continue;
            }
            const auto content = completion_content(reply.body);
            if (!content) {
                audit += "attempt " + std::to_string(attempt + 1) + ": malformed body";
                continue;
            }
            audit += "attempt " + std::to_string(attempt + 1) + ": " + *content;
            if (auto label = parse_label(*content, q)) {
                v.chosen_label = std::move(label);
                break;
            }
        }
        v.raw_response = std::move(audit);
        return v;
    }

    std::string name() const override { return "llm:" + cfg_.model; }
    std::string prompt_version() const override { return kJudgePromptVersion; }

private:
    std::shared_ptr<const JudgeTransport> transport_;
    LlmJudgeConfig cfg_;
};

// --- scoring -----------------------------------------------------------------

struct QuestionScore {
    std::string region_id;
    std::string question_id;
    QuestionKind kind = QuestionKind::Positive;
    bool is_recognition = false;
    std::optional<std::string> label;
    double raw_points = 0.0;  // points of the chosen option
    double points = 0.0;      // contribution after recognition gating
    double max_points = 0.0;
    bool gated = false;
    std::string raw_response;
    int attempts = 0;
};

struct RegionScore {
    std::string region_id;
    double pos_pts = 0.0;
    double pos_max = 0.0;
    double neg_pts = 0.0;
    double neg_max = 0.0;
    bool recognition_ok = true;
    bool has_recognition = false;
    bool description_missing = false;
    std::vector<QuestionScore> questions;
};

struct ScoreReport {
    std::string judge;
    std::string prompt_version;
    std::vector<RegionScore> regions;  // ordered by region_id
    double pos_pts = 0.0;
    double pos_max = 0.0;
    double neg_pts = 0.0;
    double neg_max = 0.0;
    double pos_pct = 0.0;
    double neg_pct = 0.0;
    double avg_pct = 0.0;
    std::vector<std::string> log;
};

/// Applies the point schedule and recognition gate to a region's verdicts.
/// `verdicts` must hold one entry per question, in question order.
inline RegionScore score_verdicts(const BenchRegion& region, const std::vector<JudgeVerdict>& verdicts) {
    if (verdicts.size() != region.questions.size())
        throw ShapeMismatch("region " + region.region_id + ": " + std::to_string(verdicts.size()) + " verdicts for " +
                            std::to_string(region.questions.size()) + " questions");
    RegionScore rs;
    rs.region_id = region.region_id;

    std::vector<QuestionScore> qs(region.questions.size());
    for (std::size_t i = 0; i < region.questions.size(); ++i) {
        const auto& q = region.questions[i];
        const auto& v = verdicts[i];
        auto& s = qs[i];
        s.region_id = region.region_id;
        s.question_id = q.id;
        s.kind = q.kind;
        s.is_recognition = q.is_recognition;
        s.max_points = q.max_points();
        s.raw_response = v.raw_response;
        s.attempts = v.attempts;
        if (v.chosen_label) {
            if (const auto* opt = q.option(*v.chosen_label)) {
                s.label = v.chosen_label;
                s.raw_points = opt->points;
            }
        }
    }

    // Recognition first: it gates everything else in the region. An
    // unanswered recognition question counts as not recognized.
    for (const auto& s : qs) {
        if (!s.is_recognition) continue;
        rs.has_recognition = true;
        rs.recognition_ok = s.label.has_value() && s.raw_points > 0.0;
    }

    for (auto& s : qs) {
        if (s.is_recognition) {
            s.points = 0.0;
            continue;
        }
        s.points = s.raw_points;
        if (!rs.recognition_ok && s.points > 0.0) {
            s.points = 0.0;
            s.gated = true;
        }
        if (s.kind == QuestionKind::Positive) {
            rs.pos_pts += s.points;
            rs.pos_max += s.max_points;
        } else {
            rs.neg_pts += s.points;
            rs.neg_max += s.max_points;
        }
    }
    rs.questions = std::move(qs);
    return rs;
}

namespace detail {

inline JudgeVerdict safe_judge(const Judge& judge, const std::string& description, const BenchQuestion& q) {
    try {
        auto v = judge.judge(description, q);
        v.question_id = q.id;
        if (v.chosen_label && !q.option(*v.chosen_label)) {
            v.raw_response += " [label " + *v.chosen_label + " not among options]";
            v.chosen_label.reset();
        }
        return v;
    } catch (const JudgeFailure& e) {
        return JudgeVerdict{q.id, std::nullopt, std::string("judge failure: ") + e.what(), 0};
    }
}

}  // namespace detail

/// Judges every question of one region, recognition question first.
inline RegionScore score_region(const std::string& description, const BenchRegion& region, const Judge& judge) {
    std::vector<JudgeVerdict> verdicts(region.questions.size());
    std::vector<std::size_t> order(region.questions.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_partition(order.begin(), order.end(), [&](std::size_t i) { return region.questions[i].is_recognition; });
    for (auto i : order) verdicts[i] = detail::safe_judge(judge, description, region.questions[i]);
    return score_verdicts(region, verdicts);
}

inline double percent(double pts, double max) { return max > 0.0 ? 100.0 * pts / max : 0.0; }

/// Scores every region. Questions are judged on a pool of `workers` threads;
/// results are merged by (region_id, question id) so the report does not
/// depend on pool width or region order.
inline ScoreReport score_run(const std::map<std::string, std::string>& predictions, const std::vector<BenchRegion>& bench,
                             const Judge& judge, std::size_t workers = 1) {
    ScoreReport rep;
    rep.judge = judge.name();
    rep.prompt_version = judge.prompt_version();

    std::vector<const BenchRegion*> regions;
    for (const auto& r : bench) regions.push_back(&r);
    std::sort(regions.begin(), regions.end(),
              [](const BenchRegion* a, const BenchRegion* b) { return a->region_id < b->region_id; });

    std::vector<std::string> descriptions(regions.size());
    std::vector<bool> missing(regions.size(), false);
    struct Task {
        std::size_t region;
        std::size_t question;
    };
    std::vector<Task> tasks;
    for (std::size_t r = 0; r < regions.size(); ++r) {
        if (auto it = predictions.find(regions[r]->region_id); it != predictions.end()) {
            descriptions[r] = it->second;
        } else {
            missing[r] = true;
            rep.log.push_back("region " + regions[r]->region_id + ": no prediction, scored as empty description");
        }
        for (std::size_t q = 0; q < regions[r]->questions.size(); ++q) tasks.push_back({r, q});
    }
    // recognition questions are dispatched first
    std::stable_partition(tasks.begin(), tasks.end(),
                          [&](const Task& t) { return regions[t.region]->questions[t.question].is_recognition; });

    std::vector<std::vector<JudgeVerdict>> verdicts(regions.size());
    for (std::size_t r = 0; r < regions.size(); ++r) verdicts[r].resize(regions[r]->questions.size());
    parallel_for(tasks.size(), workers, [&](std::size_t i) {
        const auto& t = tasks[i];
        verdicts[t.region][t.question] =
            detail::safe_judge(judge, descriptions[t.region], regions[t.region]->questions[t.question]);
    });

    for (std::size_t r = 0; r < regions.size(); ++r) {
        auto rs = score_verdicts(*regions[r], verdicts[r]);
        rs.description_missing = missing[r];
        std::sort(rs.questions.begin(), rs.questions.end(),
                  [](const QuestionScore& a, const QuestionScore& b) { return a.question_id < b.question_id; });
        for (const auto& q : rs.questions)
            if (!q.label) rep.log.push_back("question " + q.question_id + ": unanswered (" + q.raw_response + ")");
        rep.pos_pts += rs.pos_pts;
        rep.pos_max += rs.pos_max;
        rep.neg_pts += rs.neg_pts;
        rep.neg_max += rs.neg_max;
        rep.regions.push_back(std::move(rs));
    }
    if (rep.pos_max == 0.0) rep.log.push_back("no positive questions; pos_pct reported as 0");
    if (rep.neg_max == 0.0) rep.log.push_back("no negative questions; neg_pct reported as 0");
    rep.pos_pct = percent(rep.pos_pts, rep.pos_max);
    rep.neg_pct = percent(rep.neg_pts, rep.neg_max);
    rep.avg_pct = (rep.pos_pct + rep.neg_pct) / 2.0;
    return rep;
}

// --- report output -------------------------------------------------------------

inline nlohmann::json report_to_json(const ScoreReport& rep) {
    nlohmann::json regions = nlohmann::json::array();
    for (const auto& r : rep.regions) {
        nlohmann::json qs = nlohmann::json::array();
        for (const auto& q : r.questions)
            qs.push_back({{"question_id", q.question_id},
                          {"kind", to_string(q.kind)},
                          {"is_recognition", q.is_recognition},
                          {"label", q.label ? nlohmann::json(*q.label) : nlohmann::json(nullptr)},
                          {"raw_points", q.raw_points},
                          {"points", q.points},
                          {"max_points", q.max_points},
                          {"gated", q.gated},
                          {"attempts", q.attempts},
                          {"raw_response", q.raw_response}});
        regions.push_back({{"region_id", r.region_id},
                           {"pos_pts", r.pos_pts},
                           {"pos_max", r.pos_max},
                           {"neg_pts", r.neg_pts},
                           {"neg_max", r.neg_max},
                           {"recognition_ok", r.recognition_ok},
                           {"has_recognition", r.has_recognition},
                           {"description_missing", r.description_missing},
                           {"questions", std::move(qs)}});
    }
    return {{"judge", rep.judge},
            {"prompt_version", rep.prompt_version},
            {"pos_pct", rep.pos_pct},
            {"neg_pct", rep.neg_pct},
            {"avg_pct", rep.avg_pct},
            {"totals", {{"pos_pts", rep.pos_pts}, {"pos_max", rep.pos_max}, {"neg_pts", rep.neg_pts}, {"neg_max", rep.neg_max}}},
            {"regions", std::move(regions)},
            {"log", rep.log}};
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

/// Flat per-question table: region_id,question_id,kind,label,points
inline std::string report_to_csv(const ScoreReport& rep) {
    std::ostringstream out;
    out << "region_id,question_id,kind,label,points\n";
    for (const auto& r : rep.regions)
        for (const auto& q : r.questions) {
            char pts[32];
            std::snprintf(pts, sizeof pts, "%g", q.points);
            out << csv_field(r.region_id) << ',' << csv_field(q.question_id) << ','
                << (q.is_recognition ? "recognition" : to_string(q.kind)) << ',' << csv_field(q.label.value_or(""))
                << ',' << pts << '\n';
        }
    return out.str();
}

/// Writes via a sibling temp file and rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

}  // namespace damkit::bench
