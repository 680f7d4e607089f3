#pragma once

// httplib-backed transport for the LLM judge. Define CPPHTTPLIB_OPENSSL_SUPPORT
// (and link OpenSSL) before including to reach https endpoints.

#include <cstdlib>
#include <memory>
#include <string>

#include <httplib.h>

#include "damkit/bench.hpp"

namespace damkit::bench {

inline constexpr const char* kJudgeKeyEnv = "DAMKIT_JUDGE_KEY";

class HttplibTransport final : public JudgeTransport {
public:
    /// `url` is the full endpoint, e.g. http://localhost:8000/v1/chat/completions
    HttplibTransport(std::string url, std::string api_key, int timeout_s = 60) : key_(std::move(api_key)), timeout_s_(timeout_s) {
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) throw Error("judge url needs a scheme: " + url);
        const auto path_start = url.find('/', scheme_end + 3);
        base_ = url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    }

    HttpReply post(const std::string& json_body) const override {
        httplib::Client cli(base_);
        cli.set_connection_timeout(timeout_s_);
        cli.set_read_timeout(timeout_s_);
        httplib::Headers headers;
        if (!key_.empty()) headers.emplace("Authorization", "Bearer " + key_);
        auto res = cli.Post(path_, headers, json_body, "application/json");
        if (!res) return {0, {}, httplib::to_string(res.error())};
        return {res->status, res->body, {}};
    }

private:
    std::string base_;
    std::string path_;
    std::string key_;
    int timeout_s_;
};

inline std::string judge_key_from_env() {
    const char* k = std::getenv(kJudgeKeyEnv);
    return k ? std::string(k) : std::string();
}

}  // namespace damkit::bench
