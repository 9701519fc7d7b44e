#include <chrono>
#include <cstdlib>
#include <thread>

#include "fewshot/contextgen.hpp"
#include "httplib.h"
#include "json.hpp"

namespace fewshot {

namespace {

// Splits "http://host:port/path" into base and path for httplib.
std::pair<std::string, std::string> split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ContractError("endpoint url missing scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::vector<std::string> HttpLMClient::generate(const GenerationRequest& req) {
    req.validate();
    auto [base, path] = split_url(cfg_.endpoint_url);

    nlohmann::json body;
    body["prompt"] = req.prompt;
    body["temperature"] = req.temperature;
    body["max_new_tokens"] = req.max_new_tokens;
    body["num_samples"] = req.num_samples;

    httplib::Headers headers;
    if (const char* tok = std::getenv(cfg_.auth_token_env.c_str()); tok && *tok)
        headers. emplace("Authorization", std::string("Bearer ") + tok);

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(100 * (1 << (attempt - 1))));
        httplib::Client cli(base);
        cli.set_connection_timeout(cfg_.timeout_seconds);
        cli.set_read_timeout(cfg_.timeout_seconds);
        auto res = cli.Post(path, headers, body.dump(), "application/json");
        if (!res) {
            last_error = "connection failed";
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("samples"))
            throw TransportError("generation endpoint returned malformed body");
        std::vector<std::string> out;
        for (const auto& s : j["samples"]) out.push_back(s.get<std::string>());
        return out;
    }
    throw TransportError("generation endpoint unreachable after " +
                         std::to_string(cfg_.max_retries + 1) + " attempts: " + last_error);
}

}  // namespace fewshot
