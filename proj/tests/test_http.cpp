#include <doctest.h>

#include <cstdlib>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "latent_align/alignment_scoring.hpp"
#include "latent_align/corruption_builder.hpp"
#include "latent_align/evaluator.hpp"
#include "latent_align/http_client.hpp"
#include "support.hpp"

using namespace latent_align;
using nlohmann::json;
using testsupport::error_kind_of;
using testsupport::TempDir;

namespace {

// In-process server standing in for the LLM, the remote encoder and the oracle.
class MockServer {
public:
    MockServer() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request & req, httplib::Response & res) {
            std::lock_guard lock(mu_);
            ++chat_calls;
            last_auth = req.get_header_value("Authorization");
            last_body = json::parse(req.body);
            json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", chat_reply}}}}}}};
            res.set_content(reply.dump(), "application/json");
        });
        server_.Post("/embed/text", [](const httplib::Request & req, httplib::Response & res) {
            const auto body = json::parse(req.body);
            const double x = body.at("text") == "up" ? 1.0 : 0.0;
            res.set_content(json{{"embedding", {x, 1.0 - x}}}.dump(), "application/json");
        });
        server_.Post("/embed/image", [this](const httplib::Request & req, httplib::Response & res) {
            const auto body = json::parse(req.body);
            {
                std::lock_guard lock(mu_);
                last_body = body;
            }
            res.set_content(json{{"embedding", {1.0, 0.0}}}.dump(), "application/json");
        });
        server_.Post("/score", [this](const httplib::Request & req, httplib::Response & res) {
            const auto body = json::parse(req.body);
            {
                std::lock_guard lock(mu_);
                last_body = body;
            }
            res.set_content(json{{"score", oracle_score}}.dump(), "application/json");
        });
        server_.Post("/fail", [](const httplib::Request &, httplib::Response & res) {
            res.status = 503;
            res.set_content("overloaded", "text/plain");
        });
        server_.Post("/garbage", [](const httplib::Request &, httplib::Response & res) {
            res.set_content("not json", "text/plain");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }

    std::string url(const std::string & path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

    std::string chat_reply = "three blue dogs on a beach";
    double oracle_score = 0.75;
    int chat_calls = 0;
    std::string last_auth;
    json last_body;

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::mutex mu_;
};

}  // namespace

TEST_CASE("endpoint parsing") {
    const auto ep = parse_endpoint("http://localhost:8080/v1/chat/completions");
    CHECK(ep.base == "http://localhost:8080");
    CHECK(ep.path == "/v1/chat/completions");
    CHECK(parse_endpoint("https://example.org").path == "/");
    CHECK(error_kind_of([] { parse_endpoint("localhost:8080/x"); }) == ErrorKind::config);
}

TEST_CASE("chat completion request shape and bearer header") {
    MockServer server;
    LlmConfig c;
    c.endpoint = server.url("/v1/chat/completions");
    c.api_key_env = "LATENT_ALIGN_TEST_KEY";
    c.temperature = 0.3;
    ::setenv("LATENT_ALIGN_TEST_KEY", "sekret", 1);
    HttpLlmClient client(c);
    const auto instruction = render_corruption_prompt(ErrorType::color, "three red dogs on a beach");
    CHECK(client.complete(instruction, 0) == "three blue dogs on a beach");
    CHECK(server.last_auth == "Bearer sekret");
    CHECK(server.last_body["model"] == "gemma-3-27b-it");
    CHECK(server.last_body["temperature"] == 0.3);
    CHECK(server.last_body["messages"][0]["role"] == "user");
    CHECK(server.last_body["messages"][0]["content"] == instruction);

    ::unsetenv("LATENT_ALIGN_TEST_KEY");
    client.complete(instruction, 1);
    CHECK(server.last_auth.empty());
}

TEST_CASE("recorded transcripts replay with the endpoint down") {
    TempDir dir;
    LlmConfig c;
    c.transcript_dir = dir / "cache";
    {
        MockServer server;
        c.endpoint = server.url("/v1/chat/completions");
        auto client = make_llm_client(c);
        CHECK(corrupt_prompt(*client, ErrorType::color, "three red dogs on a beach") == "three blue dogs on a beach");
        CHECK(corrupt_prompt(*client, ErrorType::color, "three red dogs on a beach") == "three blue dogs on a beach");
        CHECK(server.chat_calls == 1);
    }
    c.offline = true;
    auto replay = make_llm_client(c);
    CHECK(corrupt_prompt(*replay, ErrorType::color, "three red dogs on a beach") == "three blue dogs on a beach");
    c.offline = false;
    auto live = make_llm_client(c);
    CHECK(error_kind_of([&] { corrupt_prompt(*live, ErrorType::count, "three red dogs on a beach"); }) ==
          ErrorKind::transport);
}

TEST_CASE("remote encoder gateway") {
    MockServer server;
    const auto g = gateway_from_json({{"kind", "http"}, {"endpoint", server.url("")}, {"embed_dim", 2},
                                      {"input_size", 2}, {"checkpoint_tag", "remote"}});
    CHECK(g->checkpoint_tag() == "remote");
    CHECK_FALSE(g->thread_safe());
    RgbImage img;
    img.height = 3;
    img.width = 3;
    img.data.assign(27, 0.5f);
    const auto s = s_final(*g, img, "up");
    CHECK(s.value == doctest::Approx(1.0));
    CHECK(server.last_body["shape"] == json({3, 2, 2}));
    CHECK(server.last_body["pixels"].size() == 12);
    CHECK(error_kind_of([] { gateway_from_json({{"kind", "http"}, {"endpoint", "http://x"}}); }) == ErrorKind::config);
}

TEST_CASE("remote oracle") {
    MockServer server;
    HttpOracle oracle(server.url("/score"), "vqa-remote", std::chrono::milliseconds(5000), 2);
    RgbImage img;
    img.height = 1;
    img.width = 2;
    img.data.assign(6, 0.25f);
    CHECK(checked_oracle_score(oracle, img, "a cat") == 0.75);
    CHECK(server.last_body["prompt"] == "a cat");
    CHECK(server.last_body["shape"] == json({3, 1, 2}));
    server.oracle_score = 3.0;
    CHECK(error_kind_of([&] { checked_oracle_score(oracle, img, "a cat"); }) == ErrorKind::backend);
}

TEST_CASE("transport and backend failures are told apart") {
    MockServer server;
    const auto timeout = std::chrono::milliseconds(2000);
    CHECK(error_kind_of([&] { http_post_json(server.url("/fail"), json::object(), timeout); }) == ErrorKind::backend);
    CHECK(error_kind_of([&] { http_post_json(server.url("/garbage"), json::object(), timeout); }) ==
          ErrorKind::backend);
    CHECK(error_kind_of([&] { http_post_json("http://127.0.0.1:1/x", json::object(), timeout); }) ==
          ErrorKind::transport);
    LlmConfig c;
    c.endpoint = server.url("/garbage");
    HttpLlmClient client(c);
    CHECK(error_kind_of([&] { client.complete("x", 0); }) == ErrorKind::backend);
}
