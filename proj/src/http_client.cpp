#include "latent_align/http_client.hpp"

#include <regex>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "latent_align/error.hpp"

namespace latent_align {

HttpEndpoint parse_endpoint(const std::string & url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) {
        throw config_error("malformed endpoint URL '" + url + "'");
    }
    return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

nlohmann::json http_post_json(const std::string & url, const nlohmann::json & body, std::chrono::milliseconds timeout,
                              const std::map<std::string, std::string> & headers) {
    const auto ep = parse_endpoint(url);
    httplib::Client client(ep.base);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    httplib::Headers hs;
    for (const auto & [k, v] : headers) hs.emplace(k, v);
    auto res = client.Post(ep.path, hs, body.dump(), "application/json");
    if (!res) {
        throw transport_error("POST " + url + " failed: " + httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
        throw backend_error("POST " + url + " returned HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
        return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception & e) {
        throw backend_error("POST " + url + " returned invalid JSON: " + e.what());
    }
}

}  // namespace latent_align
