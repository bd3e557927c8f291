#pragma once

#include <chrono>
#include <map>
#include <string>

#include <json.hpp>

namespace latent_align {

struct HttpEndpoint {
    std::string base;  // scheme://host[:port]
    std::string path;  // begins with '/'
};

// Splits "http://host:port/v1/chat" into base and path. Throws config_error on malformed URLs.
HttpEndpoint parse_endpoint(const std::string & url);

// POSTs a JSON body and parses a JSON reply. Connection failures raise transport_error;
// non-2xx replies raise backend_error carrying the status and body.
nlohmann::json http_post_json(const std::string & url, const nlohmann::json & body, std::chrono::milliseconds timeout,
                              const std::map<std::string, std::string> & headers = {});

}  // namespace latent_align
