#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <chop/error.hpp>

#include <atomic>
#include <chrono>
#include <string>
#include <thread>

namespace chop::http {

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
};

/// "scheme://host[:port]/path" split into what httplib needs.
struct Endpoint {
    std::string origin; ///< scheme://host[:port]
    std::string path;   ///< always starts with '/'

    static Endpoint parse(const std::string& url) {
        auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos)
            throw UsageError("endpoint URL needs a scheme: " + url);
        auto scheme = url.substr(0, scheme_end);
        if (scheme != "http" && scheme != "https")
            throw UsageError("unsupported endpoint scheme: " + scheme);
        auto path_start = url.find('/', scheme_end + 3);
        Endpoint e;
        e.origin = url.substr(0, path_start);
        e.path = path_start == std::string::npos ? "/" : url.substr(path_start);
        if (e.origin.size() <= scheme_end + 3)
            throw UsageError("endpoint URL has no host: " + url);
        return e;
    }
};

/// POST a JSON body, retrying transport failures and 5xx responses with
/// exponential backoff. 4xx responses fail immediately. `attempts` receives
/// the number of requests issued.
inline std::string post_json(const Endpoint& endpoint, const std::string& body, const httplib::Headers& headers,
                             const RetryPolicy& retry, std::chrono::seconds timeout, int* attempts = nullptr) {
    auto backoff = retry.initial_backoff;
    std::string last_error;
    int attempt = 0;
    for (; attempt < retry.max_attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(static_cast<long long>(backoff.count() * retry.multiplier));
        }
        httplib::Client client(endpoint.origin);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        auto res = client.Post(endpoint.path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (attempts)
            *attempts = attempt + 1;
        if (res->status < 200 || res->status >= 300)
            throw BackendError(endpoint.origin + endpoint.path + ": HTTP " + std::to_string(res->status) + ": " +
                               res->body.substr(0, 300));
        return res->body;
    }
    if (attempts)
        *attempts = attempt;
    throw BackendError(endpoint.origin + endpoint.path + ": giving up after " + std::to_string(attempt) +
                       " attempts: " + last_error);
}

} // namespace chop::http
