#pragma once

#include <string>

// Eigen must precede httplib: <resolv.h> defines an `_res` macro that
// collides with Eigen's parameter names.
#include "lago/service/api.hpp"

#include <httplib.h>

namespace lago::service {

namespace detail {

inline Params query_params(const httplib::Request& req) {
  Params p;
  for (const auto& [k, v] : req.params) p[k] = v;  // last value wins
  return p;
}

inline void reply(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

inline int stage_of(const httplib::Request& req) {
  try {
    return std::stoi(req.matches[2].str());
  } catch (const std::exception&) {
    return -1;
  }
}

}  // namespace detail

/// Routes the steering API onto `server`.
inline void mount(httplib::Server& server, TrialService& svc) {
  using httplib::Request;
  using httplib::Response;
  const std::string id = "([A-Za-z0-9_-]+)";

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(/api/.*)", [](const Request&, Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  server.Get("/api/trials", [&svc](const Request&, Response& res) { detail::reply(res, svc.list()); });
  server.Post("/api/trials", [&svc](const Request& req, Response& res) { detail::reply(res, svc.create(req.body)); });
  server.Get("/api/trials/" + id, [&svc](const Request& req, Response& res) {
    detail::reply(res, svc.get(req.matches[1].str()));
  });
  server.Post("/api/trials/" + id + R"(/stages/(\d+)/rows)", [&svc](const Request& req, Response& res) {
    detail::reply(res, svc.append_rows(req.matches[1].str(), detail::stage_of(req), req.body));
  });
  server.Post("/api/trials/" + id + R"(/stages/(\d+)/lock)", [&svc](const Request& req, Response& res) {
    detail::reply(res, svc.lock(req.matches[1].str(), detail::stage_of(req)));
  });
  server.Get("/api/trials/" + id + "/fit", [&svc](const Request& req, Response& res) {
    detail::reply(res, svc.fit(req.matches[1].str(), detail::query_params(req)));
  });
  server.Get("/api/trials/" + id + "/recommend", [&svc](const Request& req, Response& res) {
    detail::reply(res, svc.recommend(req.matches[1].str(), detail::query_params(req)));
  });
  server.Get("/api/trials/" + id + "/confset", [&svc](const Request& req, Response& res) {
    detail::reply(res, svc.confset(req.matches[1].str(), detail::query_params(req)));
  });
  server.Get("/api/trials/" + id + "/bands", [&svc](const Request& req, Response& res) {
    detail::reply(res, svc.bands(req.matches[1].str(), detail::query_params(req)));
  });

  server.set_error_handler([](const Request&, Response& res) {
    if (res.body.empty()) {
      res.set_content(error_body(res.status, res.status == 404 ? "no such route" : "request failed").dump(),
                      "application/json");
    }
  });
  server.set_exception_handler([](const Request&, Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(error_body(500, msg).dump(), "application/json");
  });
}

}  // namespace lago::service
