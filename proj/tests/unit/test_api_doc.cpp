#include <doctest.h>
#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "fixtures.hpp"
#include "qkdnet/northbound.hpp"

using namespace qkdnet;

namespace {

struct Exchange {
  std::string method;
  std::string target;
  httplib::Headers headers;
  std::string body;
  int status = 0;
  std::string response;
};

// Pulls every ```transcript block out of the API document.
std::vector<Exchange> read_doc(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::vector<Exchange> out;
  bool inside = false;
  for (std::string line; std::getline(in, line);) {
    if (line == "```transcript") {
      inside = true;
      out.emplace_back();
      continue;
    }
    if (inside && line == "```") {
      inside = false;
      continue;
    }
    if (!inside) continue;
    auto& ex = out.back();
    if (line.starts_with(">>> ")) {
      const auto text = line.substr(4);
      if (ex.method.empty()) {
        const auto sp = text.find(' ');
        ex.method = text.substr(0, sp);
        ex.target = text.substr(sp + 1);
      } else if (text.starts_with("{")) {
        ex.body = text;
      } else {
        const auto colon = text.find(": ");
        ex.headers.emplace(text.substr(0, colon), text.substr(colon + 2));
      }
    } else if (line.starts_with("<<< ")) {
      const auto text = line.substr(4);
      if (ex.status == 0) {
        ex.status = std::stoi(text);
      } else {
        ex.response = text;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("API document transcripts replay byte for byte") {
  const auto doc = read_doc(std::string(QKDNET_DOCS_DIR) + "/northbound-api.md");
  REQUIRE(doc.size() >= 10);

  // Same setup as `qkdnet serve --seed 0 --clock on-demand` on the bundled scenario.
  sim::Simulation sim(qkdnet::testing::bundled_model(), sim::SimConfig{0});
  northbound::ServiceConfig config;
  northbound::KeyService service(sim, config, false);
  northbound::HttpServer server(service);
  const int port = server.bind("127.0.0.1", 0);
  std::thread t([&] { server.listen(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const bool print = std::getenv("QKDNET_PRINT_TRANSCRIPT") != nullptr;
  for (const auto& ex : doc) {
    httplib::Result res = ex.method == "GET"
                              ? client.Get(ex.target, ex.headers)
                              : client.Post(ex.target, ex.headers, ex.body, "application/json");
    REQUIRE(res);
    if (print) {
      std::cout << ">>> " << ex.method << ' ' << ex.target << '\n';
      for (const auto& [k, v] : ex.headers) std::cout << ">>> " << k << ": " << v << '\n';
      if (!ex.body.empty()) std::cout << ">>> " << ex.body << '\n';
      std::cout << "<<< " << res->status << "\n<<< " << res->body << "\n\n";
    }
    CHECK_MESSAGE(res->status == ex.status, ex.method, " ", ex.target);
    CHECK_MESSAGE(res->body == ex.response, ex.method, " ", ex.target);
    CHECK(res->get_header_value("Content-Type") == "application/json");
  }
  server.stop();
  t.join();
}
