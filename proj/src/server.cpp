#include "meshsplat/server.hpp"

#include "meshsplat/error.hpp"
#include "meshsplat/io.hpp"
#include "meshsplat/viewer_bundle.hpp"

#include <httplib.h>

#include <fstream>
#include <sstream>

namespace meshsplat {

namespace {

HttpResponse error_response(int status, const std::string& message) {
  return {status, "application/json", nlohmann::json{{"error", message}}.dump()};
}

std::string content_type_for(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".json") return "application/json";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

}  // namespace

struct BundleServer::Impl {
  httplib::Server http;
};

BundleServer::BundleServer(std::filesystem::path bundle_dir)
    : dir_(std::move(bundle_dir)), impl_(std::make_unique<Impl>()) {
  const nlohmann::json m = load_bundle_manifest(dir_);
  manifest_text_ = m.dump(2);
  mesh_ = load_mesh(dir_ / m.at("mesh").at("file").get<std::string>());

  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body, r.content_type);
  };
  impl_->http.Get("/manifest", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, manifest());
  });
  impl_->http.Get(R"(/assets/(.+))", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, asset(req.matches[1]));
  });
  impl_->http.Post("/pose", [this, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, pose(req.body));
    if (req.has_header("X-Pose-Sequence")) res.set_header("X-Pose-Sequence", req.get_header_value("X-Pose-Sequence"));
  });
  impl_->http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type, X-Pose-Sequence");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
}

BundleServer::~BundleServer() { stop(); }

HttpResponse BundleServer::manifest() const { return {200, "application/json", manifest_text_}; }

HttpResponse BundleServer::asset(const std::string& relative_path) const {
  const std::filesystem::path rel(relative_path);
  if (rel.empty() || rel.is_absolute()) return error_response(400, "invalid asset path");
  for (const auto& part : rel) {
    if (part == "..") return error_response(400, "invalid asset path");
  }
  const std::filesystem::path full = dir_ / rel;
  std::error_code ec;
  if (!std::filesystem::is_regular_file(full, ec)) return error_response(404, "no asset '" + relative_path + "'");
  std::ifstream in(full, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return {200, content_type_for(full), os.str()};
}

HttpResponse BundleServer::pose(const std::string& body) const {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, std::string("body is not valid JSON: ") + e.what());
  }
  try {
    const PoseParams p = pose_from_json(j, mesh_);
    const std::vector<std::uint8_t> bytes = pose_frames_payload(mesh_, p);
    return {200, "application/octet-stream", std::string(bytes.begin(), bytes.end())};
  } catch (const Error& e) {
    return error_response(400, e.what());
  }
}

int BundleServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->http.bind_to_any_port(host);
    if (p < 0) throw Error(ErrorCode::Io, "cannot bind " + host);
    return p;
  }
  if (!impl_->http.bind_to_port(host, port)) throw Error(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void BundleServer::serve() {
  impl_->http.listen_after_bind();
}

void BundleServer::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace meshsplat
